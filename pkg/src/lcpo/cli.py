"""Command-line harness: generate data, train, verify theory, run ablations.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .config import ConfigError, RunConfig, load_config
from .data import PreferenceDataset, read_jsonl, write_jsonl
from .em import EmConfig, LcpoResult, metrics_csv, run_lcpo
from .losses import NumericOverflowError
from .score_model import PolicyParams
from .synth import generate

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# ablation grid: two one-dimensional sweeps around em.eta_init / em.alpha
DEFAULT_ETA_INITS = (0.99, 0.9, 0.75, 0.55)
DEFAULT_ALPHAS = (0.001, 0.01, 0.1, 0.5, 1.0)
ETA_THRESHOLD = 0.05


def _out_dir(args, config: RunConfig | None) -> Path:
    out = Path(args.out if args.out else (config.out_dir if config else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config", "required for this command")
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _dataset(args, config: RunConfig) -> PreferenceDataset:
    if args.dataset:
        try:
            return read_jsonl(args.dataset)
        except OSError as exc:
            raise ConfigError("--dataset", f"cannot read {args.dataset}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError("--dataset", str(exc)) from None
    return generate(config.generator_spec())


def train(config: RunConfig, dataset: PreferenceDataset, em: EmConfig | None = None) -> LcpoResult:
    if len(dataset) == 0:
        raise ConfigError("--dataset", "dataset is empty")
    if config.gen and "feature_dim" in config.gen and config.gen["feature_dim"] != dataset.features.dim:
        raise ConfigError(
            "gen.feature_dim", f"config says {config.gen['feature_dim']} but dataset has dimension {dataset.features.dim}"
        )
    k = max(dataset.n_annotators, config.gen.get("k_annotators", 1) if config.gen else 1)
    params = PolicyParams.zeros(dataset.features.dim)
    return run_lcpo(dataset.without_debug(), params, config.loss, em or config.em, config.optimizer(), n_annotators=k)


def cmd_generate(args) -> int:
    config = _config(args)
    spec = config.generator_spec()
    out = _out_dir(args, config)
    ds = generate(spec)
    chash = config.hash()
    content = write_jsonl(ds, out / "dataset.jsonl", extra={"config_hash": chash})
    counts = np.bincount(ds.annotator_id, minlength=spec.k_annotators)
    manifest = {
        "config_hash": chash,
        "config": config.to_dict(),
        "seed": config.seed,
        "generator_seed": spec.seed,
        "theta_star": spec.theta.tolist(),
        "n_pairs": len(ds),
        "annotator_frequencies": list(spec.annotator_frequencies),
        "annotator_counts": counts.tolist(),
        "eta_effective": ds.meta.get("eta_effective"),
        "content_sha256": content,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(ds)} pairs to {out / 'dataset.jsonl'} (sha256 {content[:12]})")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config(args)
    dataset = _dataset(args, config)
    out = _out_dir(args, config)
    result = train(config, dataset)
    chash = config.hash()
    (out / "metrics.csv").write_text(metrics_csv(result.metrics, chash))
    state = {
        "config_hash": chash,
        "config": config.to_dict(),
        "dataset": str(args.dataset) if args.dataset else None,
        "dataset_sha256": hashlib.sha256(Path(args.dataset).read_bytes()).hexdigest() if args.dataset else None,
        "theta": result.params.theta.tolist(),
        "theta_ref": result.params.theta_ref.tolist(),
        "eta": result.table.eta.tolist(),
        "annotator_counts": result.table.counts.tolist(),
    }
    _write_json(out / "final_state.json", state)
    print("final eta: " + ", ".join(f"{e:.4f}" for e in result.table.eta))
    return EXIT_OK


def cmd_verify(args) -> int:
    if not args.suite:
        raise ConfigError("--suite", f"required; one of {[s.value for s in experiments.Suite]}")
    try:
        suite = experiments.Suite(args.suite.upper())
    except ValueError:
        raise ConfigError("--suite", f"unknown suite {args.suite!r}") from None
    seed = experiments.SEED if args.seed is None else args.seed
    rep = experiments.run_suite(suite, seed=seed)
    rep["seed"] = seed
    rep["config_hash"] = hashlib.sha256(json.dumps({"suite": suite.value, "seed": seed}).encode()).hexdigest()
    out = _out_dir(args, None)
    _write_json(out / f"report_{suite.value}.json", rep)
    for c in rep["checks"]:
        print(experiments.Check(c["name"], c["measured"], c["threshold"], c["pass"]).line())
    return EXIT_OK if rep["pass"] else EXIT_VERIFY


def ablation_cells(config: RunConfig) -> list[tuple[float, float]]:
    grid = config.ablate
    if not grid:
        grid = {"eta_init": DEFAULT_ETA_INITS, "alpha": DEFAULT_ALPHAS}
    cells = [(e, config.em.alpha) for e in grid.get("eta_init", ())]
    cells += [(config.em.eta_init, a) for a in grid.get("alpha", ())]
    return cells


def epochs_to_threshold(result: LcpoResult, eta_true: np.ndarray, threshold: float = ETA_THRESHOLD):
    for m in result.metrics:
        if np.max(np.abs(np.asarray(m.eta) - eta_true)) < threshold:
            return m.epoch
    return None


def cmd_ablate(args) -> int:
    config = _config(args)
    cells = ablation_cells(config)
    if not cells:
        raise ConfigError("ablate", "grid is empty")
    dataset = _dataset(args, config)
    eta_true = np.asarray(config.generator_spec().eta_true)
    out = _out_dir(args, config)
    buf = io.StringIO()
    buf.write(f"# config_hash={config.hash()}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["eta_init", "alpha", "status", "final_eta_error", "final_loss", "epochs_to_threshold"])
    for eta_init, alpha in cells:
        try:
            em = dataclasses.replace(config.em, eta_init=eta_init, alpha=alpha)
            result = train(config, dataset, em)
            k = min(len(eta_true), result.table.k)
            err = float(np.max(np.abs(result.table.eta[:k] - eta_true[:k])))
            reach = epochs_to_threshold(result, eta_true[:k])
            row = [eta_init, alpha, "ok", repr(err), repr(result.metrics[-1].mean_loss), "" if reach is None else reach]
        except (ValueError, ArithmeticError) as exc:
            row = [eta_init, alpha, f"error: {exc}", "", "", ""]
        writer.writerow(row)
        print(",".join(str(v) for v in row))
    (out / "ablation.csv").write_text(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcpo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "generate": (cmd_generate, "write a synthetic preference dataset and manifest"),
        "train": (cmd_train, "run LCPO training; writes metrics.csv and final_state.json"),
        "verify": (cmd_verify, "run a verification suite; writes a JSON report"),
        "ablate": (cmd_ablate, "sweep eta_init and alpha; writes ablation.csv"),
    }
    for name, (fn, text) in commands.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--dataset", help="JSONL dataset (train/ablate generate from the config if omitted)")
        p.add_argument("--out", help="output directory (default: run.out_dir)")
        p.add_argument("--suite", help="verification suite name")
        p.add_argument("--seed", type=int, help="overrides run.seed")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, NumericOverflowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
