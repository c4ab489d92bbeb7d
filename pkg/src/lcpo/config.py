"""Run configuration: flat ``section.key = value`` files.

Example::

    # two annotators, DPO
    gen.n_pairs = 1000
    gen.k_annotators = 2
    gen.eta_true = 0.9, 0.7
    loss.kind = DPO
    em.alpha = 0.1
    opt.epochs = 20
    run.seed = 7

Lists are comma separated. Lines starting with ``#`` are comments. Every
random stream is derived from ``run.seed``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .em import EmConfig, UpdateMode
from .losses import LossKind, LossSpec
from .score_model import OptimizerConfig
from .synth import GeneratorSpec, PStarLaw


class ConfigError(ValueError):
    """Invalid or incomplete configuration; the message names the field."""

    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


GEN_KEYS = {
    "n_pairs": int,
    "eta_true": _floats,
    "k_annotators": int,
    "annotator_frequencies": _floats,
    "feature_dim": int,
    "p_star_law": lambda s: PStarLaw(s.strip().upper()),
    "theta_star": _floats,
    "theta_scale": float,
    "beta": float,
    "beta_a": float,
    "beta_b": float,
    "max_length": int,
}
GEN_REQUIRED = ("n_pairs", "eta_true")
LOSS_KEYS = {"kind": LossKind.parse, "beta": float, "gamma": float}
EM_KEYS = {"eta_init": float, "alpha": float, "update_mode": lambda s: UpdateMode(s.strip().upper()), "unit_weights": _bool}
OPT_KEYS = {"learning_rate": float, "epochs": int, "batch_size": int, "momentum": float, "schedule": lambda s: s.strip().lower()}
RUN_KEYS = {"name": str.strip, "out_dir": str.strip, "seed": int}
ABLATE_KEYS = {"eta_init": _floats, "alpha": _floats}

SECTIONS = {"gen": GEN_KEYS, "loss": LOSS_KEYS, "em": EM_KEYS, "opt": OPT_KEYS, "run": RUN_KEYS, "ablate": ABLATE_KEYS}


def derive_seed(seed: int, stream: int) -> int:
    """Independent 64-bit seed for sub-stream ``stream`` of the run seed."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1, np.uint64)[0])


@dataclass
class RunConfig:
    gen: dict | None = None  # GeneratorSpec fields except the seed
    loss: LossSpec = field(default_factory=LossSpec)
    em: EmConfig = field(default_factory=EmConfig)
    opt: dict = field(default_factory=dict)  # OptimizerConfig fields except the seed
    ablate: dict = field(default_factory=dict)
    name: str = "lcpo"
    out_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("run.seed", "must be an unsigned 64-bit integer")
        # build once so invalid values surface at load time
        if self.gen is not None:
            self.generator_spec()
        self.optimizer()

    def generator_spec(self) -> GeneratorSpec:
        if self.gen is None:
            raise ConfigError("gen", "no generator settings (gen.n_pairs, gen.eta_true) in config")
        for key in GEN_REQUIRED:
            if key not in self.gen:
                raise ConfigError(f"gen.{key}", "missing required key")
        try:
            return GeneratorSpec(seed=derive_seed(self.seed, 0), **self.gen)
        except ValueError as exc:
            raise ConfigError("gen", str(exc)) from None

    def optimizer(self) -> OptimizerConfig:
        try:
            return OptimizerConfig(seed=derive_seed(self.seed, 1), **self.opt)
        except ValueError as exc:
            raise ConfigError("opt", str(exc)) from None

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict:
        def plain(obj):
            if isinstance(obj, dict):
                return {k: plain(v) for k, v in obj.items()}
            if isinstance(obj, (tuple, list)):
                return [plain(v) for v in obj]
            if isinstance(obj, (LossKind, UpdateMode, PStarLaw)):
                return obj.value
            return obj

        return plain(
            {
                "gen": self.gen,
                "loss": dataclasses.asdict(self.loss),
                "em": dataclasses.asdict(self.em),
                "opt": self.opt,
                "ablate": self.ablate,
                "run": {"name": self.name, "out_dir": self.out_dir, "seed": self.seed},
            }
        )

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError("config", f"cannot parse: {exc}") from None
    values: dict[str, dict] = {name: {} for name in SECTIONS}
    for key, raw in parser["config"].items():
        section, _, name = key.partition(".")
        if section not in SECTIONS or name not in SECTIONS[section]:
            raise ConfigError(key, "unknown key")
        try:
            values[section][name] = SECTIONS[section][name](raw)
        except ValueError as exc:
            raise ConfigError(key, f"bad value {raw!r} ({exc})") from None
    try:
        loss = LossSpec(**values["loss"])
    except ValueError as exc:
        raise ConfigError("loss", str(exc)) from None
    try:
        em = EmConfig(**values["em"])
    except ValueError as exc:
        raise ConfigError("em", str(exc)) from None
    return RunConfig(
        gen=values["gen"] or None,
        loss=loss,
        em=em,
        opt=values["opt"],
        ablate=values["ablate"],
        **values["run"],
    )


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
