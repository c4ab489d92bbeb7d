"""Verification suites and desk-scale reliability experiments.

Every suite returns a list of :class:`Check` records; a suite passes when all
of its checks do. Seeds are fixed so reports are comparable across machines.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import oracle, theory
from .data import concat
from .em import EmConfig, run_lcpo
from .losses import LossKind, LossSpec, pref_probability
from .score_model import OptimizerConfig, PolicyParams, score_pair
from .synth import GeneratorSpec, PStarLaw, effective_reliability, generate, inject_noise

SEED = 20240607
ETA_SWEEP = (0.95, 0.9, 0.8, 0.7, 0.6)
INITS = (0.05, 0.5, 0.95)

# desk-scale training setup for the mini-batch reliability experiments
TRAIN_OPT = OptimizerConfig(learning_rate=1.0, epochs=200, batch_size=256, schedule="cosine")
TRAIN_EM = EmConfig(eta_init=0.9, alpha=0.1)


class Suite(str, enum.Enum):
    FIXED_POINT = "FIXED_POINT"
    CONVERGENCE = "CONVERGENCE"
    IDENTITY = "IDENTITY"
    DEGENERATE = "DEGENERATE"
    RECOVERY_SINGLE = "RECOVERY_SINGLE"
    RECOVERY_TWO = "RECOVERY_TWO"


@dataclass
class Check:
    name: str
    measured: float
    threshold: float
    passed: bool

    @classmethod
    def at_most(cls, name: str, measured: float, threshold: float) -> "Check":
        return cls(name, float(measured), float(threshold), bool(measured <= threshold))

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: measured={self.measured:.3g} threshold={self.threshold:.3g}"


    def as_record(self) -> dict:
        return {"name": self.name, "measured": self.measured, "threshold": self.threshold, "pass": self.passed}


def report(suite: str, checks: list[Check]) -> dict:
    return {"suite": suite, "checks": [c.as_record() for c in checks], "pass": all(c.passed for c in checks)}


def calibrated_batch(eta: float, n: int, seed: int, law: PStarLaw = PStarLaw.FROM_THETA_STAR) -> np.ndarray:
    """Generative p* of the annotated orientation for one annotator of reliability ``eta``."""
    ds = generate(GeneratorSpec(n_pairs=n, eta_true=(eta,), p_star_law=law, seed=seed))
    return ds.debug.p_star


def fixed_point_suite(ns=(1_000, 10_000, 100_000), etas=(0.6, 0.75, 0.9), seed: int = SEED) -> list[Check]:
    checks = []
    for j, eta in enumerate(etas):
        for n in ns:
            p = calibrated_batch(eta, n, seed + 31 * j + n)
            res = theory.fixed_point_residual_at_truth(p, eta)
            bound = 3.0 * math.sqrt(eta * (1 - eta) / n)
            checks.append(Check.at_most(f"|T(eta*) - eta*| eta*={eta} N={n}", res, bound))
    return checks


def convergence_suite(etas=ETA_SWEEP, n: int = 10_000, seed: int = SEED) -> list[Check]:
    checks = []
    for j, eta in enumerate(etas):
        p = calibrated_batch(eta, n, seed + 101 * j)
        t0 = time.perf_counter()
        main = theory.iterate_to_fixed_point(p, 0.5)
        elapsed = time.perf_counter() - t0
        checks.append(Check.at_most(f"recovery |eta_hat - eta*| eta*={eta}", abs(main.eta_hat - eta), 0.02))
        checks.append(Check.at_most(f"runtime seconds eta*={eta}", elapsed, 5.0))
        runs = [theory.iterate_to_fixed_point(p, e0) for e0 in INITS]
        hats = [r.eta_hat for r in runs]
        checks.append(Check.at_most(f"init spread eta*={eta}", max(hats) - min(hats), 1e-8))
        violations = sum(theory.ascent_violations(p, r.trajectory) for r in runs)
        checks.append(Check.at_most(f"log-likelihood decreases eta*={eta}", violations, 0))
    return checks


def random_identity_instances(count: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(1, 500))
        p = rng.uniform(0.0, 1.0, n)
        eta = float(rng.uniform(0.01, 0.99))
        yield p, eta


def identity_suite(count: int = 1000, n_oracle: int = 100, seed: int = SEED) -> list[Check]:
    worst = max(theory.derivative_identity_residual(p, eta) for p, eta in random_identity_instances(count, seed))
    checks = [Check.at_most(f"max |l'(eta) - N/(eta(1-eta))(T - eta)| over {count}", worst, 1e-9)]
    checks.append(Check.at_most(f"max |grid MLE - EM fixed point| over {n_oracle}", oracle_gap(n_oracle, seed), 1e-6))
    return checks


def oracle_batches(count: int, seed: int):
    """Random non-degenerate batches from the generative process."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        eta = float(rng.uniform(0.55, 0.95))
        n = int(rng.integers(200, 2000))
        law = PStarLaw.FROM_THETA_STAR if i % 2 == 0 else PStarLaw.BETA_DISTRIBUTION
        yield calibrated_batch(eta, n, seed + 7919 * i, law)


def oracle_gap(count: int = 100, seed: int = SEED) -> float:
    worst = 0.0
    for p in oracle_batches(count, seed):
        em = theory.iterate_to_fixed_point(p, 0.5, tol=1e-13)
        mle = oracle.grid_mle_eta(p)
        worst = max(worst, abs(em.eta_hat - mle.eta_hat))
    return worst


def degenerate_suite(n: int = 1000, grid_points: int = 10_000) -> list[Check]:
    p = np.full(n, 0.5)
    grid = np.linspace(1e-4, 1 - 1e-4, grid_points)
    worst = max(abs(theory.operator_T(p, e) - e) for e in grid)
    em = theory.iterate_to_fixed_point(p, 0.3)
    mle = oracle.grid_mle_eta(p)
    ll = [theory.loglik_eta(p, e) for e in grid[:: grid_points // 100]]
    return [
        Check.at_most("max |T(eta) - eta| on grid", worst, 1e-12),
        Check.at_most("EM degenerate flag missing", float(not em.degenerate), 0),
        Check.at_most("oracle degenerate flag missing", float(not mle.degenerate), 0),
        Check.at_most("log-likelihood spread", max(ll) - min(ll), 1e-9 * n),
    ]


def train_reliability(dataset, n_annotators=None, em=TRAIN_EM, opt=TRAIN_OPT, spec=LossSpec()):
    """Run mini-batch EM from the zero policy and return the final reliabilities."""
    dim = dataset.features.dim
    res = run_lcpo(dataset.without_debug(), PolicyParams.zeros(dim), spec, em, opt, n_annotators=n_annotators)
    return res.table.eta, res


def recovery_single_suite(etas=ETA_SWEEP, n: int = 10_000, seed: int = SEED) -> list[Check]:
    checks = []
    for j, eta in enumerate(etas):
        ds = generate(GeneratorSpec(n_pairs=n, eta_true=(eta,), seed=seed + 211 * j))
        t0 = time.perf_counter()
        eta_hat, _ = train_reliability(ds)
        elapsed = time.perf_counter() - t0
        checks.append(Check.at_most(f"|eta_hat - eta*| eta*={eta}", abs(eta_hat[0] - eta), 0.05))
        checks.append(Check.at_most(f"runtime seconds eta*={eta}", elapsed, 60.0))
    return checks


def two_annotator_dataset(flip: float, n: int, seed: int, eta_base: float = 0.9):
    base = generate(GeneratorSpec(n_pairs=n, eta_true=(eta_base,), seed=seed))
    noisy = inject_noise(base, flip, seed + 1)
    return concat([base, noisy], annotator_ids=[0, 1])


def recovery_two_suite(flips=(0.0, 0.1, 0.2, 0.3), n: int = 10_000, seed: int = SEED, eta_base: float = 0.9) -> list[Check]:
    checks = []
    for j, f in enumerate(flips):
        ds = two_annotator_dataset(f, n, seed + 307 * j, eta_base)
        eta_hat, _ = train_reliability(ds, n_annotators=2)
        target = effective_reliability(eta_base, f)
        checks.append(Check.at_most(f"clean annotator |eta_hat_1 - {eta_base}| f={f}", abs(eta_hat[0] - eta_base), 0.03))
        checks.append(Check.at_most(f"noisy annotator |eta_hat_2 - {target:.2f}| f={f}", abs(eta_hat[1] - target), 0.05))
    return checks


def merged_annotator_check(n: int = 10_000, seed: int = SEED, etas=(0.9, 0.7), opt=TRAIN_OPT) -> Check:
    ds = generate(GeneratorSpec(n_pairs=n, k_annotators=2, eta_true=etas, annotator_frequencies=(0.5, 0.5), seed=seed))
    ds.annotator_id[:] = 0
    eta_hat, _ = train_reliability(ds, n_annotators=1, opt=opt)
    target = 0.5 * etas[0] + 0.5 * etas[1]
    return Check.at_most(f"merged annotators |eta_hat - {target}|", abs(eta_hat[0] - target), 0.03)


# held-out comparison of confidence-weighted vs unit-weight training
DENOISE_GEN = dict(n_pairs=2000, eta_true=(0.7,), feature_dim=32, theta_scale=8.0)
DENOISE_OPT = OptimizerConfig(learning_rate=0.5, epochs=100, batch_size=64, schedule="cosine")


def true_preference_accuracy(params: PolicyParams, spec: LossSpec, test) -> float:
    """Fraction of held-out pairs where the model prefers the collectively preferred response."""
    p = pref_probability(spec, score_pair(params, test.features))
    truth = test.debug.z == 1
    return float(np.mean((p > 0.5) == truth))


def denoising_gain(kind: LossKind, seeds=range(10), base_seed: int = SEED, n_test: int = 5000):
    """Mean accuracy of LCPO and unit-weight training over ``seeds`` (returns both)."""
    spec = LossSpec(kind)
    lcpo_acc, unit_acc = [], []
    for s in seeds:
        gen = GeneratorSpec(seed=base_seed + 1009 * s, **DENOISE_GEN)
        train = generate(gen)
        test = generate(
            GeneratorSpec(
                n_pairs=n_test,
                eta_true=(1.0,),
                feature_dim=gen.feature_dim,
                theta_star=tuple(gen.theta),
                seed=base_seed + 1009 * s + 1,
            )
        )
        opt = replace(DENOISE_OPT, seed=s)
        for unit, sink in ((False, lcpo_acc), (True, unit_acc)):
            res = run_lcpo(train.without_debug(), PolicyParams.zeros(gen.feature_dim), spec, EmConfig(unit_weights=unit), opt)
            sink.append(true_preference_accuracy(res.params, spec, test))
    return float(np.mean(lcpo_acc)), float(np.mean(unit_acc))


SUITES = {
    Suite.FIXED_POINT: fixed_point_suite,
    Suite.CONVERGENCE: convergence_suite,
    Suite.IDENTITY: identity_suite,
    Suite.DEGENERATE: degenerate_suite,
    Suite.RECOVERY_SINGLE: recovery_single_suite,
    Suite.RECOVERY_TWO: recovery_two_suite,
}


def run_suite(suite: Suite | str, seed: int = SEED) -> dict:
    suite = Suite(str(suite).upper()) if not isinstance(suite, Suite) else suite
    fn = SUITES[suite]
    checks = fn() if suite is Suite.DEGENERATE else fn(seed=seed)
    return report(suite.value, checks)
