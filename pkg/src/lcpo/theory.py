"""Full-batch reliability EM for one annotator under a calibrated model.

Given the calibrated probabilities ``p_i`` that each annotated winner is the
collective preference, the reliability update is the averaging map::

    T(eta) = mean_i  p_i eta / (p_i eta + (1 - p_i)(1 - eta))

and the observed-data log-likelihood is ``l(eta) = sum_i log d_i(eta)`` with
``d_i(eta) = (1 - p_i) + (2 p_i - 1) eta``. The two are linked by
``l'(eta) = N / (eta (1 - eta)) * (T(eta) - eta)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

EPS = 1e-6
DEGENERATE_ATOL = 1e-12


@dataclass
class CalibratedBatch:
    p_star: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p_star, dtype=float))
        if p.size == 0:
            raise ValueError("calibrated batch must be nonempty")
        if not np.all(np.isfinite(p)):
            raise ValueError("p_star must be finite")
        self.p_star = np.clip(p, EPS, 1.0 - EPS)

    def __len__(self):
        return self.p_star.size

    @property
    def degenerate(self) -> bool:
        return bool(np.all(np.abs(self.p_star - 0.5) <= DEGENERATE_ATOL))


def _as_batch(batch) -> CalibratedBatch:
    return batch if isinstance(batch, CalibratedBatch) else CalibratedBatch(batch)


def _check_eta(eta):
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")


def posterior(batch, eta: float) -> np.ndarray:
    p = _as_batch(batch).p_star
    num = p * eta
    return num / (num + (1.0 - p) * (1.0 - eta))


def operator_T(batch, eta: float) -> float:
    _check_eta(eta)
    return float(np.mean(posterior(batch, eta)))


def loglik_eta(batch, eta: float) -> float:
    _check_eta(eta)
    p = _as_batch(batch).p_star
    return float(np.sum(np.log((1.0 - p) + (2.0 * p - 1.0) * eta)))


def loglik_derivative(batch, eta: float) -> float:
    _check_eta(eta)
    p = _as_batch(batch).p_star
    return float(np.sum((2.0 * p - 1.0) / ((1.0 - p) + (2.0 * p - 1.0) * eta)))


def loglik_second_derivative(batch, eta: float) -> float:
    _check_eta(eta)
    p = _as_batch(batch).p_star
    b = 2.0 * p - 1.0
    return float(-np.sum(b**2 / ((1.0 - p) + b * eta) ** 2))


def loglik_increment(batch, eta_from: float, eta_to: float) -> float:
    """``l(eta_to) - l(eta_from)`` without cancellation between two large sums."""
    p = _as_batch(batch).p_star
    b = 2.0 * p - 1.0
    d_from = (1.0 - p) + b * eta_from
    return math.fsum(np.log1p(b * (eta_to - eta_from) / d_from))


def derivative_identity_residual(batch, eta: float) -> float:
    batch = _as_batch(batch)
    lhs = loglik_derivative(batch, eta)
    rhs = len(batch) / (eta * (1.0 - eta)) * (operator_T(batch, eta) - eta)
    return abs(lhs - rhs)


@dataclass
class FixedPointResult:
    eta_hat: float
    iterations: int
    trajectory: list[float] = field(default_factory=list)
    degenerate: bool = False
    converged: bool = True


def iterate_to_fixed_point(batch, eta0: float, tol: float = 1e-10, max_iters: int = 100_000) -> FixedPointResult:
    """Iterate ``eta <- T(eta)`` until successive iterates differ by less than ``tol``."""
    _check_eta(eta0)
    if tol <= 0:
        raise ValueError("tol must be > 0")
    batch = _as_batch(batch)
    if batch.degenerate:
        return FixedPointResult(eta0, 0, [eta0], degenerate=True)
    traj = [eta0]
    eta = eta0
    for it in range(1, max_iters + 1):
        nxt = operator_T(batch, eta)
        traj.append(nxt)
        if abs(nxt - eta) < tol:
            return FixedPointResult(nxt, it, traj)
        eta = nxt
    return FixedPointResult(eta, max_iters, traj, converged=False)


def ascent_violations(batch, trajectory) -> int:
    """Number of steps along ``trajectory`` where the log-likelihood decreased."""
    return sum(loglik_increment(batch, a, b) < 0 for a, b in zip(trajectory, trajectory[1:]))


def fixed_point_residual_at_truth(p_star, eta_true: float) -> float:
    """``|T(eta*) - eta*|`` on an empirical batch generated with reliability ``eta*``."""
    if eta_true >= 1:
        eta_true = 1.0 - EPS
    return abs(operator_T(p_star, eta_true) - eta_true)


def trajectory_csv(batch, result: FixedPointResult) -> str:
    batch = _as_batch(batch)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "eta_t", "loglik_t", "residual_t"])
    for t, eta in enumerate(result.trajectory):
        writer.writerow([t, repr(eta), repr(loglik_eta(batch, eta)), repr(abs(operator_T(batch, eta) - eta))])
    return buf.getvalue()
