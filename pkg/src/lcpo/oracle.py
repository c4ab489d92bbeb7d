"""Brute-force reliability estimation used to cross-check the EM iteration.

Nothing here is imported from the EM or theory modules: the likelihood is
re-derived from the label mixture ``P(label) = p eta + (1 - p)(1 - eta)`` and
maximised by grid search plus golden-section refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar


@dataclass(frozen=True)
class GridSpec:
    lo: float = 1e-4
    hi: float = 1.0 - 1e-4
    n_points: int = 10_000

    def __post_init__(self):
        if not 0 < self.lo < self.hi < 1:
            raise ValueError("grid must satisfy 0 < lo < hi < 1")
        if self.n_points < 3:
            raise ValueError("grid needs at least 3 points")

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_points)


@dataclass(frozen=True)
class GridMleResult:
    eta_hat: float | None
    degenerate: bool = False


def marginal_loglik(p_star, eta: float) -> float:
    p = np.asarray(p_star, dtype=float)
    return math.fsum(np.log(p * eta + (1.0 - p) * (1.0 - eta)))


def _loglik_on_grid(p: np.ndarray, grid: np.ndarray, chunk: int = 2_000_000) -> np.ndarray:
    out = np.empty(grid.size)
    step = max(1, chunk // max(1, p.size))
    for start in range(0, grid.size, step):
        g = grid[start : start + step, None]
        out[start : start + step] = np.log(p * g + (1.0 - p) * (1.0 - g)).sum(axis=1)
    return out


def _is_unimodal(values: np.ndarray) -> bool:
    diffs = np.diff(values)
    noise = 1e-12 * max(1.0, float(np.max(np.abs(values))))
    signs = np.sign(np.where(np.abs(diffs) <= noise, 0.0, diffs))
    signs = signs[signs != 0]
    # rising then falling: once a fall is seen there must be no further rise
    falls = np.flatnonzero(signs < 0)
    return falls.size == 0 or not np.any(signs[falls[0] :] > 0)


def grid_mle_eta(p_star, grid: GridSpec = GridSpec()) -> GridMleResult:
    p = np.asarray(p_star, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("p_star must be nonempty")
    if np.all(np.abs(p - 0.5) <= 1e-12):
        return GridMleResult(None, degenerate=True)
    pts = grid.points()
    vals = _loglik_on_grid(p, pts)
    if not _is_unimodal(vals):
        raise ValueError("log-likelihood is not unimodal on the grid; refinement would be unsafe")
    i = int(np.argmax(vals))
    if i == 0 or i == pts.size - 1:
        return GridMleResult(float(pts[i]))
    res = minimize_scalar(
        lambda e: -marginal_loglik(p, e),
        bracket=(pts[i - 1], pts[i], pts[i + 1]),
        method="golden",
        tol=1e-8,
    )
    return GridMleResult(float(res.x))
