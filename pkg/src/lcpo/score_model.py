"""Linear log-score policy with a frozen reference.

``log pi(y|x) = theta . phi(x, y)`` and ``log pi_ref(y|x) = theta_ref . phi(x, y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import ScorePair


@dataclass
class Features:
    """Feature vectors of the annotated winner and loser, row per pair."""

    phi_w: np.ndarray
    phi_l: np.ndarray
    len_w: np.ndarray
    len_l: np.ndarray

    def __post_init__(self):
        self.phi_w = np.atleast_2d(np.asarray(self.phi_w, dtype=float))
        self.phi_l = np.atleast_2d(np.asarray(self.phi_l, dtype=float))
        n = self.phi_w.shape[0]
        self.len_w = np.broadcast_to(np.asarray(self.len_w, dtype=np.int64), (n,)).copy()
        self.len_l = np.broadcast_to(np.asarray(self.len_l, dtype=np.int64), (n,)).copy()
        if self.phi_w.shape != self.phi_l.shape:
            raise ValueError(f"phi_w {self.phi_w.shape} and phi_l {self.phi_l.shape} differ")
        if not (np.isfinite(self.phi_w).all() and np.isfinite(self.phi_l).all()):
            raise ValueError("features must be finite")
        if np.any(self.len_w < 1) or np.any(self.len_l < 1):
            raise ValueError("response lengths must be >= 1")

    def __len__(self):
        return self.phi_w.shape[0]

    @property
    def dim(self) -> int:
        return self.phi_w.shape[1]

    def take(self, idx) -> "Features":
        # rows of validated features need no re-validation
        new = object.__new__(Features)
        new.phi_w = self.phi_w[idx]
        new.phi_l = self.phi_l[idx]
        new.len_w = self.len_w[idx]
        new.len_l = self.len_l[idx]
        return new


@dataclass
class PolicyParams:
    theta: np.ndarray
    theta_ref: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float)
        ref = np.zeros_like(self.theta) if self.theta_ref is None else np.array(self.theta_ref, dtype=float)
        if ref.shape != self.theta.shape or self.theta.ndim != 1:
            raise ValueError("theta and theta_ref must be vectors of equal dimension")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(ref))):
            raise ValueError("parameters must be finite")
        ref.flags.writeable = False
        self.theta_ref = ref

    @classmethod
    def zeros(cls, dim: int) -> "PolicyParams":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "PolicyParams":
        # theta_ref is read-only, so sharing it is safe
        new = object.__new__(PolicyParams)
        new.theta = self.theta.copy()
        new.theta_ref = self.theta_ref
        return new


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.05
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    momentum: float = 0.0
    schedule: str = "constant"  # or "cosine": decays to zero over all epochs

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError("schedule must be 'constant' or 'cosine'")

    def rate_at(self, progress: float) -> float:
        """Learning rate after ``progress`` (fraction of all steps) of training."""
        if self.schedule == "cosine":
            return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * progress))
        return self.learning_rate


def _check_dim(params: PolicyParams, f: Features):
    if f.dim != params.dim:
        raise ValueError(f"feature dimension {f.dim} does not match parameter dimension {params.dim}")


def score_pair(params: PolicyParams, f: Features) -> ScorePair:
    _check_dim(params, f)
    return ScorePair(
        logp_w=f.phi_w @ params.theta,
        logp_l=f.phi_l @ params.theta,
        ref_logp_w=f.phi_w @ params.theta_ref,
        ref_logp_l=f.phi_l @ params.theta_ref,
        len_w=f.len_w,
        len_l=f.len_l,
    )


def accumulate_gradient(params: PolicyParams, f: Features, dL_dscores) -> np.ndarray:
    """Chain per-pair score partials through ``theta . phi``; summed over pairs."""
    _check_dim(params, f)
    dw, dl = (np.broadcast_to(np.asarray(g, dtype=float), (len(f),)) for g in dL_dscores)
    return dw @ f.phi_w + dl @ f.phi_l


def sgd_step(params: PolicyParams, grad: np.ndarray, config: OptimizerConfig) -> PolicyParams:
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    new = params.copy()
    new.theta -= config.learning_rate * grad
    return new


class MomentumSGD:
    """Scheduled heavy-ball SGD; plain ``sgd_step`` when momentum is 0 and the rate constant."""

    def __init__(self, config: OptimizerConfig, total_steps: int = 1):
        self.config = config
        self.total_steps = max(1, total_steps)
        self.t = 0
        self.velocity = None

    def step(self, params: PolicyParams, grad: np.ndarray) -> PolicyParams:
        config = self.config
        if config.schedule != "constant":
            config = replace(config, learning_rate=max(config.rate_at(self.t / self.total_steps), 1e-300))
        self.t += 1
        if config.momentum == 0:
            return sgd_step(params, grad, config)
        if self.velocity is None:
            self.velocity = np.zeros_like(params.theta)
        self.velocity = config.momentum * self.velocity + grad
        return sgd_step(params, self.velocity, config)
