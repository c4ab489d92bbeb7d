"""Pairwise preference losses and the loss-to-probability mapping.

Every loss is written for the annotated orientation ``y_w > y_l``. The
probability that the annotated winner is the collectively preferred response
is obtained from any loss by contrasting it with the same loss evaluated on
the swapped pair::

    p(y_w >* y_l) = sigmoid(L(y_l > y_w) - L(y_w > y_l))

All functions accept scalars or numpy arrays (broadcast elementwise).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit


class NumericOverflowError(ArithmeticError):
    """A loss term evaluated to a non-finite value."""


class LossKind(str, enum.Enum):
    DPO = "DPO"
    IPO = "IPO"
    SIMPO = "SimPO"
    CPO = "CPO"

    @classmethod
    def parse(cls, name: str) -> "LossKind":
        for kind in cls:
            if kind.value.lower() == str(name).strip().lower():
                return kind
        raise ValueError(f"unknown loss kind {name!r}; expected one of {[k.value for k in cls]}")


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = LossKind.DPO
    beta: float = 1.0
    gamma: float = 0.5  # SimPO target margin; unused by the other kinds

    def __post_init__(self):
        if not isinstance(self.kind, LossKind):
            object.__setattr__(self, "kind", LossKind.parse(self.kind))
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not np.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite, got {self.gamma}")


@dataclass(frozen=True)
class ScorePair:
    """Policy and reference log-scores of an annotated (winner, loser) pair."""

    logp_w: float | np.ndarray
    logp_l: float | np.ndarray
    ref_logp_w: float | np.ndarray = 0.0
    ref_logp_l: float | np.ndarray = 0.0
    len_w: int | np.ndarray = 1
    len_l: int | np.ndarray = 1

    def __post_init__(self):
        for name in ("logp_w", "logp_l", "ref_logp_w", "ref_logp_l"):
            if not _all_finite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if (np.asarray(self.len_w) < 1).any() or (np.asarray(self.len_l) < 1).any():
            raise ValueError("response lengths must be >= 1")

    def swapped(self) -> "ScorePair":
        # fields were validated on construction; skip re-validation
        new = object.__new__(ScorePair)
        for mine, theirs in (("logp_w", "logp_l"), ("ref_logp_w", "ref_logp_l"), ("len_w", "len_l")):
            object.__setattr__(new, mine, getattr(self, theirs))
            object.__setattr__(new, theirs, getattr(self, mine))
        return new


def _all_finite(value) -> bool:
    return bool(np.isfinite(value).all())


def _finite(term: str, value):
    if not _all_finite(value):
        raise NumericOverflowError(f"numeric overflow in {term}")
    return value


def _reference_margin(s: ScorePair):
    margin = (np.asarray(s.logp_w, dtype=np.float64) - s.ref_logp_w) - (np.asarray(s.logp_l, dtype=np.float64) - s.ref_logp_l)
    return _finite("reference-adjusted margin", margin)


def loss_forward(spec: LossSpec, s: ScorePair):
    """Preference loss for the orientation stored in ``s`` (winner first)."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _loss_forward(spec, s)


def _loss_forward(spec: LossSpec, s: ScorePair):
    kind = spec.kind
    if kind is LossKind.DPO:
        margin = _finite("DPO logit", spec.beta * _reference_margin(s))
        return _finite("DPO loss", -log_expit(margin))
    if kind is LossKind.IPO:
        h = _reference_margin(s)
        return _finite("IPO squared margin", np.square(h - 1.0 / (2.0 * spec.beta)))
    if kind is LossKind.SIMPO:
        v = spec.beta * s.logp_w / s.len_w - spec.beta * s.logp_l / s.len_l - spec.gamma
        v = _finite("SimPO logit", v)
        return _finite("SimPO loss", -log_expit(v))
    if kind is LossKind.CPO:
        m = _finite("CPO score gap", s.logp_w - s.logp_l)
        # NLL of the winner under the policy normalised over the two candidates
        nll = -log_expit(m)
        return _finite("CPO loss", -log_expit(spec.beta * m) + nll)
    raise ValueError(f"unsupported loss kind {kind}")


def loss_reverse(spec: LossSpec, s: ScorePair):
    """Loss for the opposite orientation ``y_l > y_w``."""
    return loss_forward(spec, s.swapped())


def pref_log_odds(spec: LossSpec, s: ScorePair):
    """log p(w >* l) - log p(l >* w), i.e. L_reverse - L_forward."""
    return _finite("preference log-odds", loss_reverse(spec, s) - loss_forward(spec, s))


def pref_probability(spec: LossSpec, s: ScorePair):
    """Probability that the annotated winner is the collectively preferred response."""
    return expit(pref_log_odds(spec, s))


def bt_consistency(spec: LossSpec, s: ScorePair):
    """Distance between the generic DPO preference probability and Bradley-Terry."""
    if spec.kind is not LossKind.DPO:
        raise ValueError("bt_consistency is defined for DPO only")
    bt = expit(spec.beta * ((s.logp_w - s.ref_logp_w) - (s.logp_l - s.ref_logp_l)))
    return np.abs(pref_probability(spec, s) - bt)


def loss_gradient(spec: LossSpec, s: ScorePair):
    """Exact partials of ``loss_forward`` w.r.t. ``(logp_w, logp_l)``."""
    kind = spec.kind
    if kind is LossKind.DPO:
        margin = spec.beta * _reference_margin(s)
        g = -spec.beta * expit(-margin)
        return g, -g
    if kind is LossKind.IPO:
        g = 2.0 * (_reference_margin(s) - 1.0 / (2.0 * spec.beta))
        return g, -g
    if kind is LossKind.SIMPO:
        v = spec.beta * s.logp_w / s.len_w - spec.beta * s.logp_l / s.len_l - spec.gamma
        g = -expit(-v) * spec.beta
        return g / s.len_w, -g / s.len_l
    if kind is LossKind.CPO:
        m = s.logp_w - s.logp_l
        g = -spec.beta * expit(-spec.beta * m) - expit(-m)
        return g, -g
    raise ValueError(f"unsupported loss kind {kind}")


def pref_log_odds_gradient(spec: LossSpec, s: ScorePair):
    """Partials of ``pref_log_odds`` w.r.t. ``(logp_w, logp_l)``."""
    fw, fl = loss_gradient(spec, s)
    # gradient of the swapped loss comes back in swapped roles
    rl, rw = loss_gradient(spec, s.swapped())
    return rw - fw, rl - fl
