"""Synthetic preference data with known collective preferences and annotator noise."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import GroundTruth, PreferenceDataset
from .score_model import Features


class PStarLaw(str, enum.Enum):
    FROM_THETA_STAR = "FROM_THETA_STAR"
    BETA_DISTRIBUTION = "BETA_DISTRIBUTION"


@dataclass
class GeneratorSpec:
    n_pairs: int
    eta_true: tuple[float, ...] = (1.0,)
    k_annotators: int = 1
    annotator_frequencies: tuple[float, ...] | None = None  # uniform when omitted
    feature_dim: int = 8
    p_star_law: PStarLaw = PStarLaw.FROM_THETA_STAR
    theta_star: tuple[float, ...] | None = None
    # when theta_star is omitted it is a random direction of this norm
    theta_scale: float = 3.0
    beta: float = 1.0  # scale inside sigmoid(beta * theta_star . (phi_a - phi_b))
    beta_a: float = 2.0
    beta_b: float = 2.0
    max_length: int = 1
    seed: int = 0
    _theta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.eta_true = tuple(float(e) for e in np.atleast_1d(self.eta_true))
        if self.annotator_frequencies is None:
            self.annotator_frequencies = (1.0 / self.k_annotators,) * self.k_annotators
        self.annotator_frequencies = tuple(float(p) for p in np.atleast_1d(self.annotator_frequencies))
        if not isinstance(self.p_star_law, PStarLaw):
            self.p_star_law = PStarLaw(str(self.p_star_law).upper())
        if self.n_pairs < 0:
            raise ValueError("n_pairs must be non-negative")
        if self.k_annotators < 1:
            raise ValueError("k_annotators must be >= 1")
        if len(self.eta_true) != self.k_annotators:
            raise ValueError(f"eta_true needs {self.k_annotators} entries, got {len(self.eta_true)}")
        if any(not 0 < e <= 1 for e in self.eta_true):
            raise ValueError("eta_true entries must lie in (0, 1]")
        if len(self.annotator_frequencies) != self.k_annotators:
            raise ValueError("annotator_frequencies must have one entry per annotator")
        if any(p < 0 for p in self.annotator_frequencies) or abs(sum(self.annotator_frequencies) - 1) > 1e-12:
            raise ValueError("annotator_frequencies must be a probability vector")
        if self.feature_dim < 1 or self.max_length < 1:
            raise ValueError("feature_dim and max_length must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.theta_star is not None:
            theta = np.asarray(self.theta_star, dtype=float)
            if theta.shape != (self.feature_dim,):
                raise ValueError("theta_star must have feature_dim entries")
            self.theta_star = tuple(theta.tolist())
        self._theta = None

    @property
    def theta(self) -> np.ndarray:
        """Generating parameter vector (drawn from the seed if not given)."""
        if self._theta is None:
            if self.theta_star is not None:
                self._theta = np.asarray(self.theta_star, dtype=float)
            else:
                rng = np.random.default_rng([self.seed, 0x7E7A])
                u = rng.standard_normal(self.feature_dim)
                self._theta = self.theta_scale * u / np.linalg.norm(u)
        return self._theta


def generate(spec: GeneratorSpec) -> PreferenceDataset:
    """Sample pairs, their collective preference, and one noisy label each.

    The annotated winner is stored first. ``debug.p_star`` is the probability
    that this stored orientation is the collective preference, and ``debug.z``
    records whether the annotator's label agreed with the sampled truth.
    """
    n, d = spec.n_pairs, spec.feature_dim
    rng = np.random.default_rng(spec.seed)
    annotator = rng.choice(spec.k_annotators, size=n, p=spec.annotator_frequencies)
    phi_a = rng.standard_normal((n, d))
    phi_b = rng.standard_normal((n, d))
    len_a = rng.integers(1, spec.max_length + 1, size=n)
    len_b = rng.integers(1, spec.max_length + 1, size=n)

    if spec.p_star_law is PStarLaw.FROM_THETA_STAR:
        q = expit(spec.beta * (phi_a - phi_b) @ spec.theta)
    else:
        q = rng.beta(spec.beta_a, spec.beta_b, size=n)

    a_truly_wins = rng.random(n) < q
    eta = np.asarray(spec.eta_true)[annotator]
    z = rng.random(n) < eta
    a_labelled_winner = np.where(z, a_truly_wins, ~a_truly_wins)

    sel = a_labelled_winner[:, None]
    features = Features(
        phi_w=np.where(sel, phi_a, phi_b),
        phi_l=np.where(sel, phi_b, phi_a),
        len_w=np.where(a_labelled_winner, len_a, len_b),
        len_l=np.where(a_labelled_winner, len_b, len_a),
    )
    debug = GroundTruth(
        p_star=np.where(a_labelled_winner, q, 1.0 - q),
        z=z.astype(np.int64),
        flipped=np.zeros(n, dtype=bool),
    )
    meta = {"eta_effective": list(spec.eta_true)}
    return PreferenceDataset(np.arange(n), annotator, features, debug, meta)


def inject_noise(dataset: PreferenceDataset, flip_fraction: float, seed: int) -> PreferenceDataset:
    """Independently swap each pair's stored orientation with probability ``flip_fraction``."""
    if not 0 <= flip_fraction <= 1:
        raise ValueError("flip_fraction must lie in [0, 1]")
    n = len(dataset)
    flip = np.random.default_rng(seed).random(n) < flip_fraction
    f = dataset.features
    sel = flip[:, None]
    features = Features(
        phi_w=np.where(sel, f.phi_l, f.phi_w),
        phi_l=np.where(sel, f.phi_w, f.phi_l),
        len_w=np.where(flip, f.len_l, f.len_w),
        len_l=np.where(flip, f.len_w, f.len_l),
    )
    debug = None
    if dataset.debug is not None:
        g = dataset.debug
        debug = GroundTruth(
            p_star=np.where(flip, 1.0 - g.p_star, g.p_star),
            z=np.where(flip, 1 - g.z, g.z),
            flipped=g.flipped ^ flip,
        )
    meta = dict(dataset.meta)
    if "eta_effective" in meta:
        meta["eta_effective"] = [effective_reliability(e, flip_fraction) for e in meta["eta_effective"]]
    return PreferenceDataset(dataset.ids.copy(), dataset.annotator_id.copy(), features, debug, meta)


def effective_reliability(eta: float, flip_fraction: float) -> float:
    return eta * (1 - flip_fraction) + (1 - eta) * flip_fraction


def split_by_annotator(dataset: PreferenceDataset) -> dict[int, PreferenceDataset]:
    """Partition by annotator id, preserving order within each group."""
    return {
        int(k): dataset.take(np.flatnonzero(dataset.annotator_id == k))
        for k in np.unique(dataset.annotator_id)
    }
