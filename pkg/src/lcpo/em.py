"""Latent-reliability EM training loop.

Each mini-batch runs an E-step (posterior probability that each label is
correct), a gradient step on the confidence-weighted loss, and a moving
average update of every annotator reliability seen in the batch.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .data import PreferenceDataset
from .losses import LossSpec, NumericOverflowError, loss_gradient, pref_log_odds, pref_log_odds_gradient, pref_probability
from .score_model import MomentumSGD, OptimizerConfig, PolicyParams, accumulate_gradient, score_pair

EPS = 1e-6


def clamp(p, eps: float = EPS):
    return np.clip(p, eps, 1.0 - eps)


class UpdateMode(str, enum.Enum):
    EMA_PER_BATCH = "EMA_PER_BATCH"
    CLOSED_FORM_PER_EPOCH = "CLOSED_FORM_PER_EPOCH"


@dataclass(frozen=True)
class EmConfig:
    eta_init: float = 0.9
    alpha: float = 0.1
    update_mode: UpdateMode = UpdateMode.EMA_PER_BATCH
    # w_i = 1 for every pair and reliabilities stay pinned: plain preference training
    unit_weights: bool = False

    def __post_init__(self):
        if not isinstance(self.update_mode, UpdateMode):
            object.__setattr__(self, "update_mode", UpdateMode(str(self.update_mode).upper()))
        if not 0.5 <= self.eta_init <= 1:
            raise ValueError("eta_init must lie in [0.5, 1]")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")


@dataclass
class AnnotatorTable:
    eta: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.eta = clamp(np.asarray(self.eta, dtype=float))
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.eta.ndim != 1 or len(self.eta) < 1 or self.counts.shape != self.eta.shape:
            raise ValueError("need one reliability and one count per annotator, K >= 1")

    @classmethod
    def for_dataset(cls, dataset: PreferenceDataset, eta_init: float, k: int | None = None) -> "AnnotatorTable":
        k = dataset.n_annotators if k is None else k
        counts = np.bincount(dataset.annotator_id, minlength=k)
        return cls(np.full(k, eta_init), counts)

    @property
    def k(self) -> int:
        return len(self.eta)

    def copy(self) -> "AnnotatorTable":
        return AnnotatorTable(self.eta.copy(), self.counts.copy())


@dataclass
class BatchWeights:
    w: np.ndarray
    ids: np.ndarray
    annotator: np.ndarray


def e_step_weight(p_star, eta):
    """Posterior probability that a label is correct given model and annotator."""
    p = clamp(p_star)
    eta = clamp(eta)
    num = p * eta
    return num / (num + (1.0 - p) * (1.0 - eta))


def batch_e_step(params: PolicyParams, pairs: PreferenceDataset, spec: LossSpec, table: AnnotatorTable) -> BatchWeights:
    if len(pairs) and (pairs.annotator_id.max() >= table.k or pairs.annotator_id.min() < 0):
        bad = pairs.annotator_id[(pairs.annotator_id >= table.k) | (pairs.annotator_id < 0)][0]
        raise KeyError(f"unknown annotator id {bad}")
    p = pref_probability(spec, score_pair(params, pairs.features))
    w = e_step_weight(p, table.eta[pairs.annotator_id])
    return BatchWeights(np.atleast_1d(w), pairs.ids, pairs.annotator_id)


def lcpo_loss(weights: BatchWeights, params: PolicyParams, pairs: PreferenceDataset, spec: LossSpec):
    """Confidence-weighted negative log-likelihood and its gradient over theta (sums)."""
    w = np.asarray(weights.w, dtype=float)
    if w.shape != (len(pairs),):
        raise ValueError("weights are not aligned with pairs")
    s = score_pair(params, pairs.features)
    d = pref_log_odds(spec, s)
    per_pair = -(w * log_expit(d) + (1.0 - w) * log_expit(-d))
    # d(loss)/d(log-odds) = sigmoid(d) - w, weights held fixed
    coef = expit(d) - w
    gw, gl = pref_log_odds_gradient(spec, s)
    grad = accumulate_gradient(params, pairs.features, (coef * gw, coef * gl))
    return float(np.sum(per_pair)), grad


def eta_closed_form(weights) -> float:
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise ValueError("annotator has no labels")
    return float(clamp(np.mean(w)))


def eta_ema_update(table: AnnotatorTable, k: int, batch_weights: BatchWeights, alpha: float) -> AnnotatorTable:
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    mine = batch_weights.w[batch_weights.annotator == k]
    new = table.copy()
    if mine.size:
        new.eta[k] = clamp((1.0 - alpha) * table.eta[k] + alpha * np.mean(mine))
    return new


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    batch: int  # batches processed so far
    mean_loss: float
    mean_w: float
    eta: tuple[float, ...]


@dataclass
class LcpoResult:
    params: PolicyParams
    table: AnnotatorTable
    metrics: list[EpochMetrics] = field(default_factory=list)
    theta_trajectory: list[np.ndarray] = field(default_factory=list)


def _batches(n: int, config: OptimizerConfig, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, config.batch_size):
        yield order[start : start + config.batch_size]


def run_lcpo(
    dataset: PreferenceDataset,
    params: PolicyParams,
    spec: LossSpec,
    em_config: EmConfig,
    opt_config: OptimizerConfig,
    *,
    n_annotators: int | None = None,
    train_policy: bool = True,
    record_theta: bool = False,
) -> LcpoResult:
    """Mini-batch EM training.

    Per batch, in order: E-step with the pre-update theta, gradient step on the
    batch-mean weighted loss, reliability update for annotators in the batch.
    With ``CLOSED_FORM_PER_EPOCH`` the reliabilities are instead reset to the
    mean confidence collected over the epoch. ``train_policy=False`` freezes
    theta, leaving only the reliability iteration.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    table = AnnotatorTable.for_dataset(dataset, em_config.eta_init, n_annotators)
    if em_config.unit_weights:
        table = AnnotatorTable(np.full(table.k, 1.0 - EPS), table.counts)
    rng = np.random.default_rng(opt_config.seed)
    optimizer = MomentumSGD(opt_config, opt_config.epochs * -(-n // opt_config.batch_size))
    params = params.copy()
    result = LcpoResult(params, table)
    n_batches = 0

    for epoch in range(1, opt_config.epochs + 1):
        epoch_w = np.empty(n)
        loss_sum = 0.0
        for idx in _batches(n, opt_config, rng):
            batch = dataset.take(idx)
            where = f"epoch {epoch}, batch {n_batches + 1}"
            try:
                if em_config.unit_weights:
                    weights = BatchWeights(np.ones(len(idx)), batch.ids, batch.annotator_id)
                else:
                    weights = batch_e_step(params, batch, spec, table)
                loss, grad = lcpo_loss(weights, params, batch, spec)
            except NumericOverflowError as exc:
                raise FloatingPointError(f"{exc} at {where}") from exc
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at {where}")
            epoch_w[idx] = weights.w
            loss_sum += loss
            if train_policy:
                params = optimizer.step(params, grad / len(idx))
            if record_theta:
                result.theta_trajectory.append(params.theta.copy())
            if not em_config.unit_weights and em_config.update_mode is UpdateMode.EMA_PER_BATCH:
                for k in np.unique(batch.annotator_id):
                    table = eta_ema_update(table, int(k), weights, em_config.alpha)
            n_batches += 1

        if not em_config.unit_weights and em_config.update_mode is UpdateMode.CLOSED_FORM_PER_EPOCH:
            table = table.copy()
            for k in range(table.k):
                mask = dataset.annotator_id == k
                if mask.any():
                    table.eta[k] = eta_closed_form(epoch_w[mask])

        result.metrics.append(
            EpochMetrics(
                epoch=epoch,
                batch=n_batches,
                mean_loss=loss_sum / n,
                mean_w=float(np.mean(epoch_w)),
                eta=tuple(float(e) for e in table.eta),
            )
        )

    result.params = params
    result.table = table
    return result


def train_plain(
    dataset: PreferenceDataset,
    params: PolicyParams,
    spec: LossSpec,
    opt_config: OptimizerConfig,
) -> list[np.ndarray]:
    """Standard preference training on the raw loss; returns theta after every batch.

    Shuffles with the same seed stream as ``run_lcpo`` so trajectories can be
    compared batch by batch.
    """
    n = len(dataset)
    rng = np.random.default_rng(opt_config.seed)
    optimizer = MomentumSGD(opt_config, opt_config.epochs * -(-n // opt_config.batch_size))
    trajectory = []
    for _ in range(opt_config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, opt_config.batch_size):
            idx = order[start : start + opt_config.batch_size]
            sub = dataset.features.take(idx)
            gw, gl = loss_gradient(spec, score_pair(params, sub))
            grad = np.broadcast_to(gw, (len(idx),)) @ sub.phi_w + np.broadcast_to(gl, (len(idx),)) @ sub.phi_l
            params = optimizer.step(params, grad / len(idx))
            trajectory.append(params.theta.copy())
    return trajectory


def metrics_csv(metrics: list[EpochMetrics], config_hash: str | None = None) -> str:
    buf = io.StringIO()
    if config_hash:
        buf.write(f"# config_hash={config_hash}\n")
    k = len(metrics[0].eta) if metrics else 0
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "batch", "mean_loss", "mean_w"] + [f"eta_{j + 1}" for j in range(k)])
    for m in metrics:
        writer.writerow([m.epoch, m.batch, repr(m.mean_loss), repr(m.mean_w)] + [repr(e) for e in m.eta])
    return buf.getvalue()
