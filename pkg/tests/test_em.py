import numpy as np
import pytest
from scipy.special import expit

from lcpo import theory
from lcpo.data import PreferenceDataset
from lcpo.em import (
    AnnotatorTable,
    BatchWeights,
    EmConfig,
    UpdateMode,
    batch_e_step,
    e_step_weight,
    eta_closed_form,
    eta_ema_update,
    lcpo_loss,
    metrics_csv,
    run_lcpo,
    train_plain,
)
from lcpo.losses import LossKind, LossSpec, loss_forward, pref_probability
from lcpo.score_model import Features, OptimizerConfig, PolicyParams, score_pair
from lcpo.synth import GeneratorSpec, generate

ALL_KINDS = list(LossKind)


def make_pairs(n=40, d=3, k=1, seed=0):
    rng = np.random.default_rng(seed)
    feats = Features(rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.integers(1, 4, n), rng.integers(1, 4, n))
    return PreferenceDataset(np.arange(n), rng.integers(0, k, n), feats)


def weights_for(pairs, w):
    return BatchWeights(np.asarray(w, dtype=float), pairs.ids, pairs.annotator_id)


# E-step


def test_e_step_examples():
    assert e_step_weight(0.5, 0.83) == pytest.approx(0.83, abs=1e-15)
    assert e_step_weight(0.27, 0.5) == pytest.approx(0.27, abs=1e-15)
    assert e_step_weight(0.9, 0.9) == pytest.approx(0.81 / 0.82, abs=1e-12)
    assert e_step_weight(0.9, 0.9) == pytest.approx(0.987805, abs=1e-6)


def test_e_step_complement_symmetry():
    rng = np.random.default_rng(1)
    p, eta = rng.uniform(0.01, 0.99, 1000), rng.uniform(0.01, 0.99, 1000)
    assert np.max(np.abs(e_step_weight(p, eta) + e_step_weight(1 - p, 1 - eta) - 1)) <= 1e-12


def test_e_step_monotone():
    grid = np.linspace(0.01, 0.99, 99)
    assert np.all(np.diff(e_step_weight(grid, 0.8)) > 0)
    assert np.all(np.diff(e_step_weight(0.7, np.linspace(0.51, 0.99, 49))) > 0)


def test_e_step_clamps_extremes():
    w = e_step_weight(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert np.all(np.isfinite(w)) and np.all((w > 0) & (w < 1))


def test_batch_e_step_uncertain_model_gives_eta():
    pairs = make_pairs()
    table = AnnotatorTable.for_dataset(pairs, 0.9)
    w = batch_e_step(PolicyParams.zeros(3), pairs, LossSpec(), table).w
    np.testing.assert_allclose(w, 0.9, atol=1e-15)


def test_batch_e_step_single_pair_example():
    pairs = PreferenceDataset([0], [0], Features([[np.log(3.0)]], [[0.0]], 1, 1))
    table = AnnotatorTable(np.array([0.8]), np.array([1]))
    w = batch_e_step(PolicyParams([1.0]), pairs, LossSpec("DPO", beta=1.0), table).w
    assert w[0] == pytest.approx(0.6 / 0.65, abs=1e-12)
    assert w[0] == pytest.approx(0.923077, abs=1e-6)


def test_batch_e_step_uses_each_annotators_eta():
    pairs = make_pairs(k=2)
    spec = LossSpec("SimPO", beta=0.8)
    params = PolicyParams([0.3, -1.0, 0.5])
    table = AnnotatorTable(np.array([0.9, 0.6]), np.bincount(pairs.annotator_id, minlength=2))
    w = batch_e_step(params, pairs, spec, table).w
    p = pref_probability(spec, score_pair(params, pairs.features))
    expected = [e_step_weight(p[i], table.eta[pairs.annotator_id[i]]) for i in range(len(pairs))]
    np.testing.assert_array_equal(w, expected)


def test_batch_e_step_unknown_annotator():
    pairs = make_pairs(k=3)
    with pytest.raises(KeyError, match="unknown annotator"):
        batch_e_step(PolicyParams.zeros(3), pairs, LossSpec(), AnnotatorTable(np.array([0.9]), np.array([1])))


# weighted loss


def test_unit_weights_give_standard_dpo_loss():
    pairs = make_pairs()
    params = PolicyParams([0.4, -0.2, 1.1], [0.1, 0.0, -0.3])
    spec = LossSpec("DPO", beta=0.5)
    loss, _ = lcpo_loss(weights_for(pairs, np.ones(len(pairs))), params, pairs, spec)
    assert loss == pytest.approx(float(np.sum(loss_forward(spec, score_pair(params, pairs.features)))), abs=1e-9)


def test_half_weights_dpo_gradient_closed_form():
    pairs = make_pairs()
    params = PolicyParams([0.4, -0.2, 1.1])
    spec = LossSpec("DPO", beta=0.7)
    _, grad = lcpo_loss(weights_for(pairs, np.full(len(pairs), 0.5)), params, pairs, spec)
    f = pairs.features
    dphi = f.phi_w - f.phi_l
    p = expit(spec.beta * dphi @ params.theta)
    np.testing.assert_allclose(grad, ((p - 0.5) * spec.beta) @ dphi, rtol=1e-12)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_weighted_loss_gradient_matches_finite_differences(kind):
    pairs = make_pairs(seed=3)
    spec = LossSpec(kind, beta=0.6, gamma=0.2)
    ref = np.array([0.2, -0.1, 0.3])
    theta = np.array([0.5, 0.8, -0.4])
    w = weights_for(pairs, np.random.default_rng(4).uniform(size=len(pairs)))
    _, grad = lcpo_loss(w, PolicyParams(theta, ref), pairs, spec)
    h = 1e-6
    fd = np.array(
        [
            (lcpo_loss(w, PolicyParams(theta + h * e, ref), pairs, spec)[0] - lcpo_loss(w, PolicyParams(theta - h * e, ref), pairs, spec)[0])
            / (2 * h)
            for e in np.eye(3)
        ]
    )
    assert np.linalg.norm(grad - fd) / np.linalg.norm(grad) <= 1e-5


def test_zero_weight_pushes_margin_negative():
    pairs = PreferenceDataset([0], [0], Features([[1.0]], [[0.0]], 1, 1))
    spec = LossSpec("DPO", beta=1.0)
    params = PolicyParams([0.0])
    w = weights_for(pairs, [0.0])
    loss, _ = lcpo_loss(w, params, pairs, spec)
    assert loss == pytest.approx(-np.log(1 - pref_probability(spec, score_pair(params, pairs.features))[0]))
    for _ in range(200):
        _, grad = lcpo_loss(w, params, pairs, spec)
        params = PolicyParams(params.theta - 0.5 * grad)
    assert params.theta[0] < -2


def test_q_function_splits_into_theta_and_eta_parts():
    pairs = make_pairs(k=2, seed=5)
    spec = LossSpec("CPO", beta=0.9)
    params = PolicyParams([0.3, 0.2, -0.6])
    eta = np.array([0.85, 0.65])
    w = np.random.default_rng(6).uniform(size=len(pairs))
    p = pref_probability(spec, score_pair(params, pairs.features))
    e = eta[pairs.annotator_id]
    direct = np.sum(w * np.log(p * e) + (1 - w) * np.log((1 - p) * (1 - e)))
    theta_part = -lcpo_loss(weights_for(pairs, w), params, pairs, spec)[0]
    eta_part = sum(np.sum(w[pairs.annotator_id == k] * np.log(eta[k]) + (1 - w[pairs.annotator_id == k]) * np.log(1 - eta[k])) for k in range(2))
    assert theta_part + eta_part == pytest.approx(direct, abs=1e-10)


# reliability updates


def test_closed_form_examples():
    assert eta_closed_form([0.9, 0.7, 0.8]) == pytest.approx(0.8, abs=1e-15)
    assert eta_closed_form(np.full(7, 0.63)) == pytest.approx(0.63, abs=1e-15)
    assert abs(eta_closed_form(np.random.default_rng(7).uniform(size=100_000)) - 0.5) <= 0.005
    with pytest.raises(ValueError, match="annotator has no labels"):
        eta_closed_form([])


def test_ema_examples():
    table = AnnotatorTable(np.array([0.9, 0.7]), np.array([2, 2]))
    bw = BatchWeights(np.array([0.4, 0.6, 0.2]), np.arange(3), np.array([0, 0, 1]))
    assert eta_ema_update(table, 0, bw, 0.1).eta[0] == pytest.approx(0.86, abs=1e-12)
    assert eta_ema_update(table, 0, bw, 1.0).eta[0] == pytest.approx(0.5, abs=1e-12)
    moved = eta_ema_update(table, 1, bw, 0.001).eta[1]
    assert abs(moved - 0.7) <= 0.001
    # annotator absent from the batch keeps its reliability
    bw0 = BatchWeights(np.array([0.1]), np.arange(1), np.array([0]))
    assert eta_ema_update(table, 1, bw0, 0.5).eta[1] == 0.7
    assert table.eta[0] == 0.9  # inputs are not mutated


@pytest.mark.parametrize("kwargs", [dict(eta_init=0.4), dict(eta_init=1.01), dict(alpha=0.0), dict(alpha=1.5)])
def test_em_config_validation(kwargs):
    with pytest.raises(ValueError):
        EmConfig(**kwargs)


# training loop


def test_noiseless_data_keeps_high_reliability_and_recovers_signs():
    spec = GeneratorSpec(n_pairs=4000, eta_true=(1.0,), theta_star=(2.0, -1.0, 0.5, -1.5), feature_dim=4, seed=11)
    ds = generate(spec)
    res = run_lcpo(ds.without_debug(), PolicyParams.zeros(4), LossSpec(), EmConfig(eta_init=0.9), OptimizerConfig(learning_rate=0.5, epochs=30))
    assert res.table.eta[0] >= 0.97
    assert np.array_equal(np.sign(res.params.theta), np.sign(spec.theta))


def test_recovers_reliability_of_noisy_annotator():
    ds = generate(GeneratorSpec(n_pairs=10_000, eta_true=(0.7,), seed=12))
    opt = OptimizerConfig(learning_rate=1.0, epochs=200, batch_size=256, schedule="cosine")
    res = run_lcpo(ds.without_debug(), PolicyParams.zeros(8), LossSpec(), EmConfig(), opt)
    assert abs(res.table.eta[0] - 0.7) <= 0.03


def test_unit_weights_reproduce_plain_trainer():
    ds = generate(GeneratorSpec(n_pairs=500, eta_true=(0.8,), seed=13))
    opt = OptimizerConfig(learning_rate=0.3, epochs=4, batch_size=32, seed=9)
    spec = LossSpec("DPO", beta=1.0)
    res = run_lcpo(ds, PolicyParams.zeros(8), spec, EmConfig(unit_weights=True), opt, record_theta=True)
    plain = train_plain(ds, PolicyParams.zeros(8), spec, opt)
    assert len(plain) == len(res.theta_trajectory)
    assert max(np.max(np.abs(a - b)) for a, b in zip(plain, res.theta_trajectory)) <= 1e-9


def test_uncertain_start_gives_weights_equal_to_eta():
    ds = generate(GeneratorSpec(n_pairs=300, k_annotators=2, eta_true=(0.9, 0.6), seed=14))
    table = AnnotatorTable(np.array([0.9, 0.6]), np.bincount(ds.annotator_id))
    w = batch_e_step(PolicyParams.zeros(8), ds, LossSpec(), table).w
    assert np.max(np.abs(w - table.eta[ds.annotator_id])) <= 1e-6


def test_full_batch_closed_form_matches_operator_iterates():
    gen = GeneratorSpec(n_pairs=2000, eta_true=(0.75,), seed=15)
    ds = generate(gen)
    spec = LossSpec("DPO", beta=1.0)
    params = PolicyParams(gen.theta)
    em = EmConfig(eta_init=0.9, update_mode=UpdateMode.CLOSED_FORM_PER_EPOCH)
    opt = OptimizerConfig(epochs=25, batch_size=len(ds))
    res = run_lcpo(ds.without_debug(), params, spec, em, opt, train_policy=False)
    p = pref_probability(spec, score_pair(params, ds.features))
    fp = theory.iterate_to_fixed_point(p, 0.9, tol=1e-300, max_iters=25)
    assert [m.eta[0] for m in res.metrics] == fp.trajectory[1:]


def test_runs_are_deterministic():
    ds = generate(GeneratorSpec(n_pairs=600, k_annotators=2, eta_true=(0.9, 0.7), seed=16))
    args = (ds, PolicyParams.zeros(8), LossSpec("IPO"), EmConfig(), OptimizerConfig(epochs=3, seed=4))
    assert metrics_csv(run_lcpo(*args).metrics, "h") == metrics_csv(run_lcpo(*args).metrics, "h")


def test_metrics_csv_schema():
    ds = generate(GeneratorSpec(n_pairs=100, k_annotators=2, eta_true=(0.9, 0.7), seed=17))
    text = metrics_csv(run_lcpo(ds, PolicyParams.zeros(8), LossSpec(), EmConfig(), OptimizerConfig(epochs=2)).metrics, "abc")
    lines = text.splitlines()
    assert lines[0] == "# config_hash=abc"
    assert lines[1] == "epoch,batch,mean_loss,mean_w,eta_1,eta_2"
    assert len(lines) == 4


def test_non_finite_loss_reports_location():
    ds = make_pairs(n=10)
    ds.features.phi_w[3] = 1e200
    with pytest.raises(FloatingPointError, match="IPO.*epoch 1, batch 1"):
        run_lcpo(ds, PolicyParams([1.0, 1.0, 1.0]), LossSpec("IPO"), EmConfig(), OptimizerConfig(epochs=1))
