import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logit

from wlbayes import model as M
from wlbayes.diagnostics import diagnostics
from wlbayes.predict import (
    PredictiveDistribution,
    canonical_order,
    classify,
    fold_inputs,
    fold_weights,
    loo_validate,
    posterior_predict,
    predictive_from_draws,
    true_category_mass,
)
from wlbayes.sampler import PosteriorDraws, SamplerConfig
from wlbayes.simdata import SimConfig, simulate
from wlbayes.weights import compute_weights

TINY = SamplerConfig(seed=17, n_chains=2, n_warmup=100, n_draws=100)


def make_draws(spec, arr, names=("x1",)):
    arr = np.asarray(arr, dtype=float)
    d = arr[None]
    return PosteriorDraws(
        draws=d,
        parameter_names=spec.param_names(names),
        spec=spec,
        predictor_names=tuple(names),
        standardizer=M.Standardizer.identity(len(names)),
        diagnostics=diagnostics(d),
        accept_rate=np.ones(1),
        step_size=np.ones(1),
        n_divergent=np.zeros(1, dtype=int),
    )


def binary_pred(p):
    p = np.asarray(p, dtype=float)
    return PredictiveDistribution(np.c_[1 - p, p], p.copy(), np.zeros_like(p), "binary")


def test_single_draw_equals_class_probabilities():
    spec = M.ModelSpec.ordered(3)
    theta = [0.7, -0.5, 1.2]
    pred = posterior_predict(make_draws(spec, [theta]), [[0.4]])
    np.testing.assert_allclose(pred.probs[0], M.class_probabilities(spec, theta, [0.4]), rtol=1e-14)


def test_two_draws_mean_and_median():
    spec = M.ModelSpec.binary(include_intercept=False)
    pred = posterior_predict(make_draws(spec, [[logit(0.2)], [logit(0.6)]]), [[1.0]])
    assert pred.probs[0, 1] == pytest.approx(0.4)
    assert pred.median[0] == pytest.approx(0.4)


def test_predict_dimension_mismatch():
    spec = M.ModelSpec.binary(include_intercept=False)
    with pytest.raises(ValueError):
        posterior_predict(make_draws(spec, [[0.1]]), [[1.0, 2.0]])


def test_ordinal_predictive_normalised(rng):
    spec = M.ModelSpec.ordered(4)
    draws = np.c_[rng.normal(size=(1000, 2)), np.sort(rng.normal(scale=2, size=(1000, 3)), axis=1)]
    pred = predictive_from_draws(spec, draws, rng.normal(size=(7, 2)), keep_draws=True)
    np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(pred.per_draw.sum(axis=2), 1.0, atol=1e-12)


def test_binary_classify_rules():
    assert classify(binary_pred([0.51]), 0.5).tolist() == [1]
    assert classify(binary_pred([0.5]), 0.5).tolist() == [0]
    with pytest.raises(ValueError):
        classify(binary_pred([0.5]), 1.0)
    with pytest.raises(ValueError):
        classify(binary_pred([0.5]), 0.0)


def test_binary_classify_uses_median_by_default():
    pred = PredictiveDistribution(np.array([[0.45, 0.55]]), np.array([0.4]), np.zeros(1), "binary")
    assert classify(pred).tolist() == [0]
    assert classify(pred, statistic="mean").tolist() == [1]


def test_ordinal_classify():
    pred = PredictiveDistribution(np.array([[0.2, 0.5, 0.3], [0.4, 0.4, 0.2]]), np.zeros(2), np.zeros(2), "ordinal")
    # argmax with ties to the lower category
    assert classify(pred).tolist() == [2, 1]


def test_ordinal_latent_rule():
    pred = PredictiveDistribution(
        np.full((3, 3), 1 / 3), np.array([-2.0, 0.0, 3.0]), np.zeros(3), "ordinal",
        cutpoint_median=np.tile([-1.0, 1.0], (3, 1)),
    )
    assert classify(pred, rule="latent").tolist() == [1, 2, 3]


@given(st.lists(st.floats(0.01, 0.49), min_size=1, max_size=20), st.floats(-0.009, 0.009))
def test_threshold_perturbation_invariance(ps, delta):
    pred = binary_pred(ps)
    assert classify(pred, 0.5 + delta).tolist() == classify(pred, 0.5).tolist() == [0] * len(ps)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_k2_argmax_agrees_with_binary_threshold(ps):
    p = np.asarray(ps)
    ordinal = PredictiveDistribution(np.c_[1 - p, p], np.zeros_like(p), np.zeros_like(p), "ordinal")
    binary = PredictiveDistribution(np.c_[1 - p, p], p, np.zeros_like(p), "binary")
    untied = (1 - p) != p
    got = classify(ordinal) - 1
    np.testing.assert_array_equal(got[untied], classify(binary, statistic="mean")[untied])


def test_true_category_mass():
    pred = PredictiveDistribution(np.array([[0.2, 0.5, 0.3], [0, 0, 1.0], [1 / 3] * 3]), np.zeros(3), np.zeros(3), "ordinal")
    np.testing.assert_allclose(true_category_mass(pred, [2, 3, 1]), [0.5, 1.0, 1 / 3])
    with pytest.raises(ValueError):
        true_category_mass(pred, [0, 1, 2])
    with pytest.raises(ValueError):
        true_category_mass(pred, [4, 1, 2])


def test_fold_weights_recomputed_on_training_fold():
    y = np.array([0, 0, 0, 0, 0, 0, 1, 1])
    train = np.delete(y, 7)
    w = fold_weights(train, "inverse")
    np.testing.assert_allclose(w, compute_weights([0] * 6 + [1]).values)
    # counts {6, 1}: 7/6 and 7/1, rescaled to sum to 7
    np.testing.assert_allclose(w, [0.5833333333333334] * 6 + [3.5])
    np.testing.assert_array_equal(fold_weights(train, "none"), np.ones(7))
    with pytest.raises(ValueError):
        fold_weights(train, "proportions")
    with pytest.raises(ValueError):
        fold_weights(train, "cost")


def test_two_observation_loo():
    data = M.Dataset.binary([0, 1], [[0.5], [-0.3]])
    res = loo_validate(M.ModelSpec.binary(), data, "inverse", TINY)
    assert res.n == 2 and res.predictive.probs.shape == (2, 2)
    # each fold trains on a single observation of one class
    assert set(res.warnings) == {0, 1}


@pytest.fixture(scope="module")
def small_binary():
    return simulate(SimConfig(n=12, seed=3, target_proportions=(0.6, 0.4)))


def test_loo_row_permutation_equivariance(small_binary):
    spec = M.ModelSpec.binary()
    a = loo_validate(spec, small_binary, "inverse", TINY)
    perm = np.random.default_rng(0).permutation(small_binary.n)
    b = loo_validate(spec, small_binary.subset(perm), "inverse", TINY)
    np.testing.assert_array_equal(b.predictive.probs, a.predictive.probs[perm])
    np.testing.assert_array_equal(b.fold_key, a.fold_key[perm])


def test_loo_balanced_weighted_equals_unweighted():
    data = simulate(SimConfig(n=10, seed=5, target_proportions=(0.5, 0.5)))
    y = np.array([0, 1] * 5)
    data = M.Dataset.binary(y, data.X)
    spec = M.ModelSpec.binary()
    a = loo_validate(spec, data, "none", TINY, fixed_weights=True)
    b = loo_validate(spec, data, "inverse", TINY, fixed_weights=True)
    np.testing.assert_array_equal(a.predictive.probs, b.predictive.probs)


@pytest.mark.parametrize("fixed", [False, True])
def test_fold_inputs_exclude_held_out_row(small_binary, fixed):
    spec = M.ModelSpec.binary()
    W, Xf, _ = fold_inputs(spec, small_binary, "inverse", fixed_weights=fixed)
    n = small_binary.n
    assert np.all(np.diag(W) == 0)
    assert np.all(W[~np.eye(n, dtype=bool)] > 0)
    for f in range(n):
        train = np.delete(np.arange(n), f)
        np.testing.assert_allclose(Xf[f][train].mean(axis=0), 0.0, atol=1e-12)
        if not fixed:
            assert W[f].sum() == pytest.approx(n - 1)


def test_canonical_order_sorts_by_outcome_then_predictors():
    data = M.Dataset.binary([1, 0, 0], [[0.0], [2.0], [1.0]])
    assert canonical_order(data).tolist() == [2, 1, 0]


def test_loo_result_csv(tmp_path, small_binary):
    res = loo_validate(M.ModelSpec.binary(), small_binary, "inverse", TINY)
    res.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "row,y_true,p_0,p_1,median,sd,fold_key,flagged"
    assert len(lines) == small_binary.n + 1
    summary = res.diagnostics_summary()
    assert summary["n_folds"] == small_binary.n


def test_loo_ordinal_and_fixed_weights():
    data = simulate(SimConfig(n=9, seed=2, family="ordinal", target_proportions=(0.34, 0.42, 0.24)))
    spec = M.ModelSpec.ordered(3)
    res = loo_validate(spec, data, "inverse", TINY, fixed_weights=True)
    assert res.predictive.cutpoint_median.shape == (9, 2)
    np.testing.assert_allclose(res.predictive.probs.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        loo_validate(spec, data.subset([0]), "none", TINY)
