import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ortho_cate.baselearners import (
    BoostedStumps,
    KnnRegression,
    LogisticRidge,
    RidgeLinear,
    cross_validate,
    fit_propensity,
    fit_regressor,
    parse_learner_spec,
    parse_learner_specs,
    predict,
    select_by_validation,
)
from ortho_cate.core import kfold_assign
from ortho_cate.errors import (
    AllSpecsFailed,
    DegenerateDesign,
    DimensionMismatch,
    InvalidSpec,
    LengthMismatch,
    NegativeWeights,
    SingleClass,
)


def test_ridge_interpolates_line():
    x = np.array([[1.0], [2.0], [3.0]])
    model = fit_regressor(RidgeLinear(l2=0.0, degree=1), x, 2 * x[:, 0])
    assert abs(predict(model, [[4.0]])[0] - 8.0) < 1e-9


def test_ridge_degree_two_recovers_square():
    x = np.linspace(-1, 1, 21).reshape(-1, 1)
    model = fit_regressor(RidgeLinear(l2=0.0, degree=2), x, x[:, 0] ** 2)
    assert abs(predict(model, [[0.5]])[0] - 0.25) < 1e-6


def test_ridge_single_weighted_point_has_zero_residual():
    x = np.array([[0.3], [1.0], [2.0], [5.0]])
    y = np.array([1.7, -2.0, 4.0, 0.5])
    model = fit_regressor(RidgeLinear(l2=0.0, degree=1), x, y, np.array([1.0, 0, 0, 0]))
    assert abs(predict(model, x[:1])[0] - 1.7) < 1e-9


def test_ridge_degree_zero_is_weighted_mean(rng):
    x = rng.standard_normal((30, 3))
    y = rng.standard_normal(30)
    w = rng.random(30)
    model = fit_regressor(RidgeLinear(degree=0), x, y, w)
    np.testing.assert_allclose(predict(model, x), np.dot(w, y) / w.sum(), rtol=1e-12)


@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.1, 3.0]), st.sampled_from([1, 2]))
def test_ridge_matches_augmented_least_squares(seed, l2, degree):
    rng = np.random.default_rng(seed)
    n, d = 25, 3
    x = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    w = rng.random(n) + 0.1
    model = fit_regressor(RidgeLinear(l2=l2, degree=degree), x, y, w)
    # oracle: minimize ||sqrt(W)(y - Zb)||^2 + l2 ||b[1:]||^2 as an augmented lstsq problem
    cols = [np.ones(n), *x.T]
    if degree == 2:
        cols += [x[:, i] * x[:, j] for i in range(d) for j in range(i, d)]
    z = np.column_stack(cols)
    p = z.shape[1]
    pen = np.sqrt(l2) * np.eye(p)[1:]
    big = np.vstack([z * np.sqrt(w)[:, None], pen])
    rhs = np.concatenate([y * np.sqrt(w), np.zeros(p - 1)])
    beta = np.linalg.lstsq(big, rhs, rcond=None)[0]
    np.testing.assert_allclose(predict(model, x), z @ beta, atol=1e-8)


def test_ridge_accepts_signed_weights(rng):
    x = rng.standard_normal((40, 2))
    y = x[:, 0] + 0.1 * rng.standard_normal(40)
    w = np.ones(40)
    w[:3] = -0.2
    model = fit_regressor(RidgeLinear(l2=1.0), x, y, w)
    assert np.all(np.isfinite(predict(model, x)))
    with pytest.raises(DegenerateDesign):
        fit_regressor(RidgeLinear(), x[:2], y[:2], np.array([1.0, -1.0]))


def test_knn_full_neighbourhood_is_weighted_mean(rng):
    x = rng.standard_normal((15, 2))
    y = rng.standard_normal(15)
    w = rng.random(15)
    model = fit_regressor(KnnRegression(k=15), x, y, w)
    np.testing.assert_allclose(predict(model, rng.standard_normal((4, 2))), np.dot(w, y) / w.sum())


def test_knn_one_neighbour_interpolates(rng):
    x = rng.standard_normal((20, 2))
    y = rng.standard_normal(20)
    model = fit_regressor(KnnRegression(k=1), x, y)
    np.testing.assert_allclose(predict(model, x), y)


def test_constant_target_gives_constant_prediction(rng):
    x = rng.standard_normal((50, 3))
    y = np.full(50, 2.5)
    for spec in (RidgeLinear(), KnnRegression(k=5), BoostedStumps(rounds=20)):
        out = predict(fit_regressor(spec, x, y), rng.standard_normal((7, 3)))
        np.testing.assert_allclose(out, 2.5, atol=1e-12)


def test_prediction_deterministic(rng):
    x = rng.standard_normal((80, 4))
    y = np.sin(x[:, 0]) + x[:, 1]
    for spec in (RidgeLinear(degree=2), KnnRegression(k=3), BoostedStumps()):
        model = fit_regressor(spec, x, y)
        np.testing.assert_array_equal(predict(model, x), predict(model, x))
        np.testing.assert_array_equal(predict(model, x), predict(fit_regressor(spec, x, y), x))


def test_stumps_fit_a_step():
    x = np.linspace(0, 1, 200).reshape(-1, 1)
    y = np.where(x[:, 0] > 0.5, 1.0, -1.0)
    model = fit_regressor(BoostedStumps(rounds=100, learning_rate=0.5), x, y)
    np.testing.assert_allclose(predict(model, x), y, atol=1e-6)


@pytest.mark.parametrize("spec", [RidgeLinear(l2=0.5, degree=2), BoostedStumps(rounds=30, max_bins=8)], ids=str)
def test_duplicating_a_row_equals_doubling_its_weight(spec, rng):
    x = rng.standard_normal((40, 3))
    y = x[:, 0] ** 2 + rng.standard_normal(40)
    w = rng.random(40) + 0.5
    dup = np.r_[np.arange(40), 0, 5]
    w2 = w.copy()
    w2[[0, 5]] *= 2
    m_dup = fit_regressor(spec, x[dup], y[dup], np.r_[w, w[0], w[5]])
    m_w = fit_regressor(spec, x, y, w2)
    probe = rng.standard_normal((30, 3))
    np.testing.assert_allclose(predict(m_dup, probe), predict(m_w, probe), atol=1e-10)


def test_degenerate_designs(rng):
    x = rng.standard_normal((5, 2))
    for spec in (KnnRegression(k=2), BoostedStumps()):
        with pytest.raises(DegenerateDesign):
            fit_regressor(spec, x, np.ones(5), np.zeros(5))
        with pytest.raises(DegenerateDesign):
            fit_regressor(spec, np.ones((5, 2)), rng.standard_normal(5))
        with pytest.raises(NegativeWeights):
            fit_regressor(spec, x, np.ones(5), np.array([1, 1, 1, 1, -1.0]))


def test_input_validation(rng):
    x = rng.standard_normal((6, 2))
    model = fit_regressor(RidgeLinear(), x, np.arange(6.0))
    with pytest.raises(DimensionMismatch):
        predict(model, np.ones((2, 3)))
    assert predict(model, np.empty((0, 2))).shape == (0,)
    with pytest.raises(LengthMismatch):
        fit_regressor(RidgeLinear(), x, np.arange(5.0))
    with pytest.raises(InvalidSpec):
        fit_regressor(LogisticRidge(), x, np.arange(6.0))


def test_propensity_separable_data_is_clipped():
    x = np.linspace(-3, 3, 60).reshape(-1, 1)
    a = (x[:, 0] > 0).astype(float)
    for spec in (LogisticRidge(l2=0.0), BoostedStumps(), KnnRegression(k=1)):
        p = fit_propensity(spec, x, a, eps=0.01).predict(x)
        assert p.min() >= 0.01 and p.max() <= 0.99
        assert p[0] == 0.01 and p[-1] == 0.99


def test_propensity_independent_treatment_gives_mean(rng):
    x = rng.standard_normal((2000, 3))
    a = (rng.random(2000) < 0.3).astype(float)
    p = fit_propensity(LogisticRidge(l2=1e6), x, a).predict(x)
    assert np.all(np.abs(p - a.mean()) < 0.05)


def test_propensity_logistic_recovers_coefficients(rng):
    x = rng.standard_normal((20000, 2))
    p_true = 1 / (1 + np.exp(-(0.5 + x[:, 0] - 0.5 * x[:, 1])))
    a = (rng.random(20000) < p_true).astype(float)
    model = fit_propensity(LogisticRidge(l2=0.0), x, a, eps=1e-6)
    np.testing.assert_allclose(model._beta, [0.5, 1.0, -0.5], atol=0.06)


def test_propensity_single_class():
    with pytest.raises(SingleClass):
        fit_propensity(LogisticRidge(), np.ones((5, 1)), np.ones(5))


@given(st.integers(0, 10_000), st.floats(0.001, 0.2), st.sampled_from(["logistic", "ridge", "stumps", "knn"]))
def test_propensity_clipping_fuzz(seed, eps, which):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((60, 2)) * rng.choice([0.1, 1.0, 50.0])
    a = rng.integers(0, 2, 60).astype(float)
    a[:2] = [0, 1]
    spec = {"logistic": LogisticRidge(l2=0.0), "ridge": RidgeLinear(l2=0.0),
            "stumps": BoostedStumps(rounds=20), "knn": KnnRegression(k=3)}[which]
    p = fit_propensity(spec, x, a, eps=eps).predict(rng.standard_normal((40, 2)) * 100)
    assert np.all((p >= eps) & (p <= 1 - eps))


def test_select_single_spec_short_circuits(rng):
    folds = kfold_assign(10, 2, 0)
    assert select_by_validation([KnnRegression(k=1)], np.ones((10, 1)), np.ones(10), np.ones(10), folds) \
        == KnnRegression(k=1)


def test_select_identical_specs_takes_first(rng):
    x = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    folds = kfold_assign(30, 3, 0)
    a, b = RidgeLinear(l2=1.0), RidgeLinear(l2=1.0)
    assert select_by_validation([a, b], x, y, np.ones(30), folds) is a


def test_select_prefers_ridge_on_linear_truth():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((200, 3))
        y = x @ np.array([1.0, -2.0, 0.5]) + 0.1 * rng.standard_normal(200)
        folds = kfold_assign(200, 5, seed)
        chosen = select_by_validation([RidgeLinear(l2=0.1), KnnRegression(k=1)], x, y, np.ones(200), folds)
        wins += isinstance(chosen, RidgeLinear)
    assert wins > 10


def test_select_skips_failing_specs(rng):
    x = rng.standard_normal((20, 2))
    y = rng.standard_normal(20)
    w = np.ones(20)
    w[0] = -1.0
    folds = kfold_assign(20, 2, 0)
    assert select_by_validation([KnnRegression(k=2), RidgeLinear()], x, y, w, folds) == RidgeLinear()
    with pytest.raises(AllSpecsFailed):
        select_by_validation([KnnRegression(k=2), BoostedStumps()], x, y, w, folds)


def test_cross_validate_is_out_of_fold(rng):
    # a 1-NN model scores every training row perfectly; out-of-fold it cannot
    x = rng.standard_normal((40, 2))
    y = rng.standard_normal(40)
    oof, score = cross_validate(KnnRegression(k=1), x, y, np.ones(40), kfold_assign(40, 4, 0))
    assert not np.any(oof == y)
    assert score == pytest.approx(np.sum((y - oof) ** 2))


def test_parse_specs():
    assert parse_learner_spec("ridge{l2=0.1,degree=2}") == RidgeLinear(0.1, 2)
    assert parse_learner_spec("knn{k=25}") == KnnRegression(25)
    assert parse_learner_spec("stumps{rounds=200,lr=0.1}") == BoostedStumps(200, 0.1)
    assert parse_learner_spec("logistic{l2=1}") == LogisticRidge(1.0)
    assert parse_learner_specs("ridge{l2=1,degree=1},knn") == [RidgeLinear(1.0, 1), KnnRegression()]
    for spec in (RidgeLinear(0.5, 2), KnnRegression(3), BoostedStumps(7, 0.25, 9), LogisticRidge(2.0)):
        assert parse_learner_spec(str(spec)) == spec
    for bad in ("forest", "ridge{l2=-1}", "ridge{degree=3}", "knn{k=0}", "knn{k=1.5}",
                "stumps{lr=0}", "ridge{alpha=1}", "knn{k=x}"):
        with pytest.raises(InvalidSpec):
            parse_learner_spec(bad)
