import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ortho_cate.dgp import DgpParams, generate
from ortho_cate.errors import LengthMismatch, NonFiniteValue, PropensityOutOfRange, ZeroDenominator
from ortho_cate.pseudo import (
    NuisanceEstimates,
    ipw_pseudo_outcome,
    pseudo_outcome,
    pseudo_outcomes,
)
from ortho_cate.weights import (
    Constant,
    OneMinusPropensity,
    Overlap,
    Propensity,
    SmoothedIndicator,
    second_stage_weight,
)

reals = st.floats(-50, 50, allow_nan=False)
probs = st.floats(0.01, 0.99, allow_nan=False)


def _tuples(rng, n):
    return (rng.normal(0, 3, n), rng.integers(0, 2, n).astype(float), rng.uniform(0.01, 0.99, n),
            rng.normal(0, 3, n), rng.normal(0, 3, n))


def test_dr_example():
    assert pseudo_outcome(1.0, 1, 0.5, 0.1, 0.2, Constant) == pytest.approx(1.7, abs=1e-15)


@given(probs, reals, reals)
def test_zero_residual_leaves_plug_in_difference(pi, q0, q1):
    assert pseudo_outcome(q1, 1, pi, q0, q1, Constant) == pytest.approx(q1 - q0, abs=1e-12)


@given(reals, probs, reals, reals)
def test_propensity_kind_untreated_row_raises(y, pi, q0, q1):
    with pytest.raises(ZeroDenominator):
        pseudo_outcome(y, 0, pi, q0, q1, Propensity)
    with pytest.raises(ZeroDenominator):
        pseudo_outcome(y, 1, pi, q0, q1, OneMinusPropensity)


def test_ipw_examples():
    assert ipw_pseudo_outcome(2.0, 1, 0.5) == 4.0
    assert ipw_pseudo_outcome(2.0, 0, 0.5) == -4.0
    assert ipw_pseudo_outcome(0.0, 1, 0.3) == 0.0
    assert ipw_pseudo_outcome(0.0, 0, 0.9) == 0.0
    with pytest.raises(PropensityOutOfRange):
        ipw_pseudo_outcome(1.0, 1, 1.0)


def test_dr_reduces_to_aipw(rng):
    y, a, pi, q0, q1 = _tuples(rng, 5000)
    aipw = a / pi * (y - q1) - (1 - a) / (1 - pi) * (y - q0) + q1 - q0
    np.testing.assert_allclose(pseudo_outcome(y, a, pi, q0, q1, Constant), aipw, rtol=0, atol=1e-12)


def test_propensity_kind_treated_reduction(rng):
    y, _, pi, q0, q1 = _tuples(rng, 5000)
    a = np.ones_like(y)
    expected = (a - pi) / ((1 - pi) * a) * (y - q0)
    np.testing.assert_allclose(pseudo_outcome(y, a, pi, q0, q1, Propensity), expected, rtol=0, atol=1e-12)


def test_overlap_residual_identity(rng):
    y, a, pi, q0, q1 = _tuples(rng, 10_000)
    g = rng.normal(0, 3, 10_000)
    phi = pseudo_outcome(y, a, pi, q0, q1, Overlap)
    q = pi * q1 + (1 - pi) * q0
    lhs = (a - pi) ** 2 * (phi - g) ** 2
    rhs = ((y - q) - (a - pi) * g) ** 2
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("kind", [Constant, Propensity, Overlap, OneMinusPropensity, SmoothedIndicator(0.1, 20)],
                         ids=str)
@pytest.mark.parametrize("setup", [1, 2, 3])
def test_oracle_weighted_residual_has_mean_zero(kind, setup):
    sd = generate(setup, DgpParams(n=100_000, seed=11 + setup))
    eta = NuisanceEstimates(sd.pi0, sd.mu0, sd.mu1)
    phi, w, keep = pseudo_outcomes(sd.data.y, sd.data.a, eta, kind)
    z = np.where(keep, w * (np.nan_to_num(phi) - sd.tau), 0.0)
    assert abs(z.mean()) < 4 * z.std(ddof=1) / np.sqrt(z.size)


def test_pseudo_outcomes_masks_zero_weights(rng):
    y, a, pi, q0, q1 = _tuples(rng, 200)
    eta = NuisanceEstimates(pi, q0, q1)
    phi, w, keep = pseudo_outcomes(y, a, eta, Propensity)
    np.testing.assert_array_equal(keep, a == 1)
    assert np.all(np.isnan(phi[~keep]))
    np.testing.assert_array_equal(w, second_stage_weight(a, pi, Propensity))
    np.testing.assert_allclose(phi[keep], pseudo_outcome(y[keep], 1, pi[keep], q0[keep], q1[keep], Propensity))
    phi_dr, w_dr, keep_dr = pseudo_outcomes(y, a, eta, Constant)
    assert keep_dr.all()
    np.testing.assert_allclose(phi_dr, pseudo_outcome(y, a, pi, q0, q1, Constant))


def test_nuisance_estimates(rng):
    pi = rng.uniform(0.1, 0.9, 10)
    q0, q1 = rng.standard_normal(10), rng.standard_normal(10)
    eta = NuisanceEstimates(pi, q0, q1)
    np.testing.assert_array_equal(eta.q_hat, pi * q1 + (1 - pi) * q0)
    assert eta.subset(np.arange(3)).n == 3
    with pytest.raises(LengthMismatch):
        NuisanceEstimates(pi, q0[:5], q1)
    with pytest.raises(NonFiniteValue):
        NuisanceEstimates(pi, np.full(10, np.inf), q1)
    with pytest.raises(PropensityOutOfRange):
        NuisanceEstimates(np.ones(10), q0, q1)
