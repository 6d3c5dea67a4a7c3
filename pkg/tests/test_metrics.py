import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ortho_cate.errors import EmptyInput, LengthMismatch, NoTreated, PropensityOutOfRange
from ortho_cate.metrics import METRICS, mse, mse_pow, mse_treated, weighted_mse


def test_mse_examples():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([3.0], [1.0]) == 4.0
    assert mse([0.0, 2.0], [1.0, 0.0]) == 2.5


def test_mse_errors():
    with pytest.raises(LengthMismatch):
        mse([1.0], [1.0, 2.0])
    with pytest.raises(EmptyInput):
        mse([], [])


def test_mse_treated_examples():
    assert mse_treated([1.0, 5.0], [0.0, 1.0], [1, 1]) == mse([1.0, 5.0], [0.0, 1.0])
    assert mse_treated([0.0, 5.0], [0.0, 1.0], [1, 0]) == 0.0
    assert mse_treated([2.0, 10.0], [0.0, 0.0], [1, 0]) == 4.0
    with pytest.raises(NoTreated):
        mse_treated([1.0], [1.0], [0])


def test_mse_pow_examples():
    assert mse_pow([2.0], [0.0], [0.5]) == 4.0
    assert mse_pow([0.0, 1.0], [0.0, 0.0], [0.5, 0.9]) == pytest.approx(0.09 / 0.34, rel=1e-14)
    with pytest.raises(LengthMismatch):
        mse_pow([1.0, 2.0], [1.0, 2.0], [0.5])
    with pytest.raises(PropensityOutOfRange):
        mse_pow([1.0], [1.0], [1.0])


vec = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40)


@given(vec, st.integers(0, 1000))
def test_mse_pow_equals_mse_at_half(tau_hat, seed):
    tau = np.random.default_rng(seed).standard_normal(len(tau_hat))
    assert mse_pow(tau_hat, tau, np.full(len(tau), 0.5)) == pytest.approx(mse(tau_hat, tau), rel=1e-12, abs=1e-12)


@given(vec, st.integers(0, 1000), st.floats(1e-3, 1e3))
def test_weighted_mse_scale_invariant(tau_hat, seed, c):
    rng = np.random.default_rng(seed)
    tau = rng.standard_normal(len(tau_hat))
    pi = rng.uniform(0.05, 0.95, len(tau))
    w = pi * (1 - pi)
    base = mse_pow(tau_hat, tau, pi)
    assert weighted_mse(tau_hat, tau, c * w) == pytest.approx(base, rel=1e-10, abs=1e-12)


@given(vec, st.integers(0, 1000))
def test_metrics_permutation_invariant(tau_hat, seed):
    rng = np.random.default_rng(seed)
    n = len(tau_hat)
    tau = rng.standard_normal(n)
    a = rng.integers(0, 2, n)
    a[0] = 1
    pi = rng.uniform(0.05, 0.95, n)
    perm = rng.permutation(n)
    th = np.array(tau_hat)
    for name, fn in METRICS.items():
        assert fn(th[perm], tau[perm], a[perm], pi[perm]) == pytest.approx(fn(th, tau, a, pi), rel=1e-12, abs=1e-12)


def test_all_treated_mse_treated_equals_mse(rng):
    th, tau = rng.standard_normal(50), rng.standard_normal(50)
    assert mse_treated(th, tau, np.ones(50)) == mse(th, tau)
