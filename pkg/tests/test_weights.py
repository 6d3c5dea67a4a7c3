import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ortho_cate.errors import InvalidSpec, PropensityOutOfRange
from ortho_cate.weights import (
    Constant,
    OneMinusPropensity,
    Overlap,
    Propensity,
    SmoothedIndicator,
    WeightKind,
    eval_weight_stack,
    parse_weight_kind,
    second_stage_weight,
)

ALL_KINDS = [Constant, Propensity, Overlap, OneMinusPropensity, SmoothedIndicator(),
             SmoothedIndicator(0.2, 10.0)]
PI_GRID = np.linspace(0.01, 0.99, 99)
probs = st.floats(1e-6, 1 - 1e-6, allow_nan=False)


@pytest.mark.parametrize("kind,pi,expected", [
    (Overlap, 0.3, (0.21, 0.4, -2.0, 0.0)),
    (Constant, 0.9, (1.0, 0.0, 0.0, 0.0)),
    (Propensity, 0.7, (0.7, 1.0, 0.0, 0.0)),
    (OneMinusPropensity, 0.2, (0.8, -1.0, 0.0, 0.0)),
])
def test_stack_values(kind, pi, expected):
    np.testing.assert_allclose(tuple(eval_weight_stack(kind, pi)), expected, rtol=0, atol=1e-15)


@given(probs)
def test_polynomial_stacks_exact(pi):
    assert tuple(eval_weight_stack(Constant, pi)) == (1.0, 0.0, 0.0, 0.0)
    assert tuple(eval_weight_stack(Propensity, pi)) == (pi, 1.0, 0.0, 0.0)
    assert tuple(eval_weight_stack(Overlap, pi)) == (pi * (1 - pi), 1 - 2 * pi, -2.0, 0.0)


@pytest.mark.parametrize("kind", ALL_KINDS, ids=str)
def test_derivatives_match_central_differences(kind):
    # each derivative against a central difference of the analytic one below it
    h = 1e-5
    up = eval_weight_stack(kind, PI_GRID + h)
    dn = eval_weight_stack(kind, PI_GRID - h)
    st_ = eval_weight_stack(kind, PI_GRID)
    for lower, upper in ((0, 1), (1, 2), (2, 3)):
        fd = (up[lower] - dn[lower]) / (2 * h)
        np.testing.assert_array_less(np.abs(fd - st_[upper]), 1e-6 * (1 + np.abs(st_[upper])) + 1e-12)


def test_smoothed_approximates_indicator():
    kind = SmoothedIndicator(0.1, 200.0)
    lam = eval_weight_stack(kind, np.array([0.02, 0.5, 0.98])).lam
    assert lam[0] < 1e-6 and lam[2] < 1e-6
    assert lam[1] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("a,pi,kind,expected", [
    (1, 0.25, Overlap, 0.5625),
    (0, 0.4, Propensity, 0.0),
    (0, 0.8, Constant, 1.0),
    (1, 0.8, OneMinusPropensity, 0.0),
])
def test_second_stage_weight_examples(a, pi, kind, expected):
    assert second_stage_weight(a, pi, kind) == expected


@given(st.integers(0, 1), probs)
def test_second_stage_weight_closed_forms(a, pi):
    assert second_stage_weight(a, pi, Overlap) == (a - pi) ** 2
    assert second_stage_weight(a, pi, Propensity) == a
    assert second_stage_weight(a, pi, OneMinusPropensity) == 1 - a
    assert second_stage_weight(a, pi, Constant) == 1


@given(st.integers(0, 1), probs)
def test_closed_forms_agree_with_general_formula(a, pi):
    for kind in (Overlap, Propensity, OneMinusPropensity):
        s = eval_weight_stack(kind, pi)
        general = (a - pi) * s.lam1 + s.lam
        assert abs(general - second_stage_weight(a, pi, kind)) < 1e-15


@pytest.mark.parametrize("pi", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_propensity_out_of_range(pi):
    with pytest.raises(PropensityOutOfRange):
        eval_weight_stack(Constant, pi)
    with pytest.raises(PropensityOutOfRange):
        second_stage_weight(1, pi, Overlap)


def test_parse_weight_kind():
    assert parse_weight_kind("dr") == Constant
    assert parse_weight_kind("ps-dr") == Propensity
    assert parse_weight_kind("r") == Overlap
    assert parse_weight_kind("control-dr") == OneMinusPropensity
    assert parse_weight_kind("smoothed") == SmoothedIndicator()
    assert parse_weight_kind("smoothed{0.2,30}") == SmoothedIndicator(0.2, 30)
    assert parse_weight_kind("smoothed{steepness=30}") == SmoothedIndicator(0.1, 30)
    for kind in ALL_KINDS:
        assert parse_weight_kind(str(kind)) == kind
    for bad in ("xx", "dr{1}", "smoothed{alpha=0.6}", "smoothed{k=3}", "smoothed{1,2,3}"):
        with pytest.raises(InvalidSpec):
            parse_weight_kind(bad)


def test_weight_kind_validation():
    with pytest.raises(InvalidSpec):
        WeightKind("nope")
    with pytest.raises(InvalidSpec):
        SmoothedIndicator(0.0, 10)
    with pytest.raises(InvalidSpec):
        SmoothedIndicator(0.1, -1)
