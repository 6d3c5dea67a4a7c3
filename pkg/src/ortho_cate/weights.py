"""Weight functions ``lambda(pi)`` and the second-stage observation weight.

A weight kind fixes the learner: a constant weight gives the DR-Learner,
``pi`` the propensity-score-weighted DR-Learner, ``pi (1 - pi)`` the
R-Learner. All derivatives are closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .core import parse_braced
from .errors import InvalidSpec, PropensityOutOfRange

CONSTANT = "constant"
PROPENSITY = "propensity"
OVERLAP = "overlap"
ONE_MINUS_PROPENSITY = "one_minus_propensity"
SMOOTHED_INDICATOR = "smoothed_indicator"

_KINDS = (CONSTANT, PROPENSITY, OVERLAP, ONE_MINUS_PROPENSITY, SMOOTHED_INDICATOR)


@dataclass(frozen=True)
class WeightKind:
    """Identifies ``lambda``; ``alpha``/``steepness`` only matter for the smoothed indicator."""

    name: str
    alpha: float = 0.1
    steepness: float = 50.0

    def __post_init__(self):
        if self.name not in _KINDS:
            raise InvalidSpec(f"unknown weight kind {self.name!r}")
        if self.name == SMOOTHED_INDICATOR:
            if not 0.0 < self.alpha < 0.5:
                raise InvalidSpec(f"smoothed indicator needs 0 < alpha < 0.5, got {self.alpha}")
            if not self.steepness > 0.0:
                raise InvalidSpec(f"smoothed indicator needs steepness > 0, got {self.steepness}")

    def __str__(self):
        if self.name == SMOOTHED_INDICATOR:
            return f"smoothed{{alpha={self.alpha:g},steepness={self.steepness:g}}}"
        return _LABELS[self.name]

    @property
    def may_vanish(self) -> bool:
        """True when the second-stage weight is exactly zero for one treatment arm."""
        return self.name in (PROPENSITY, ONE_MINUS_PROPENSITY)


Constant = WeightKind(CONSTANT)
Propensity = WeightKind(PROPENSITY)
Overlap = WeightKind(OVERLAP)
OneMinusPropensity = WeightKind(ONE_MINUS_PROPENSITY)


def SmoothedIndicator(alpha: float = 0.1, steepness: float = 50.0) -> WeightKind:
    return WeightKind(SMOOTHED_INDICATOR, float(alpha), float(steepness))


_LABELS = {
    CONSTANT: "dr",
    PROPENSITY: "ps-dr",
    OVERLAP: "r",
    ONE_MINUS_PROPENSITY: "control-dr",
}
_BY_LABEL = {v: k for k, v in _LABELS.items()}


def parse_weight_kind(text: str) -> WeightKind:
    """Parse ``dr | ps-dr | r | control-dr | smoothed{alpha,steepness}``.

    ``smoothed`` accepts positional (``smoothed{0.1,50}``) or keyword
    (``smoothed{alpha=0.1,steepness=50}``) arguments; omitted ones default.
    """
    name, items = parse_braced(text)
    if name in _BY_LABEL:
        if items:
            raise InvalidSpec(f"{name!r} takes no arguments")
        return WeightKind(_BY_LABEL[name])
    if name == "smoothed":
        kwargs = {}
        positional = ("alpha", "steepness")
        for i, (key, val) in enumerate(items):
            key = key or (positional[i] if i < 2 else None)
            if key not in positional:
                raise InvalidSpec(f"bad smoothed argument in {text!r}")
            try:
                kwargs[key] = float(val)
            except ValueError:
                raise InvalidSpec(f"non-numeric {key} in {text!r}") from None
        return SmoothedIndicator(**kwargs)
    raise InvalidSpec(f"unknown weight kind {text!r}")


class WeightStack(NamedTuple):
    """``lambda`` and its first three derivatives evaluated at ``pi``."""

    lam: np.ndarray
    lam1: np.ndarray
    lam2: np.ndarray
    lam3: np.ndarray


def check_propensity(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    bad = ~((pi > 0.0) & (pi < 1.0))
    if np.any(bad):
        raise PropensityOutOfRange(
            f"propensity must lie in (0, 1); got {pi[bad].ravel()[0]!r}"
        )
    return pi


def _logistic_derivs(z, k):
    """Derivatives in pi of ``s(z(pi))`` where ``dz/dpi = k``."""
    s = expit(z)
    ds = s * (1.0 - s)
    return s, k * ds, k**2 * ds * (1.0 - 2.0 * s), k**3 * ds * (1.0 - 6.0 * s + 6.0 * s * s)


def eval_weight_stack(kind: WeightKind, pi) -> WeightStack:
    """Evaluate ``(lambda, lambda', lambda'', lambda''')`` at ``pi`` (scalar or array)."""
    pi = check_propensity(pi)
    zero = np.zeros_like(pi)
    one = np.ones_like(pi)
    name = kind.name
    if name == CONSTANT:
        return WeightStack(one, zero, zero.copy(), zero.copy())
    if name == PROPENSITY:
        return WeightStack(pi.copy(), one, zero, zero.copy())
    if name == ONE_MINUS_PROPENSITY:
        return WeightStack(1.0 - pi, -one, zero, zero.copy())
    if name == OVERLAP:
        return WeightStack(pi * (1.0 - pi), 1.0 - 2.0 * pi, np.full_like(pi, -2.0), zero)
    # smoothed indicator: u(pi) = s(k (pi - alpha)), v(pi) = s(k (1 - alpha - pi))
    k, alpha = kind.steepness, kind.alpha
    u, u1, u2, u3 = _logistic_derivs(k * (pi - alpha), k)
    v, v1, v2, v3 = _logistic_derivs(k * (1.0 - alpha - pi), -k)
    return WeightStack(
        u * v,
        u1 * v + u * v1,
        u2 * v + 2.0 * u1 * v1 + u * v2,
        u3 * v + 3.0 * u2 * v1 + 3.0 * u1 * v2 + u * v3,
    )


def second_stage_weight(a, pi, kind: WeightKind):
    """Observation weight ``(a - pi) lambda'(pi) + lambda(pi)``.

    Equals 1 for the DR kind, ``a`` for the propensity kind, ``1 - a`` for
    the control kind and ``(a - pi)**2`` for the overlap kind.
    """
    a = np.asarray(a, dtype=float)
    pi = check_propensity(pi)
    if kind.name == OVERLAP:
        # expanded form is (a - pi)^2 only up to rounding; use it directly
        return (a - pi) ** 2
    if kind.name == PROPENSITY:
        return a + 0.0 * pi
    if kind.name == ONE_MINUS_PROPENSITY:
        return 1.0 - a + 0.0 * pi
    st = eval_weight_stack(kind, pi)
    return (a - pi) * st.lam1 + st.lam
