"""Pseudo-outcomes for the weighted orthogonal loss and for IPW."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NonFiniteValue, ZeroDenominator
from .weights import WeightKind, check_propensity, eval_weight_stack, second_stage_weight

# second-stage rows with |weight| below this are dropped
ZERO_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class NuisanceEstimates:
    """Per-observation nuisance values ``(pi_hat, q0_hat, q1_hat)``.

    In the learners these are out-of-fold predictions; for oracle runs they
    are the true functions evaluated at the sample.
    """

    pi_hat: np.ndarray
    q0_hat: np.ndarray
    q1_hat: np.ndarray

    def __post_init__(self):
        arrs = []
        for name in ("pi_hat", "q0_hat", "q1_hat"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise NonFiniteValue(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            arrs.append(arr)
        if not arrs[0].shape == arrs[1].shape == arrs[2].shape:
            raise LengthMismatch("nuisance vectors must have equal length")
        check_propensity(self.pi_hat)

    @property
    def n(self) -> int:
        return self.pi_hat.shape[0]

    @property
    def q_hat(self) -> np.ndarray:
        """Marginal outcome prediction ``pi q1 + (1 - pi) q0``."""
        return self.pi_hat * self.q1_hat + (1.0 - self.pi_hat) * self.q0_hat

    def subset(self, rows) -> "NuisanceEstimates":
        return NuisanceEstimates(self.pi_hat[rows], self.q0_hat[rows], self.q1_hat[rows])


def ipw_residual_term(y, a, pi, q0, q1):
    """``a/pi (y - q1) - (1-a)/(1-pi) (y - q0)``: the augmentation bracket."""
    return a / pi * (y - q1) - (1.0 - a) / (1.0 - pi) * (y - q0)


def pseudo_outcome(y, a, pi, q0, q1, kind: WeightKind):
    """Orthogonal pseudo-outcome for weight kind ``kind``.

    ``lambda / [(a - pi) lambda' + lambda] * bracket + q1 - q0`` where
    ``bracket`` is :func:`ipw_residual_term`. Works elementwise on arrays.

    Raises
    ------
    ZeroDenominator
        If any second-stage weight has magnitude below ``1e-12``; such rows
        carry no information and must be filtered out by the caller.
    """
    y, a, q0, q1 = (np.asarray(v, dtype=float) for v in (y, a, q0, q1))
    pi = check_propensity(pi)
    w = second_stage_weight(a, pi, kind)
    if np.any(np.abs(w) < ZERO_WEIGHT_TOL):
        raise ZeroDenominator(f"second-stage weight vanishes for kind {kind}")
    lam = eval_weight_stack(kind, pi).lam
    return lam / w * ipw_residual_term(y, a, pi, q0, q1) + q1 - q0


def pseudo_outcomes(y, a, eta: NuisanceEstimates, kind: WeightKind):
    """Vectorized pseudo-outcomes and weights with zero-weight rows masked.

    Returns
    -------
    phi : ndarray
        Pseudo-outcomes; ``nan`` where the weight vanishes.
    w : ndarray
        Second-stage weights ``(a - pi) lambda'(pi) + lambda(pi)``.
    keep : ndarray of bool
        Rows with ``|w| >= 1e-12``.
    """
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    pi, q0, q1 = eta.pi_hat, eta.q0_hat, eta.q1_hat
    w = second_stage_weight(a, pi, kind)
    keep = np.abs(w) >= ZERO_WEIGHT_TOL
    lam = eval_weight_stack(kind, pi).lam
    phi = np.full_like(y, np.nan)
    phi[keep] = (lam[keep] / w[keep] * ipw_residual_term(y[keep], a[keep], pi[keep], q0[keep], q1[keep])
                 + q1[keep] - q0[keep])
    return phi, w, keep


def ipw_pseudo_outcome(y, a, pi):
    """Inverse-probability-weighted pseudo-outcome ``a y / pi - (1 - a) y / (1 - pi)``."""
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    pi = check_propensity(pi)
    return a * y / pi - (1.0 - a) * y / (1.0 - pi)
