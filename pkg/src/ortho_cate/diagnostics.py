"""Executable checks of the learners' theory.

Empirical weighted risks, the error-bound constants and remainder terms,
the curvature ratio behind the bound, a finite-difference probe of Neyman
orthogonality, and grid minimizers over the constant class.

Several functions take ``mode="conditional"`` or ``mode="sample"``. In sample
mode the observed ``(a, y)`` enter directly. In conditional mode ``(A, Y)``
are integrated out given ``X`` in closed form: ``A ~ Bernoulli(pi0(X))`` and
``Y`` replaced by its conditional mean ``mu_A(X)``. This is exact because the
g-dependent part of every loss here is linear in ``Y`` and affine in ``A``
per arm, so the result is the population risk under the empirical
distribution of ``X``. It removes outcome and treatment noise, which would
otherwise swamp O(t) finite differences.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .core import SyntheticDataset
from .errors import (
    DegenerateDirection,
    InvalidSpec,
    LengthMismatch,
    StepTooSmall,
    ZeroNormalizer,
)
from .pseudo import NuisanceEstimates, ipw_residual_term, pseudo_outcomes
from .weights import (
    CONSTANT,
    ONE_MINUS_PROPENSITY,
    OVERLAP,
    PROPENSITY,
    WeightKind,
    check_propensity,
    eval_weight_stack,
    second_stage_weight,
)

MIN_STEP = 1e-8
GRID = np.linspace(-3.0, 3.0, 1001)


def _vec(x, n=None, name="value"):
    arr = np.asarray(x, dtype=float).reshape(-1)
    if n is not None and arr.size == 1 and n != 1:
        arr = np.full(n, float(arr[0]))
    if n is not None and arr.shape[0] != n:
        raise LengthMismatch(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


# ---------------------------------------------------------------------------
# Empirical risk
# ---------------------------------------------------------------------------

def empirical_risk(data, eta: NuisanceEstimates, kind: WeightKind, g_values) -> float:
    """Normalized weighted orthogonal risk ``sum w (phi - g)^2 / sum lambda(pi_hat)``.

    Rows whose weight vanishes contribute nothing to the numerator.

    Raises
    ------
    ZeroNormalizer
        If ``sum lambda(pi_hat)`` is zero.
    """
    data = getattr(data, "data", data)
    n = data.n
    if eta.n != n:
        raise LengthMismatch(f"nuisances cover {eta.n} rows, data has {n}")
    g = _vec(g_values, n, "g_values")
    phi, w, keep = pseudo_outcomes(data.y, data.a, eta, kind)
    num = float(np.sum(w[keep] * (phi[keep] - g[keep]) ** 2))
    den = float(np.sum(eval_weight_stack(kind, eta.pi_hat).lam))
    if den == 0.0:
        raise ZeroNormalizer(f"sum of lambda(pi_hat) is zero for kind {kind}")
    return num / den


# ---------------------------------------------------------------------------
# Bound constants
# ---------------------------------------------------------------------------

class BoundConstants(NamedTuple):
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray


# lambda(0), lambda(1) for the kinds whose lambda is a polynomial of degree <= 2
_ENDPOINTS = {
    CONSTANT: (1.0, 1.0),
    PROPENSITY: (0.0, 1.0),
    OVERLAP: (0.0, 0.0),
    ONE_MINUS_PROPENSITY: (1.0, 0.0),
}


def bound_constant_roots(y, a, pi_bar, q0_bar, q1_bar, g_star, kind: WeightKind) -> BoundConstants:
    """The bound constants before squaring.

    These equal ``d_pi d_pi d_g l / (-4)``, ``d_pi d_Q1 d_g l / (-2)`` and
    ``d_pi d_Q0 d_g l / (-2)`` for the pointwise orthogonal loss ``l``.
    For quadratic ``lambda`` the combinations ``lambda - pi lambda' + pi^2 lambda''/2``
    and ``lambda + (1-pi) lambda' + (1-pi)^2 lambda''/2`` are exactly
    ``lambda(0)`` and ``lambda(1)``; using them avoids cancellation near the
    boundary and gives exact zeros where the constants vanish.
    """
    pi = check_propensity(pi_bar)
    y, a, q0, q1, g = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y, a, q0_bar, q1_bar, g_star)))
    pi = np.broadcast_to(pi, y.shape)
    lam, lam1, lam2, lam3 = eval_weight_stack(kind, pi)
    r1, r0 = y - q1, y - q0
    b = 1.0 - a
    if kind.name in _ENDPOINTS:
        at0, at1 = _ENDPOINTS[kind.name]
        c1 = (a * r1 * at0 / pi**3 - b * r0 * at1 / (1.0 - pi) ** 3
              + 0.5 * ((a - pi) * lam3 - lam2) * (q1 - q0 - g))
        c2 = a * at0 / pi**2 + (0.5 * a - pi) * lam2
        c3 = b * at1 / (1.0 - pi) ** 2 - (0.5 * b + a - pi) * lam2
        return BoundConstants(c1, c2, c3)
    c1 = (lam * (a / pi**3 * r1 - b / (1.0 - pi) ** 3 * r0)
          - lam1 * (a / pi**2 * r1 + b / (1.0 - pi) ** 2 * r0)
          + 0.5 * lam2 * (a / pi * r1 - b / (1.0 - pi) * r0 - q1 + q0 + g)
          + 0.5 * lam3 * (a - pi) * (q1 - q0 - g))
    c2 = lam * a / pi**2 - lam1 * a / pi + (a - pi) * lam2
    c3 = lam * b / (1.0 - pi) ** 2 + lam1 * b / (1.0 - pi) - (a - pi) * lam2
    return BoundConstants(c1, c2, c3)


def bound_constants(y, a, pi_bar, q0_bar, q1_bar, g_star, kind: WeightKind) -> BoundConstants:
    """Squared bound constants ``(C1, C2, C3)`` evaluated at ``(pi_bar, q0_bar, q1_bar)``.

    Vectorized over any broadcastable inputs.

    Raises
    ------
    PropensityOutOfRange
    """
    roots = bound_constant_roots(y, a, pi_bar, q0_bar, q1_bar, g_star, kind)
    return BoundConstants(roots.C1**2, roots.C2**2, roots.C3**2)


# ---------------------------------------------------------------------------
# Remainders, curvature and the assembled bound
# ---------------------------------------------------------------------------

class Remainders(NamedTuple):
    rem1: float
    rem2: float
    rem3: float


def oracle_nuisances(sd: SyntheticDataset) -> NuisanceEstimates:
    """True ``(pi0, mu0, mu1)`` of a synthetic dataset."""
    if sd.mu0 is None or sd.mu1 is None:
        raise InvalidSpec("synthetic dataset lacks true outcome means")
    return NuisanceEstimates(sd.pi0, sd.mu0, sd.mu1)


def remainder_terms(sd: SyntheticDataset, eta_hat: NuisanceEstimates, g_star_values,
                    kind: WeightKind, t: float = 0.5) -> Remainders:
    """Sample means of the three nuisance-error remainder terms.

    The constants are evaluated at ``eta_bar = t eta_hat + (1 - t) eta0``, a
    point of the star hull between the estimate and the truth; they multiply
    ``(pi_hat - pi0)^4``, ``(pi_hat - pi0)^2 (Q1_hat - Q1)^2`` and
    ``(pi_hat - pi0)^2 (Q0_hat - Q0)^2`` respectively.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidSpec(f"t must lie in [0, 1], got {t}")
    eta0 = oracle_nuisances(sd)
    n = sd.data.n
    if eta_hat.n != n:
        raise LengthMismatch(f"nuisances cover {eta_hat.n} rows, data has {n}")
    g_star = _vec(g_star_values, n, "g_star_values")
    bar = [t * h + (1.0 - t) * z for h, z in zip(
        (eta_hat.pi_hat, eta_hat.q0_hat, eta_hat.q1_hat), (eta0.pi_hat, eta0.q0_hat, eta0.q1_hat))]
    c = bound_constants(sd.data.y, sd.data.a, bar[0], bar[1], bar[2], g_star, kind)
    dpi = eta_hat.pi_hat - eta0.pi_hat
    dq0 = eta_hat.q0_hat - eta0.q0_hat
    dq1 = eta_hat.q1_hat - eta0.q1_hat
    return Remainders(
        float(np.mean(c.C1 * dpi**4)),
        float(np.mean(c.C2 * dpi**2 * dq1**2)),
        float(np.mean(c.C3 * dpi**2 * dq0**2)),
    )


def alpha_ratio(a, pi, kind: WeightKind, g_values, g_star_values) -> float:
    """``E[w (g - g*)^2] / E[(g - g*)^2]`` with the second-stage weight ``w``.

    Raises
    ------
    DegenerateDirection
        If ``g == g*`` everywhere.
    """
    a = _vec(a, name="a")
    n = a.shape[0]
    pi = _vec(pi, n, "pi")
    h2 = (_vec(g_values, n, "g_values") - _vec(g_star_values, n, "g_star_values")) ** 2
    den = float(np.mean(h2))
    if den == 0.0:
        raise DegenerateDirection("g equals g_star at every observation")
    w = second_stage_weight(a, pi, kind)
    return float(np.mean(w * h2)) / den


def smooth_directions(basis, n_random: int = 64, seed: int = 0) -> np.ndarray:
    """Probe directions: the constant, each basis column, and ``n_random`` bounded smooth maps.

    The random directions are ``tanh(z @ c)`` for standardized basis ``z`` and
    Gaussian ``c`` scaled by ``1/sqrt(d)``. Returns an array of shape
    ``(n_directions, n)``.
    """
    basis = np.asarray(basis, dtype=float)
    if basis.ndim == 1:
        basis = basis.reshape(-1, 1)
    n, d = basis.shape
    sd = basis.std(axis=0)
    z = (basis - basis.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((d, n_random)) / np.sqrt(d)
    dirs = [np.ones(n), *basis.T, *np.tanh(z @ coef).T]
    return np.array(dirs)


def estimate_alpha(a, pi, kind: WeightKind, basis, n_random: int = 64, seed: int = 0) -> float:
    """Heuristic curvature constant: ``2 * min alpha_ratio`` over :func:`smooth_directions`.

    A finite probe set can only overestimate the infimum over the class, so
    this is an optimistic estimate, not a certified lower bound.
    """
    ratios = []
    for h in smooth_directions(basis, n_random, seed):
        try:
            ratios.append(alpha_ratio(a, pi, kind, h, 0.0))
        except DegenerateDirection:
            continue
    if not ratios:
        raise DegenerateDirection("every probe direction is identically zero")
    return 2.0 * min(ratios)


def total_bound(r_g: float, rems: Remainders, alpha: float, deltas) -> float:
    """``(R_g + sum rem_i / delta_i) / (alpha/2 - sum delta_i)``; ``inf`` unless the deltas are admissible."""
    deltas = tuple(float(d) for d in deltas)
    if len(deltas) != 3:
        raise InvalidSpec("need exactly three deltas")
    if min(deltas) <= 0.0 or sum(deltas) >= alpha / 2.0:
        return float("inf")
    val = r_g + sum(r / d for r, d in zip(rems, deltas))
    return val / (alpha / 2.0 - sum(deltas))


@dataclass(frozen=True)
class BoundReport:
    """Terms of the nuisance-robust error bound for one fitted learner."""

    r_g: float
    rem1: float
    rem2: float
    rem3: float
    alpha_hat: float
    deltas: tuple
    total_bound: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["deltas"] = list(self.deltas)
        return out


def bound_report(sd: SyntheticDataset, eta_hat: NuisanceEstimates, g_hat_values, g_star_values,
                 kind: WeightKind, *, t: float = 0.5, deltas=None, basis=None,
                 n_random: int = 64, seed: int = 0) -> BoundReport:
    """Assemble :class:`BoundReport`.

    ``r_g`` is the empirical-risk gap ``L(g_hat) - L(g*)`` at ``eta_hat``.
    ``alpha_hat`` uses the true propensity and probe directions built from
    ``basis`` (default: the ``V`` columns). Default deltas are ``alpha_hat/8``
    each, so their sum is ``3/8 alpha_hat < alpha_hat/2``.
    """
    data = sd.data
    r_g = (empirical_risk(data, eta_hat, kind, g_hat_values)
           - empirical_risk(data, eta_hat, kind, g_star_values))
    rems = remainder_terms(sd, eta_hat, g_star_values, kind, t)
    basis = data.v if basis is None else basis
    alpha = estimate_alpha(data.a, sd.pi0, kind, basis, n_random, seed)
    if deltas is None:
        deltas = (alpha / 8.0,) * 3
    deltas = tuple(float(d) for d in deltas)
    return BoundReport(float(r_g), *rems, float(alpha), deltas, total_bound(r_g, rems, alpha, deltas))


# ---------------------------------------------------------------------------
# Quadratic loss coefficients and the orthogonality probe
# ---------------------------------------------------------------------------

class NuisanceDirection(NamedTuple):
    """Perturbation ``(d_pi, d_q0, d_q1)`` of the nuisance functions at the sample points."""

    d_pi: np.ndarray
    d_q0: np.ndarray
    d_q1: np.ndarray


RISKS = ("orthogonal", "orthogonal_treated", "ipw")
MODES = ("conditional", "sample")


def _row_coefficients(risk, kind, a, y, pi, q0, q1):
    """Pointwise ``(W, B)`` with ``loss(g) = W g^2 - 2 B g + const``.

    For the orthogonal risk ``W = w`` and ``B = lambda * bracket + w (q1 - q0)``,
    which equals ``w (phi - g)^2`` up to a g-free term whenever ``w != 0``
    and stays well defined when ``w = 0``.
    """
    if risk == "ipw":
        return np.ones_like(y), a * y / pi - (1.0 - a) * y / (1.0 - pi)
    lam = eval_weight_stack(kind, pi).lam
    w = second_stage_weight(a, pi, kind)
    b = lam * ipw_residual_term(y, a, pi, q0, q1) + w * (q1 - q0)
    if risk == "orthogonal_treated":
        w, b = w * a, b * a
    return w, b


def loss_coefficients(sd: SyntheticDataset, eta: NuisanceEstimates, kind: WeightKind | None,
                      risk: str = "orthogonal", mode: str = "conditional"):
    """Per-row quadratic coefficients ``(W, B)`` and the normalizer of a risk.

    The risk as a function of ``g`` is ``mean(W g^2 - 2 B g) / norm`` plus a
    g-free constant, where ``norm = mean(lambda(pi))`` for the orthogonal
    risks and 1 for the IPW risk.
    """
    if risk not in RISKS:
        raise InvalidSpec(f"risk must be one of {RISKS}, got {risk!r}")
    if mode not in MODES:
        raise InvalidSpec(f"mode must be one of {MODES}, got {mode!r}")
    if risk != "ipw" and kind is None:
        raise InvalidSpec("orthogonal risks need a weight kind")
    pi, q0, q1 = eta.pi_hat, eta.q0_hat, eta.q1_hat
    if mode == "sample":
        a = sd.data.a.astype(float)
        W, B = _row_coefficients(risk, kind, a, sd.data.y, pi, q0, q1)
    else:
        eta0 = oracle_nuisances(sd)
        p1 = eta0.pi_hat
        one, zero = np.ones_like(pi), np.zeros_like(pi)
        W1, B1 = _row_coefficients(risk, kind, one, eta0.q1_hat, pi, q0, q1)
        W0, B0 = _row_coefficients(risk, kind, zero, eta0.q0_hat, pi, q0, q1)
        W = p1 * W1 + (1.0 - p1) * W0
        B = p1 * B1 + (1.0 - p1) * B0
    norm = 1.0 if risk == "ipw" else float(np.mean(eval_weight_stack(kind, pi).lam))
    if norm == 0.0:
        raise ZeroNormalizer("mean of lambda(pi) is zero")
    return W, B, norm


def risk_value(sd, eta, kind, g_values, risk="orthogonal", mode="conditional") -> float:
    """The risk at ``g`` up to a g-free constant (see :func:`loss_coefficients`)."""
    W, B, norm = loss_coefficients(sd, eta, kind, risk, mode)
    g = _vec(g_values, W.shape[0], "g_values")
    return float(np.mean(W * g * g - 2.0 * B * g)) / norm


def _shift(eta: NuisanceEstimates, d: NuisanceDirection, t: float) -> NuisanceEstimates:
    n = eta.n
    return NuisanceEstimates(
        eta.pi_hat + t * _vec(d.d_pi, n, "d_pi"),
        eta.q0_hat + t * _vec(d.d_q0, n, "d_q0"),
        eta.q1_hat + t * _vec(d.d_q1, n, "d_q1"),
    )


def orthogonality_probe(sd: SyntheticDataset, kind: WeightKind | None, g_star_values, g_dir_values,
                        eta_dir: NuisanceDirection, t: float, *, risk: str = "orthogonal",
                        mode: str = "conditional") -> float:
    """Finite-difference estimate of the cross derivative ``D_eta D_g L(g*, eta0)[g_dir, eta_dir]``.

    ``D_g L`` is a central difference in ``g`` with step ``t``; the result is
    the forward difference of that quantity in ``eta`` with the same step.
    For a Neyman-orthogonal risk the limit as ``t -> 0`` is zero and the
    leading term is ``O(t)``.

    Parameters
    ----------
    risk : {"orthogonal", "orthogonal_treated", "ipw"}
        The weighted orthogonal risk, the same risk restricted to treated
        rows, or the inverse-probability-weighted risk (``kind`` ignored).
    mode : {"conditional", "sample"}
        See the module docstring.

    Raises
    ------
    StepTooSmall
        If ``t < 1e-8``.
    """
    if not t >= MIN_STEP:
        raise StepTooSmall(f"step t={t} is below {MIN_STEP}")
    n = sd.data.n
    g_star = _vec(g_star_values, n, "g_star_values")
    h = _vec(g_dir_values, n, "g_dir_values")
    eta0 = oracle_nuisances(sd)

    def d_g(eta):
        up = risk_value(sd, eta, kind, g_star + t * h, risk, mode)
        down = risk_value(sd, eta, kind, g_star - t * h, risk, mode)
        return (up - down) / (2.0 * t)

    return (d_g(_shift(eta0, eta_dir, t)) - d_g(eta0)) / t


# ---------------------------------------------------------------------------
# Minimizers over the constant class
# ---------------------------------------------------------------------------

def _grid_argmin(coef2: float, coef1: float, grid) -> float:
    """Grid minimizer of ``coef2 g^2 + coef1 g`` (first point on ties)."""
    grid = np.asarray(grid, dtype=float)
    return float(grid[int(np.argmin(coef2 * grid * grid + coef1 * grid))])


def infeasible_risk_argmin(sd: SyntheticDataset, kind: WeightKind, grid=GRID) -> float:
    """Grid minimizer of ``mean lambda(pi0) (Y1 - Y0 - g)^2`` over constants ``g``.

    Uses both potential outcomes, so it is only computable on synthetic data.
    """
    lam = eval_weight_stack(kind, sd.pi0).lam
    delta = sd.y1 - sd.y0
    return _grid_argmin(float(np.mean(lam)), -2.0 * float(np.mean(lam * delta)), grid)


def orthogonal_risk_argmin(sd: SyntheticDataset, kind: WeightKind, eta: NuisanceEstimates | None = None,
                           grid=GRID, mode: str = "conditional") -> float:
    """Grid minimizer of the orthogonal risk over constants (oracle nuisances by default)."""
    eta = oracle_nuisances(sd) if eta is None else eta
    W, B, norm = loss_coefficients(sd, eta, kind, "orthogonal", mode)
    return _grid_argmin(float(np.mean(W)) / norm, -2.0 * float(np.mean(B)) / norm, grid)


def random_directions(x, rng, pi_scale: float = 0.05):
    """A random bounded smooth ``g`` direction and nuisance direction on the rows of ``x``.

    Each component is ``tanh`` of a random linear index of the standardized
    columns; the propensity component is scaled by ``pi_scale`` so that
    small steps keep the propensity inside ``(0, 1)``.
    """
    x = np.asarray(x, dtype=float)
    sd = x.std(axis=0)
    z = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    coef = rng.standard_normal((x.shape[1], 4)) / np.sqrt(x.shape[1])
    comp = np.tanh(z @ coef)
    return comp[:, 0], NuisanceDirection(pi_scale * comp[:, 1], comp[:, 2], comp[:, 3])
