"""Simulation designs with full ground truth.

Setup 1: normal covariates, softplus baseline, constant effect, strongly
varying propensity. Setup 2: uniform covariates, trigonometric baseline,
linear effect, propensity clipped to ``[alpha, 1 - alpha]``. Setup 3:
correlated normal covariates with a latent-logistic treatment and an
effect linear in ``x' beta``, calibrated through two R-squared targets.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import expit

from .core import Dataset, SyntheticDataset
from .errors import InvalidParams

SETUPS = (1, 2, 3)


@dataclass(frozen=True)
class DgpParams:
    """Parameters of :func:`generate`.

    ``alpha_clip=None`` picks the per-setup default: 0.01 (setup 1 clamp)
    or 0.1 (setup 2). ``setup1_propensity`` is ``"clamp"``
    (``1/exp(1 + x2 + ... + x5)`` clamped into ``[alpha_clip, 1 - alpha_clip]``)
    or ``"logistic"`` (``1/(1 + exp(1 + x2 + ... + x5))``).
    """

    n: int = 1000
    seed: int = 0
    d: int = 20
    sigma: float = 0.5
    alpha_clip: float | None = None
    theta: float = 1.0
    r2_y: float = 0.5
    r2_d: float = 0.5
    setup1_propensity: str = "clamp"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "DgpParams":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidParams(f"unknown DGP parameters: {sorted(unknown)}")
        return cls(**raw)

    def with_(self, **changes) -> "DgpParams":
        return replace(self, **changes)


def _alpha(setup: int, params: DgpParams) -> float:
    if params.alpha_clip is not None:
        return params.alpha_clip
    return 0.1 if setup == 2 else 0.01


def validate(setup: int, params: DgpParams) -> None:
    if setup not in SETUPS:
        raise InvalidParams(f"setup must be one of {SETUPS}, got {setup!r}")
    if int(params.n) != params.n or params.n < 1:
        raise InvalidParams(f"n must be a positive integer, got {params.n}")
    if params.d < 6:
        raise InvalidParams(f"d must be >= 6, got {params.d}")
    if not params.sigma >= 0:
        raise InvalidParams(f"sigma must be >= 0, got {params.sigma}")
    alpha = _alpha(setup, params)
    if not 0.0 < alpha < 0.5:
        raise InvalidParams(f"alpha_clip must lie in (0, 0.5), got {alpha}")
    for name in ("r2_y", "r2_d"):
        val = getattr(params, name)
        if not 0.0 < val < 1.0:
            raise InvalidParams(f"{name} must lie in (0, 1), got {val}")
    if params.setup1_propensity not in ("clamp", "logistic"):
        raise InvalidParams(f"setup1_propensity must be 'clamp' or 'logistic', got {params.setup1_propensity!r}")
    if not 0 <= params.seed < 2**64:
        raise InvalidParams(f"seed must be an unsigned 64-bit integer, got {params.seed}")


# ---------------------------------------------------------------------------
# Setup 3 constants
# ---------------------------------------------------------------------------

def toeplitz_cov(d: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def setup3_beta(d: int) -> np.ndarray:
    return 1.0 / np.arange(1, d + 1) ** 2


def setup3_constants(params: DgpParams) -> tuple[float, float]:
    """Return ``(c_y, c_d)`` calibrated to the R-squared targets."""
    beta = setup3_beta(params.d)
    quad = float(beta @ toeplitz_cov(params.d) @ beta)
    c_y = math.sqrt(params.r2_y / ((1.0 - params.r2_y) * quad))
    c_d = math.sqrt((math.pi**2 / 3.0) * params.r2_d / ((1.0 - params.r2_d) * quad))
    return c_y, c_d


# ---------------------------------------------------------------------------
# Closed forms (shared by generate and the pointwise evaluators)
# ---------------------------------------------------------------------------

def _baseline(setup: int, x: np.ndarray) -> np.ndarray:
    if setup == 1:
        return 2.0 * np.logaddexp(0.0, x[:, :5].sum(axis=1))
    if setup == 2:
        return (np.sin(np.pi * x[:, 0] * x[:, 1]) + 2.0 * (x[:, 2] - 0.5) ** 2
                + x[:, 3] + 0.5 * x[:, 4] + x[:, 5])
    return np.zeros(x.shape[0])


def _propensity(setup: int, params: DgpParams, x: np.ndarray) -> np.ndarray:
    alpha = _alpha(setup, params)
    if setup == 1:
        lin = 1.0 + x[:, 1:5].sum(axis=1)
        if params.setup1_propensity == "logistic":
            return expit(-lin)
        return np.clip(np.exp(-lin), alpha, 1.0 - alpha)
    if setup == 2:
        raw = np.sin(np.pi * x[:, 0] * x[:, 1] * x[:, 2] * x[:, 3])
        return np.maximum(alpha, np.minimum(raw, 1.0 - alpha))
    _, c_d = setup3_constants(params)
    return expit(c_d * (x @ setup3_beta(params.d)))


def _cate(setup: int, params: DgpParams, x: np.ndarray) -> np.ndarray:
    if setup == 1:
        return np.ones(x.shape[0])
    if setup == 2:
        return (x[:, 0] + x[:, 1] + x[:, 2]) / 2.0
    c_y, _ = setup3_constants(params)
    return params.theta + c_y * (x @ setup3_beta(params.d))


def _outcome_means(setup: int, params: DgpParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """True ``E(Y | X, A=0)`` and ``E(Y | X, A=1)``."""
    tau = _cate(setup, params, x)
    if setup == 3:
        return np.zeros(x.shape[0]), tau
    b = _baseline(setup, x)
    return b - 0.5 * tau, b + 0.5 * tau


def _row(params: DgpParams, x_row) -> np.ndarray:
    x = np.asarray(x_row, dtype=float).reshape(1, -1)
    if x.shape[1] != params.d:
        raise InvalidParams(f"x_row has {x.shape[1]} entries, expected d={params.d}")
    return x


def true_cate(setup: int, params: DgpParams, x_row) -> float:
    validate(setup, params)
    return float(_cate(setup, params, _row(params, x_row))[0])


def true_propensity(setup: int, params: DgpParams, x_row) -> float:
    validate(setup, params)
    return float(_propensity(setup, params, _row(params, x_row))[0])


def true_outcome_means(setup: int, params: DgpParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``(E(Y|X,A=0), E(Y|X,A=1))`` for a covariate matrix."""
    validate(setup, params)
    return _outcome_means(setup, params, np.asarray(x, dtype=float).reshape(-1, params.d))


def true_propensities(setup: int, params: DgpParams, x) -> np.ndarray:
    validate(setup, params)
    return _propensity(setup, params, np.asarray(x, dtype=float).reshape(-1, params.d))


def true_cates(setup: int, params: DgpParams, x) -> np.ndarray:
    validate(setup, params)
    return _cate(setup, params, np.asarray(x, dtype=float).reshape(-1, params.d))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def generate(setup: int, params: DgpParams) -> SyntheticDataset:
    """Draw ``params.n`` units from simulation setup ``setup`` (1, 2 or 3).

    Deterministic in ``(setup, params)``; ``params.seed`` seeds a fresh
    PCG64 stream.
    """
    validate(setup, params)
    rng = np.random.default_rng(params.seed)
    n, d = params.n, params.d
    if setup == 1:
        x = rng.standard_normal((n, d))
    elif setup == 2:
        x = rng.random((n, d))
    else:
        x = rng.multivariate_normal(np.zeros(d), toeplitz_cov(d), size=n, method="cholesky")
    pi0 = _propensity(setup, params, x)
    tau = _cate(setup, params, x)
    mu0, mu1 = _outcome_means(setup, params, x)
    if setup == 3:
        # a = 1{expit(c_d x'b) > v}, v ~ U(0, 1); noise sd fixed at 1
        v = rng.random(n)
        a = (pi0 > v).astype(np.int8)
        noise = rng.standard_normal(n)
    else:
        a = (rng.random(n) < pi0).astype(np.int8)
        noise = params.sigma * rng.standard_normal(n)
    y0 = mu0 + noise
    y1 = mu1 + noise
    y = np.where(a == 1, y1, y0)
    data = Dataset(y, a, x)
    return SyntheticDataset(data, pi0, tau, y0, y1, setup, params, mu0, mu1)
