"""Weighted regression and propensity learners used for nuisances and the second stage.

The roster is deliberately small and dependency-free: ridge regression on
polynomial features, k-nearest-neighbour averaging, histogram boosted
stumps, and ridge-penalized logistic regression. Every regressor minimizes a
weighted squared error ``sum_i w_i (y_i - f(x_i))**2`` plus its own
regularizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import expit

from .core import FoldAssignment, parse_braced, split_top_level
from .errors import (
    AllSpecsFailed,
    DegenerateDesign,
    DimensionMismatch,
    InvalidSpec,
    LengthMismatch,
    NegativeWeights,
    OrthoCateError,
    SingleClass,
)

DEFAULT_EPS = 0.01


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RidgeLinear:
    """Ridge regression with an unpenalized intercept.

    ``degree=0`` is the constant class (weighted mean), ``degree=1`` linear,
    ``degree=2`` adds squares and pairwise products.
    """

    l2: float = 1.0
    degree: int = 1

    def __post_init__(self):
        if not self.l2 >= 0:
            raise InvalidSpec(f"ridge l2 must be >= 0, got {self.l2}")
        if self.degree not in (0, 1, 2):
            raise InvalidSpec(f"ridge degree must be 0, 1 or 2, got {self.degree}")

    def __str__(self):
        return f"ridge{{l2={self.l2:g},degree={self.degree}}}"


@dataclass(frozen=True)
class KnnRegression:
    k: int = 25

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise InvalidSpec(f"knn k must be a positive integer, got {self.k}")

    def __str__(self):
        return f"knn{{k={self.k}}}"


@dataclass(frozen=True)
class BoostedStumps:
    rounds: int = 200
    learning_rate: float = 0.1
    max_bins: int = 32

    def __post_init__(self):
        if int(self.rounds) != self.rounds or self.rounds < 1:
            raise InvalidSpec(f"stumps rounds must be a positive integer, got {self.rounds}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise InvalidSpec(f"stumps learning rate must be in (0, 1], got {self.learning_rate}")
        if int(self.max_bins) != self.max_bins or self.max_bins < 2:
            raise InvalidSpec(f"stumps max_bins must be an integer >= 2, got {self.max_bins}")

    def __str__(self):
        return f"stumps{{rounds={self.rounds},lr={self.learning_rate:g},max_bins={self.max_bins}}}"


@dataclass(frozen=True)
class LogisticRidge:
    l2: float = 1.0

    def __post_init__(self):
        if not self.l2 >= 0:
            raise InvalidSpec(f"logistic l2 must be >= 0, got {self.l2}")

    def __str__(self):
        return f"logistic{{l2={self.l2:g}}}"


LearnerSpec = Union[RidgeLinear, KnnRegression, BoostedStumps, LogisticRidge]

_FIELDS = {
    "ridge": (RidgeLinear, {"l2": float, "degree": int}),
    "knn": (KnnRegression, {"k": int}),
    "stumps": (BoostedStumps, {"rounds": int, "lr": float, "learning_rate": float, "max_bins": int}),
    "logistic": (LogisticRidge, {"l2": float}),
}


def parse_learner_spec(text: str) -> LearnerSpec:
    """Parse ``ridge{l2=0.1,degree=2}``, ``knn{k=25}``, ``stumps{rounds=200,lr=0.1}``, ``logistic{l2=1}``."""
    name, items = parse_braced(text)
    if name not in _FIELDS:
        raise InvalidSpec(f"unknown learner {name!r} in {text!r}")
    cls, fields = _FIELDS[name]
    kwargs = {}
    for key, val in items:
        if key is None or key not in fields:
            raise InvalidSpec(f"bad argument {key!r} for {name} in {text!r}")
        try:
            num = float(val)
        except ValueError:
            raise InvalidSpec(f"non-numeric value for {key} in {text!r}") from None
        if fields[key] is int:
            if num != int(num):
                raise InvalidSpec(f"{key} must be an integer in {text!r}")
            num = int(num)
        kwargs["learning_rate" if key == "lr" else key] = num
    return cls(**kwargs)


def parse_learner_specs(text: str) -> list[LearnerSpec]:
    """Parse a comma-separated list of specs (commas inside braces are kept)."""
    return [parse_learner_spec(part) for part in split_top_level(text)]


# ---------------------------------------------------------------------------
# Fitted models
# ---------------------------------------------------------------------------

def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return x


class RegressionModel:
    """A fitted regressor. Immutable after construction."""

    spec: LearnerSpec
    n_features: int

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        if x.shape[1] != self.n_features:
            raise DimensionMismatch(f"model expects {self.n_features} features, got {x.shape[1]}")
        if x.shape[0] == 0:
            return np.zeros(0)
        return self._predict(x)

    def _predict(self, x):  # pragma: no cover - abstract
        raise NotImplementedError


def poly_features(x: np.ndarray, degree: int) -> np.ndarray:
    """Design matrix without intercept: nothing, ``x``, or ``x`` plus all degree-2 monomials."""
    if degree == 0:
        return np.empty((x.shape[0], 0))
    if degree == 1:
        return x
    iu = np.triu_indices(x.shape[1])
    return np.hstack([x, x[:, iu[0]] * x[:, iu[1]]])


class _RidgeModel(RegressionModel):
    def __init__(self, spec, n_features, intercept, coef):
        self.spec, self.n_features = spec, n_features
        self.intercept, self.coef = float(intercept), coef

    def _predict(self, x):
        return self.intercept + poly_features(x, self.spec.degree) @ self.coef


def _ridge_solve(z: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float) -> np.ndarray:
    """Solve ``(Z'WZ + P) beta = Z'Wy`` with ``Z = [1, z]`` and ``P = diag(0, l2, ...)``."""
    design = np.hstack([np.ones((z.shape[0], 1)), z])
    gram = design.T @ (design * w[:, None])
    rhs = design.T @ (w * y)
    gram[np.diag_indices_from(gram)] += np.r_[0.0, np.full(z.shape[1], l2)]
    try:
        beta = np.linalg.solve(gram, rhs)
        if np.all(np.isfinite(beta)):
            return beta
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(gram, rhs, rcond=None)[0]


def _fit_ridge(spec: RidgeLinear, x, y, w):
    beta = _ridge_solve(poly_features(x, spec.degree), y, w, spec.l2)
    return _RidgeModel(spec, x.shape[1], beta[0], beta[1:])


class _KnnModel(RegressionModel):
    _CHUNK = 512

    def __init__(self, spec, x, y, w):
        self.spec, self.n_features = spec, x.shape[1]
        self._x, self._y, self._w = x, y, w
        self._sq = np.einsum("ij,ij->i", x, x)

    def _predict(self, x):
        k = min(self.spec.k, self._x.shape[0])
        out = np.empty(x.shape[0])
        for start in range(0, x.shape[0], self._CHUNK):
            q = x[start:start + self._CHUNK]
            dist = self._sq[None, :] - 2.0 * q @ self._x.T + np.einsum("ij,ij->i", q, q)[:, None]
            # stable sort: ties resolved by training-row order
            nn = np.argsort(dist, axis=1, kind="stable")[:, :k]
            ww = self._w[nn]
            out[start:start + self._CHUNK] = (ww * self._y[nn]).sum(axis=1) / ww.sum(axis=1)
        return out


def _check_nonneg(spec, w):
    if np.any(w < 0):
        raise NegativeWeights(f"{spec} requires non-negative weights")


def _positive_rows(spec, x, w) -> np.ndarray:
    keep = w > 0
    if not keep.any():
        raise DegenerateDesign(f"{spec}: all weights are zero")
    xs = x[keep]
    if xs.shape[0] > 1 and np.all(xs == xs[0]):
        raise DegenerateDesign(f"{spec}: all weighted rows share identical features")
    return keep


def _fit_knn(spec: KnnRegression, x, y, w):
    _check_nonneg(spec, w)
    keep = _positive_rows(spec, x, w)
    return _KnnModel(spec, x[keep], y[keep], w[keep])


class _StumpsModel(RegressionModel):
    def __init__(self, spec, n_features, init, features, thresholds, left, right):
        self.spec, self.n_features = spec, n_features
        self.init = float(init)
        self.features = features
        self.thresholds = thresholds
        self.left, self.right = left, right

    def _predict(self, x):
        out = np.full(x.shape[0], self.init)
        lr = self.spec.learning_rate
        for f, t, lv, rv in zip(self.features, self.thresholds, self.left, self.right):
            out += lr * np.where(x[:, f] <= t, lv, rv)
        return out


def _bin_edges(values: np.ndarray, max_bins: int) -> np.ndarray:
    """Candidate split thresholds; depends only on the set of distinct values."""
    uniq = np.unique(values)
    if uniq.size <= 1:
        return np.empty(0)
    if uniq.size <= max_bins:
        return 0.5 * (uniq[:-1] + uniq[1:])
    qs = np.quantile(uniq, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    return np.unique(qs)


def _fit_stumps(spec: BoostedStumps, x, y, w):
    _check_nonneg(spec, w)
    keep = _positive_rows(spec, x, w)
    x, y, w = x[keep], y[keep], w[keep]
    n, d = x.shape
    n_bins = spec.max_bins
    edges = [_bin_edges(x[:, j], n_bins) for j in range(d)]
    bins = np.empty((n, d), dtype=np.int64)
    for j in range(d):
        bins[:, j] = np.searchsorted(edges[j], x[:, j], side="left") + j * n_bins
    flat = bins.ravel()
    w_tot = w.sum()
    w_bins = np.bincount(flat, weights=np.repeat(w, d), minlength=d * n_bins).reshape(d, n_bins)
    cum_w = np.cumsum(w_bins, axis=1)[:, :-1]
    n_edges = np.array([e.size for e in edges])
    valid = np.arange(n_bins - 1)[None, :] < n_edges[:, None]
    tol = 1e-12 * w_tot
    valid &= (cum_w > tol) & (w_tot - cum_w > tol)

    init = float(np.dot(w, y) / w_tot)
    pred = np.full(n, init)
    feats, thrs, lefts, rights = [], [], [], []
    if valid.any():
        safe_l = np.where(valid, cum_w, 1.0)
        safe_r = np.where(valid, w_tot - cum_w, 1.0)
        for _ in range(spec.rounds):
            wr = w * (y - pred)
            s_tot = wr.sum()
            s_bins = np.bincount(flat, weights=np.repeat(wr, d), minlength=d * n_bins).reshape(d, n_bins)
            cum_s = np.cumsum(s_bins, axis=1)[:, :-1]
            gain = cum_s**2 / safe_l + (s_tot - cum_s) ** 2 / safe_r - s_tot**2 / w_tot
            gain = np.where(valid, gain, -np.inf)
            best = int(np.argmax(gain))
            if not gain.flat[best] > 1e-14 * max(1.0, abs(s_tot)):
                break
            f, s = divmod(best, n_bins - 1)
            lv = cum_s[f, s] / cum_w[f, s]
            rv = (s_tot - cum_s[f, s]) / (w_tot - cum_w[f, s])
            thr = edges[f][s]
            pred += spec.learning_rate * np.where(x[:, f] <= thr, lv, rv)
            feats.append(f)
            thrs.append(thr)
            lefts.append(lv)
            rights.append(rv)
    return _StumpsModel(spec, d, init, np.array(feats, dtype=np.int64), np.array(thrs),
                        np.array(lefts), np.array(rights))


def fit_regressor(spec: LearnerSpec, x, y, w=None) -> RegressionModel:
    """Fit ``spec`` by weighted least squares.

    Parameters
    ----------
    spec : LearnerSpec
        Any regression spec. A :class:`LogisticRidge` spec is rejected here;
        use :func:`fit_propensity`.
    x : array_like of shape (n, d)
    y : array_like of shape (n,)
    w : array_like of shape (n,), optional
        Observation weights (default all ones). Ridge accepts signed weights;
        kNN and stumps raise :class:`NegativeWeights` on any negative entry.

    Raises
    ------
    LengthMismatch, DegenerateDesign, NegativeWeights, InvalidSpec
    """
    x = _as_matrix(x)
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float).reshape(-1)
    if not (x.shape[0] == y.shape[0] == w.shape[0]):
        raise LengthMismatch(f"rows(x)={x.shape[0]}, len(y)={y.shape[0]}, len(w)={w.shape[0]}")
    if x.shape[0] == 0:
        raise DegenerateDesign("no training rows")
    if isinstance(spec, RidgeLinear):
        if not abs(w.sum()) > 0:
            raise DegenerateDesign(f"{spec}: weights sum to zero")
        return _fit_ridge(spec, x, y, w)
    if isinstance(spec, KnnRegression):
        return _fit_knn(spec, x, y, w)
    if isinstance(spec, BoostedStumps):
        return _fit_stumps(spec, x, y, w)
    raise InvalidSpec(f"{spec} is not a regression spec")


def predict(model, x) -> np.ndarray:
    """Predict with a fitted :class:`RegressionModel` or :class:`PropensityModel`."""
    return model.predict(x)


# ---------------------------------------------------------------------------
# Propensity
# ---------------------------------------------------------------------------

class PropensityModel:
    """Probability model whose predictions are clipped to ``[eps, 1 - eps]``."""

    def __init__(self, spec, eps, n_features, base=None, beta=None):
        self.spec, self.eps, self.n_features = spec, eps, n_features
        self._base, self._beta = base, beta

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        if x.shape[1] != self.n_features:
            raise DimensionMismatch(f"model expects {self.n_features} features, got {x.shape[1]}")
        if x.shape[0] == 0:
            return np.zeros(0)
        if self._beta is not None:
            p = expit(self._beta[0] + x @ self._beta[1:])
        else:
            p = self._base.predict(x)
        return np.clip(p, self.eps, 1.0 - self.eps)


def _fit_logistic(x, a, w, l2, max_iter=100, tol=1e-10):
    """Newton-Raphson for ridge-penalized logistic regression (intercept unpenalized)."""
    design = np.hstack([np.ones((x.shape[0], 1)), x])
    pen = np.r_[0.0, np.full(x.shape[1], l2)]
    # tiny jitter keeps the Hessian invertible on separable data with l2 = 0
    jitter = 1e-8
    beta = np.zeros(design.shape[1])
    for _ in range(max_iter):
        p = expit(design @ beta)
        grad = design.T @ (w * (a - p)) - pen * beta
        hess = design.T @ (design * (w * p * (1.0 - p))[:, None])
        hess[np.diag_indices_from(hess)] += pen + jitter
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        # damp huge steps (separable data) so the iterate stays finite
        norm = np.max(np.abs(step))
        if norm > 10.0:
            step *= 10.0 / norm
        beta = beta + step
        if norm < tol:
            break
    return beta


def fit_propensity(spec: LearnerSpec, x, a, eps: float = DEFAULT_EPS, w=None) -> PropensityModel:
    """Fit ``P(A = 1 | X)``.

    A :class:`LogisticRidge` spec fits a penalized logistic regression; any
    regression spec is fitted to the 0/1 indicator (a linear-probability or
    nonparametric fit). Predictions are clipped to ``[eps, 1 - eps]``.

    Raises
    ------
    SingleClass
        When ``a`` (restricted to positive weights) contains one class only.
    """
    if not 0.0 < eps < 0.5:
        raise InvalidSpec(f"clip eps must be in (0, 0.5), got {eps}")
    x = _as_matrix(x)
    a = np.asarray(a, dtype=float).reshape(-1)
    w = np.ones_like(a) if w is None else np.asarray(w, dtype=float).reshape(-1)
    if not (x.shape[0] == a.shape[0] == w.shape[0]):
        raise LengthMismatch(f"rows(x)={x.shape[0]}, len(a)={a.shape[0]}, len(w)={w.shape[0]}")
    seen = a[w > 0]
    if seen.size == 0 or np.all(seen == seen[0]):
        raise SingleClass("propensity fit needs both treated and untreated rows")
    if isinstance(spec, LogisticRidge):
        _check_nonneg(spec, w)
        return PropensityModel(spec, eps, x.shape[1], beta=_fit_logistic(x, a, w, spec.l2))
    return PropensityModel(spec, eps, x.shape[1], base=fit_regressor(spec, x, a, w))


def fit_model(spec: LearnerSpec, x, y, w=None, eps: float | None = None):
    """Fit a propensity model when ``eps`` is given, else a regressor."""
    if eps is not None:
        return fit_propensity(spec, x, y, eps, w)
    return fit_regressor(spec, x, y, w)


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------

@dataclass
class Selection:
    spec: LearnerSpec
    scores: dict
    oof: np.ndarray


def cross_validate(spec, x, y, w, folds: FoldAssignment, *, fit_weights=None, eps=None):
    """Out-of-fold predictions and weighted squared error of ``spec``.

    ``fit_weights`` (default ``w``) are the training weights; ``w`` scores the
    held-out predictions. Rows are predicted only by a model that never saw
    them. With ``eps`` set, ``y`` is a 0/1 treatment and the models are
    clipped propensity models (the score is then the Brier score).
    """
    x = _as_matrix(x)
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    fw = w if fit_weights is None else np.asarray(fit_weights, dtype=float).reshape(-1)
    if folds.n != y.shape[0]:
        raise LengthMismatch(f"folds cover {folds.n} rows, data has {y.shape[0]}")
    oof = np.empty_like(y)
    for k in range(folds.K):
        test = folds.indices(k)
        if test.size == 0:
            continue
        train = folds.complement(k)
        model = fit_model(spec, x[train], y[train], fw[train], eps)
        oof[test] = model.predict(x[test])
    score = float(np.sum(w * (y - oof) ** 2))
    return oof, score


def select_with_oof(specs: Sequence[LearnerSpec], x, y, w, folds: FoldAssignment,
                    *, fit_weights=None, eps=None) -> Selection:
    """Run :func:`cross_validate` for each spec; keep the lowest score (first on ties)."""
    if not specs:
        raise InvalidSpec("need at least one learner spec")
    best = None
    scores = {}
    failures = []
    for spec in specs:
        try:
            oof, score = cross_validate(spec, x, y, w, folds, fit_weights=fit_weights, eps=eps)
        except OrthoCateError as exc:
            failures.append(f"{spec}: {exc}")
            continue
        if not np.isfinite(score):
            failures.append(f"{spec}: non-finite validation error")
            continue
        scores[str(spec)] = score
        if best is None or score < best.scores[str(best.spec)]:
            best = Selection(spec, scores, oof)
    if best is None:
        raise AllSpecsFailed("every candidate spec failed: " + "; ".join(failures))
    best.scores = scores
    return best


def select_by_validation(specs: Sequence[LearnerSpec], x, y, w, folds: FoldAssignment) -> LearnerSpec:
    """Return the spec with the smallest weighted out-of-fold squared error.

    Ties go to the earliest spec in ``specs``; specs whose fit raises are
    skipped, and :class:`AllSpecsFailed` is raised if none survive.
    """
    if len(specs) == 1:
        return specs[0]
    return select_with_oof(specs, x, y, w, folds).spec
