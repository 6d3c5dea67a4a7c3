"""CATE metalearners: the T-learner plug-in and the weighted orthogonal two-stage learners.

The orthogonal template covers DR (constant weight), psDR (propensity
weight), R (overlap weight) and any other :class:`~ortho_cate.weights.WeightKind`.
IPW is the same two-stage template with the inverse-probability pseudo-outcome
and unit weights. All two-stage learners are cross-fitted: nuisances for the
rows of fold ``b`` come from models that never saw fold ``b``; the second stage
is fitted fold by fold and the final predictor averages the ``K`` fold models.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .baselearners import (
    BoostedStumps,
    LearnerSpec,
    LogisticRidge,
    RidgeLinear,
    _as_matrix,
    fit_regressor,
    select_by_validation,
    select_with_oof,
)
from .core import Dataset, FoldAssignment, kfold_assign, stratified_kfold_assign
from .errors import (
    DimensionMismatch,
    EmptySecondStage,
    InvalidK,
    InvalidSpec,
    LengthMismatch,
    SingleArm,
    SingleArmInFold,
    VSubsetNotSupported,
)
from .pseudo import NuisanceEstimates, ipw_pseudo_outcome, pseudo_outcomes
from .weights import PROPENSITY, Constant, WeightKind, eval_weight_stack, parse_weight_kind

DEFAULT_K = 5

DEFAULT_PROPENSITY_SPECS = (LogisticRidge(l2=1.0), BoostedStumps(rounds=100, learning_rate=0.1))
DEFAULT_OUTCOME_SPECS = (
    RidgeLinear(l2=1.0, degree=1),
    BoostedStumps(rounds=200, learning_rate=0.1),
)
DEFAULT_SECOND_STAGE_SPECS = (
    RidgeLinear(l2=1.0, degree=0),
    RidgeLinear(l2=10.0, degree=1),
    BoostedStumps(rounds=50, learning_rate=0.1),
)


def subseed(seed: int, *keys: int) -> int:
    """Derive an independent 63-bit seed from ``seed`` and integer keys."""
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class OrthogonalFitConfig:
    """Settings shared by the cross-fitted two-stage learners.

    ``restrict_to_treated`` is forced on for the propensity weight kind,
    whose second-stage weight vanishes on untreated rows anyway.
    """

    weight_kind: WeightKind = Constant
    K: int = DEFAULT_K
    propensity_specs: tuple = DEFAULT_PROPENSITY_SPECS
    outcome_specs: tuple = DEFAULT_OUTCOME_SPECS
    second_stage_specs: tuple = DEFAULT_SECOND_STAGE_SPECS
    eps: float = 0.01
    seed: int = 0
    restrict_to_treated: bool = False

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2:
            raise InvalidK(f"K must be an integer >= 2, got {self.K}")
        for name in ("propensity_specs", "outcome_specs", "second_stage_specs"):
            specs = tuple(getattr(self, name))
            if not specs:
                raise InvalidSpec(f"{name} must be nonempty")
            object.__setattr__(self, name, specs)
        if not 0.0 < self.eps < 0.5:
            raise InvalidSpec(f"eps must lie in (0, 0.5), got {self.eps}")
        if self.weight_kind.name == PROPENSITY:
            object.__setattr__(self, "restrict_to_treated", True)

    @property
    def nuisance_specs(self) -> dict:
        return {"propensity": list(self.propensity_specs), "outcome": list(self.outcome_specs)}

    def with_(self, **changes) -> "OrthogonalFitConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class NuisanceFit:
    """Cross-fitted nuisance predictions plus the specs that produced them."""

    eta: NuisanceEstimates
    folds: FoldAssignment
    propensity_spec: LearnerSpec
    outcome_specs: tuple  # (spec for arm 0, spec for arm 1)
    scores: dict = field(default_factory=dict)


class _Difference:
    """Predicts ``m1(v) - m0(v)``."""

    def __init__(self, m1, m0):
        self.m1, self.m0 = m1, m0
        self.n_features = m1.n_features

    def predict(self, v):
        return self.m1.predict(v) - self.m0.predict(v)


@dataclass(frozen=True)
class CateModel:
    """A fitted CATE estimator.

    ``fold_models`` holds one second-stage model per fold (one model for the
    T-learner); predictions average them. ``info`` carries fit diagnostics:
    second-stage rows and weights per fold, the nuisances used, and the
    normalizer ``sum(lambda(pi_hat))``.
    """

    learner: str
    fold_models: tuple
    folds: FoldAssignment | None
    weight_kind: WeightKind | None
    nuisance_specs: dict
    second_stage_specs: tuple
    seed: int
    d_v: int
    v_columns: tuple
    info: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def K(self) -> int:
        return len(self.fold_models)

    def predict(self, v) -> np.ndarray:
        return predict_cate(self, v)


def predict_cate(model: CateModel, v) -> np.ndarray:
    """Average of the per-fold model predictions at the rows of ``v``."""
    v = _as_matrix(v)
    if v.shape[1] != model.d_v:
        raise DimensionMismatch(f"model expects {model.d_v} V columns, got {v.shape[1]}")
    if v.shape[0] == 0:
        return np.zeros(0)
    preds = np.stack([m.predict(v) for m in model.fold_models])
    return preds.mean(axis=0)


# ---------------------------------------------------------------------------
# Nuisances
# ---------------------------------------------------------------------------

def _check_arms(a) -> None:
    if not (np.any(a == 1) and np.any(a == 0)):
        raise SingleArm("both treatment arms must be nonempty")


def _check_fold_arms(a, folds: FoldAssignment) -> None:
    for k in range(folds.K):
        part_a = a[folds.complement(k)]
        if not (np.any(part_a == 1) and np.any(part_a == 0)):
            raise SingleArmInFold(f"training part for fold {k} lacks a treatment arm")


def make_folds(data: Dataset, K: int, seed: int) -> FoldAssignment:
    """Treatment-stratified fold assignment used by the two-stage learners."""
    return stratified_kfold_assign(data.a, K, seed)


def crossfit_nuisances(data: Dataset, config: OrthogonalFitConfig,
                       folds: FoldAssignment | None = None, *, outcomes: bool = True) -> NuisanceFit:
    """Out-of-fold estimates of ``(pi, Q0, Q1)``.

    For each candidate spec the K fold models are fitted, and the spec with
    the smallest out-of-fold loss is kept (Brier score for the propensity,
    squared error on the matching arm for ``Q_a``). The kept spec's
    out-of-fold predictions are the nuisance estimates, so every row is
    scored only by models that never trained on it.

    With ``outcomes=False`` the outcome regressions are skipped and set to 0.
    """
    _check_arms(data.a)
    folds = make_folds(data, config.K, config.seed) if folds is None else folds
    if folds.n != data.n:
        raise LengthMismatch(f"folds cover {folds.n} rows, data has {data.n}")
    _check_fold_arms(data.a, folds)
    x, a, y = data.x, data.a.astype(float), data.y
    ones = np.ones(data.n)
    prop = select_with_oof(config.propensity_specs, x, a, ones, folds, eps=config.eps)
    scores = {"propensity": prop.scores}
    if not outcomes:
        zero = np.zeros(data.n)
        eta = NuisanceEstimates(prop.oof, zero, zero)
        return NuisanceFit(eta, folds, prop.spec, (None, None), scores)
    arm_fits = []
    for arm in (0, 1):
        w_arm = (data.a == arm).astype(float)
        sel = select_with_oof(config.outcome_specs, x, y, w_arm, folds)
        scores[f"outcome{arm}"] = sel.scores
        arm_fits.append(sel)
    eta = NuisanceEstimates(prop.oof, arm_fits[0].oof, arm_fits[1].oof)
    return NuisanceFit(eta, folds, prop.spec, (arm_fits[0].spec, arm_fits[1].spec), scores)


# ---------------------------------------------------------------------------
# Two-stage fitting
# ---------------------------------------------------------------------------

def _fit_second_stage(v, phi, w, specs, seed):
    """Select a spec by weighted inner cross-validation, then fit on all rows."""
    n = phi.shape[0]
    if len(specs) == 1 or n < 2:
        spec = specs[0]
    else:
        inner = kfold_assign(n, min(DEFAULT_K, n), seed)
        spec = select_by_validation(specs, v, phi, w, inner)
    return spec, fit_regressor(spec, v, phi, w)


def _two_stage(data, folds, phi, w, usable, specs, seed):
    v = data.v
    models, chosen, rows_per_fold, w_per_fold = [], [], [], []
    for b in range(folds.K):
        rows = folds.indices(b)
        rows = rows[usable[rows]]
        if rows.size == 0:
            raise EmptySecondStage(f"no second-stage rows with nonzero weight in fold {b}")
        spec, model = _fit_second_stage(v[rows], phi[rows], w[rows], specs, subseed(seed, 1, b))
        models.append(model)
        chosen.append(spec)
        rows_per_fold.append(rows)
        w_per_fold.append(w[rows])
    return tuple(models), tuple(chosen), {"rows": tuple(rows_per_fold), "weights": tuple(w_per_fold)}


def _resolve_nuisances(data, config, nuisances, folds, outcomes=True):
    """Use injected nuisances when given, else cross-fit them."""
    if nuisances is None:
        fit = crossfit_nuisances(data, config, folds, outcomes=outcomes)
        return fit.eta, fit.folds, {
            "propensity": str(fit.propensity_spec),
            "outcome0": str(fit.outcome_specs[0]),
            "outcome1": str(fit.outcome_specs[1]),
        }
    if isinstance(nuisances, NuisanceFit):
        return nuisances.eta, nuisances.folds, {
            "propensity": str(nuisances.propensity_spec),
            "outcome0": str(nuisances.outcome_specs[0]),
            "outcome1": str(nuisances.outcome_specs[1]),
        }
    if nuisances.n != data.n:
        raise LengthMismatch(f"nuisances cover {nuisances.n} rows, data has {data.n}")
    folds = make_folds(data, config.K, config.seed) if folds is None else folds
    return nuisances, folds, {"propensity": "injected", "outcome0": "injected", "outcome1": "injected"}


def fit_orthogonal_learner(data: Dataset, config: OrthogonalFitConfig,
                           nuisances: NuisanceEstimates | NuisanceFit | None = None,
                           folds: FoldAssignment | None = None) -> CateModel:
    """Cross-fitted weighted orthogonal learner for ``config.weight_kind``.

    For each fold ``b`` the pseudo-outcome ``phi`` and weight
    ``w = (a - pi) lambda'(pi) + lambda(pi)`` are computed from nuisances
    fitted outside fold ``b``; rows with ``|w| < 1e-12`` are dropped and a
    weighted regression of ``phi`` on ``V`` is fitted on fold ``b``.

    Parameters
    ----------
    data : Dataset
    config : OrthogonalFitConfig
    nuisances : NuisanceEstimates or NuisanceFit, optional
        Pre-computed nuisances (oracle values or a shared cross-fit). When a
        plain :class:`NuisanceEstimates` is given it is used as-is.
    folds : FoldAssignment, optional
        Fold assignment for the second stage; defaults to the nuisance folds.

    Raises
    ------
    SingleArm, SingleArmInFold, EmptySecondStage
    """
    _check_arms(data.a)
    eta, folds, nspecs = _resolve_nuisances(data, config, nuisances, folds)
    kind = config.weight_kind
    phi, w, keep = pseudo_outcomes(data.y, data.a, eta, kind)
    usable = keep & (data.a == 1) if config.restrict_to_treated else keep
    models, chosen, info = _two_stage(data, folds, phi, w, usable, config.second_stage_specs, config.seed)
    info.update(
        nuisances=eta,
        lambda_sum=float(eval_weight_stack(kind, eta.pi_hat).lam.sum()),
        restrict_to_treated=config.restrict_to_treated,
    )
    return CateModel(str(kind), models, folds, kind, nspecs, chosen, config.seed,
                     data.d_v, data.v_columns, info)


def fit_ipw_learner(data: Dataset, config: OrthogonalFitConfig,
                    nuisances: NuisanceEstimates | NuisanceFit | None = None,
                    folds: FoldAssignment | None = None) -> CateModel:
    """Cross-fitted IPW learner: unit-weight regression of the IPW pseudo-outcome on ``V``.

    Only the propensity is needed; injected outcome nuisances are ignored.
    """
    _check_arms(data.a)
    eta, folds, nspecs = _resolve_nuisances(data, config, nuisances, folds, outcomes=False)
    nspecs = {"propensity": nspecs["propensity"]}
    phi = ipw_pseudo_outcome(data.y, data.a, eta.pi_hat)
    w = np.ones(data.n)
    usable = np.ones(data.n, dtype=bool)
    models, chosen, info = _two_stage(data, folds, phi, w, usable, config.second_stage_specs, config.seed)
    info.update(nuisances=eta)
    return CateModel("ipw", models, folds, None, nspecs, chosen, config.seed,
                     data.d_v, data.v_columns, info)


def fit_t_learner(data: Dataset, specs: Sequence[LearnerSpec] = DEFAULT_OUTCOME_SPECS,
                  K: int = DEFAULT_K, seed: int = 0) -> CateModel:
    """Plug-in learner: ``Q1_hat(x) - Q0_hat(x)`` from separate per-arm regressions.

    Each arm's spec is chosen by K-fold validation within that arm.

    Raises
    ------
    VSubsetNotSupported
        When ``V`` is a proper subset of ``X``; the difference of outcome
        regressions targets the effect given all of ``X``.
    SingleArm
    """
    if not data.v_is_x:
        raise VSubsetNotSupported("the T-learner estimates the effect given all of X; V must equal X")
    _check_arms(data.a)
    specs = tuple(specs)
    if not specs:
        raise InvalidSpec("need at least one learner spec")
    arm_models, arm_specs = [], []
    for arm in (0, 1):
        rows = np.flatnonzero(data.a == arm)
        x_arm, y_arm = data.x[rows], data.y[rows]
        if len(specs) == 1 or rows.size < 2:
            spec = specs[0]
        else:
            folds = kfold_assign(rows.size, min(K, rows.size), subseed(seed, 2, arm))
            spec = select_by_validation(specs, x_arm, y_arm, np.ones(rows.size), folds)
        arm_models.append(fit_regressor(spec, x_arm, y_arm))
        arm_specs.append(spec)
    model = _Difference(arm_models[1], arm_models[0])
    return CateModel("t", (model,), None, None, {"outcome": [str(s) for s in specs]},
                     tuple(arm_specs), seed, data.d_v, data.v_columns, {})


# ---------------------------------------------------------------------------
# Learner strings
# ---------------------------------------------------------------------------

LEARNER_NAMES = ("t", "ipw", "dr", "ps-dr", "r", "control-dr", "smoothed{...}")


def parse_learner(text: str):
    """Map ``t | ipw | dr | ps-dr | r | control-dr | smoothed{...}`` to ``"t"``, ``"ipw"`` or a WeightKind."""
    name = text.strip().lower()
    if name in ("t", "ipw"):
        return name
    return parse_weight_kind(name)


def fit_learner(name: str, data: Dataset, config: OrthogonalFitConfig,
                nuisances: NuisanceEstimates | NuisanceFit | None = None) -> CateModel:
    """Fit the learner named by a learner string.

    ``config.weight_kind`` is overridden by the kind in ``name``.
    """
    which = parse_learner(name)
    if which == "t":
        return fit_t_learner(data, config.outcome_specs, config.K, config.seed)
    if which == "ipw":
        return fit_ipw_learner(data, config, nuisances)
    cfg = config.with_(weight_kind=which, restrict_to_treated=which.name == PROPENSITY)
    return fit_orthogonal_learner(data, cfg, nuisances)
