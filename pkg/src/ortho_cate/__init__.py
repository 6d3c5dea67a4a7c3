"""Weighted Neyman-orthogonal learners for conditional average treatment effects."""

from .baselearners import (
    BoostedStumps,
    KnnRegression,
    LogisticRidge,
    RidgeLinear,
    fit_propensity,
    fit_regressor,
    parse_learner_spec,
    predict,
    select_by_validation,
)
from .core import (
    Dataset,
    FoldAssignment,
    SyntheticDataset,
    dataset_from_csv,
    kfold_assign,
    stratified_kfold_assign,
)
from .dgp import DgpParams, generate, true_cate, true_propensity
from .diagnostics import (
    BoundReport,
    NuisanceDirection,
    alpha_ratio,
    bound_constants,
    empirical_risk,
    orthogonality_probe,
    remainder_terms,
)
from .errors import OrthoCateError
from .metalearners import (
    CateModel,
    OrthogonalFitConfig,
    crossfit_nuisances,
    fit_ipw_learner,
    fit_learner,
    fit_orthogonal_learner,
    fit_t_learner,
    predict_cate,
)
from .metrics import mse, mse_pow, mse_treated
from .pseudo import NuisanceEstimates, ipw_pseudo_outcome, pseudo_outcome
from .weights import (
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

__version__ = "0.1.0"
