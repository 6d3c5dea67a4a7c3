"""Test-set error metrics for CATE estimates."""

import numpy as np

from .errors import EmptyInput, LengthMismatch, NoTreated
from .weights import check_propensity


def _pair(tau_hat, tau):
    tau_hat = np.asarray(tau_hat, dtype=float).reshape(-1)
    tau = np.asarray(tau, dtype=float).reshape(-1)
    if tau_hat.shape != tau.shape:
        raise LengthMismatch(f"tau_hat has {tau_hat.size} entries, tau has {tau.size}")
    if tau.size == 0:
        raise EmptyInput("metrics need at least one observation")
    return tau_hat, tau


def mse(tau_hat, tau) -> float:
    """Mean squared error."""
    tau_hat, tau = _pair(tau_hat, tau)
    return float(np.mean((tau_hat - tau) ** 2))


def mse_treated(tau_hat, tau, a) -> float:
    """Mean squared error over the rows with ``a == 1``."""
    tau_hat, tau = _pair(tau_hat, tau)
    a = np.asarray(a).reshape(-1)
    if a.shape != tau.shape:
        raise LengthMismatch(f"a has {a.size} entries, tau has {tau.size}")
    treated = a == 1
    if not treated.any():
        raise NoTreated("mse_treated needs at least one treated row")
    return float(np.mean((tau_hat[treated] - tau[treated]) ** 2))


def mse_pow(tau_hat, tau, pi) -> float:
    """Propensity-overlap-weighted MSE, weights ``pi (1 - pi)``."""
    tau_hat, tau = _pair(tau_hat, tau)
    pi = check_propensity(np.asarray(pi, dtype=float).reshape(-1))
    if pi.shape != tau.shape:
        raise LengthMismatch(f"pi has {pi.size} entries, tau has {tau.size}")
    return weighted_mse(tau_hat, tau, pi * (1.0 - pi))


def weighted_mse(tau_hat, tau, w) -> float:
    """``sum w (tau_hat - tau)^2 / sum w`` for nonnegative weights with positive sum."""
    tau_hat, tau = _pair(tau_hat, tau)
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape != tau.shape:
        raise LengthMismatch(f"w has {w.size} entries, tau has {tau.size}")
    if np.any(w < 0) or not np.sum(w) > 0:
        raise EmptyInput("weights must be nonnegative with a positive sum")
    return float(np.sum(w * (tau_hat - tau) ** 2) / np.sum(w))


METRICS = {
    "mse": lambda tau_hat, tau, a, pi: mse(tau_hat, tau),
    "mse_treated": lambda tau_hat, tau, a, pi: mse_treated(tau_hat, tau, a),
    "mse_pow": lambda tau_hat, tau, a, pi: mse_pow(tau_hat, tau, pi),
}
