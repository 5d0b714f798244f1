"""Derivative-free hyperparameter search shared by the dense and Vecchia fits."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .kernel import KernelSpec

log = logging.getLogger(__name__)

THETA_BOUNDS = (1e-3, 1e3)
TAU2_REL_BOUNDS = (1e-6, 1e6)
NUGGET_REL_FLOOR = 1e-8
BAD = 1e300


@dataclass
class FitResult:
    spec: KernelSpec
    loglik: float
    init_loglik: float
    n_evals: int
    converged: bool
    warning: str | None = None
    extra: dict = field(default_factory=dict)


def response_scale(y: np.ndarray) -> float:
    v = float(np.var(y))
    return v if v > 0 else 1.0


def log_bounds(d: int, scale: float) -> list[tuple[float, float]]:
    lo_t, hi_t = np.log(THETA_BOUNDS)
    return (
        [(lo_t, hi_t)] * d
        + [(np.log(TAU2_REL_BOUNDS[0] * scale), np.log(TAU2_REL_BOUNDS[1] * scale))]
        + [(np.log(NUGGET_REL_FLOOR * scale), np.log(scale))]
    )


def pack(spec: KernelSpec, bounds) -> np.ndarray:
    nug = max(spec.nugget, np.exp(bounds[-1][0]))
    x = np.concatenate([np.log(spec.theta), [np.log(spec.tau2), np.log(nug)]])
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(x, lo, hi)


def unpack(x: np.ndarray) -> KernelSpec:
    return KernelSpec(np.exp(x[:-2]), float(np.exp(x[-2])), float(np.exp(x[-1])))


def default_init(d: int, y: np.ndarray) -> KernelSpec:
    s = response_scale(y)
    return KernelSpec(np.full(d, 0.3), s, 1e-6 * s)


def maximize(
    loglik: Callable[[KernelSpec], float],
    init: KernelSpec,
    scale: float,
    budget: int,
    restarts: int = 2,
) -> FitResult:
    """Maximize ``loglik`` over log(theta, tau2, nugget) with Nelder-Mead.

    The search restarts from the incumbent ``restarts`` times (fresh simplex)
    while budget remains. Evaluations that fail numerically count as
    ``-inf``. The returned log-likelihood is never below the initial one.
    """
    bounds = log_bounds(init.d, scale)
    x0 = pack(init, bounds)
    evals = 0
    best_x = x0
    best_f = BAD

    def f(x):
        nonlocal evals, best_x, best_f
        evals += 1
        try:
            val = -float(loglik(unpack(x)))
        except ArithmeticError:
            val = BAD
        if not np.isfinite(val):
            val = BAD
        if val < best_f:
            best_f, best_x = val, np.array(x)
        return val

    f0 = f(x0)
    converged = False
    for attempt in range(1 + restarts):
        remaining = budget - evals
        if remaining <= 1:
            break
        start_f = best_f
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(
                f, best_x, method="Nelder-Mead", bounds=bounds,
                options={"maxfev": remaining, "xatol": 1e-4, "fatol": 1e-7, "adaptive": True},
            )
        converged = bool(res.success)
        if attempt > 0 and start_f - best_f < 1e-7:
            break
    warning = None
    if not converged:
        warning = f"optimizer budget of {budget} evaluations exhausted; returning best-so-far"
        log.warning(warning)
    return FitResult(unpack(best_x), -best_f, -f0, evals, converged, warning)
