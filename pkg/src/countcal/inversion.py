"""Bayesian inversion of field counts through a surrogate.

The sampler is Metropolis-within-Gibbs in normalized parameter space
(uniform prior on the unit box): one Gaussian random-walk block for the
whole parameter vector and, when the multiplicative discrepancy is on, a
second random-walk block on log(delta). The surrogate enters as a plug-in
mean rate at every field location.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml
from scipy.special import gammaln

from .data import FieldDataset, ParameterDomain, normalize_locations
from .diagnostics import HpdInterval, hpd_interval
from .errors import CalibrationError, CountcalError, ValidationError
from .exact import ExactGP, gaussian_marginal_loglik, predict_dense
from .seeding import substream
from .vecchia import VecchiaSurrogate

log = logging.getLogger(__name__)

EPS = 1e-10
POISSON = "poisson"
GAUSSIAN = "gaussian"


# ---------------------------------------------------------------------------
# likelihoods
# ---------------------------------------------------------------------------


def poisson_terms(counts, exposures, backgrounds, rates, delta: float = 1.0) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    bad = np.flatnonzero(~np.isfinite(rates))
    if bad.size:
        raise ValidationError(f"non-finite surrogate rate at field index {int(bad[0])}")
    y = np.asarray(counts, dtype=float)
    mu = np.maximum(rates * delta + np.asarray(backgrounds, dtype=float), EPS)
    lam = mu * np.asarray(exposures, dtype=float)
    return y * np.log(lam) - lam - gammaln(y + 1.0)


def poisson_loglik(field_data: FieldDataset, rates, delta: float = 1.0) -> float:
    """Poisson log-likelihood of the field counts with mean
    ``max(rate * delta + background, 1e-10) * exposure``."""
    if np.shape(rates) != (field_data.n,):
        raise ValidationError(f"need {field_data.n} rates, got shape {np.shape(rates)}")
    return float(np.sum(poisson_terms(field_data.counts, field_data.exposures, field_data.backgrounds, rates, delta)))


# ---------------------------------------------------------------------------
# forward models: anything with rates(u_norm) -> (n_F,) array
# ---------------------------------------------------------------------------


class SurrogateModel:
    """Vecchia surrogate mean at fixed field locations (cached predictor)."""

    def __init__(self, surrogate: VecchiaSurrogate, field_inputs):
        self.predictor = surrogate.field_predictor(field_inputs)

    def rates(self, u_norm) -> np.ndarray:
        return self.predictor.rates(u_norm)


class ExactModel:
    """Dense GP mean at fixed field locations."""

    def __init__(self, gp: ExactGP, field_inputs):
        self.gp = gp
        self.field_inputs = np.atleast_2d(np.asarray(field_inputs, dtype=float))

    def rates(self, u_norm) -> np.ndarray:
        u = np.asarray(u_norm, dtype=float).ravel()
        X = np.hstack([self.field_inputs, np.tile(u, (self.field_inputs.shape[0], 1))])
        return predict_dense(self.gp, X).means


class FunctionModel:
    """Wraps ``fn(u_norm) -> rates``; used for known-truth simulators."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def rates(self, u_norm) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(u_norm, dtype=float)), dtype=float)


def field_inputs(field_data: FieldDataset) -> np.ndarray:
    """Spatial surrogate inputs for the field locations."""
    return normalize_locations(field_data.coords) if field_data.spherical else np.asarray(field_data.coords)


# ---------------------------------------------------------------------------
# problem / config / result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscrepancySpec:
    """Multiplicative discrepancy with log(delta) ~ Normal(prior_mean, prior_sd)."""

    prior_mean: float = 0.0
    prior_sd: float = 1.0
    initial: float = 1.0

    def __post_init__(self):
        if not self.prior_sd > 0 or not self.initial > 0:
            raise ValidationError("discrepancy prior sd and initial delta must be positive")

    def log_prior(self, log_delta: float) -> float:
        z = (log_delta - self.prior_mean) / self.prior_sd
        return -0.5 * z * z


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 10_000
    burn_in: int = 1_000
    thin: int = 10
    proposal_sd: float | tuple = 0.05
    delta_proposal_sd: float = 0.1
    adapt: bool = True
    target_rate: float = 0.30
    adapt_every: int = 100
    stall_window: int = 1_000
    seed: int = 0
    chain: int = 0
    initial: tuple | None = None  # normalized starting point; box centre by default

    def __post_init__(self):
        if not (self.iterations > self.burn_in >= 0):
            raise ValidationError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if np.any(np.asarray(self.proposal_sd, dtype=float) <= 0) or not self.delta_proposal_sd > 0:
            raise ValidationError("proposal sds must be positive")
        if not 0 < self.target_rate < 1:
            raise ValidationError("target acceptance rate must lie in (0, 1)")
        if self.adapt_every < 1 or self.stall_window < 1:
            raise ValidationError("adapt_every and stall_window must be >= 1")

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        d = asdict(self)
        d["proposal_sd"] = np.asarray(self.proposal_sd, dtype=float).tolist()
        if self.initial is not None:
            d["initial"] = [float(v) for v in self.initial]
        return d


@dataclass
class CalibrationProblem:
    """Field data, forward model and prior box.

    ``model.rates(u_norm)`` returns the mean rate at each field location for a
    normalized parameter vector. In ``gaussian`` mode the field response is
    ``observations`` (defaults to counts/exposure) and the likelihood is the
    sigma-marginalized Gaussian one.
    """

    field: FieldDataset
    model: object
    domain: ParameterDomain
    likelihood: str = POISSON
    discrepancy: DiscrepancySpec | None = None
    observations: np.ndarray | None = None

    def __post_init__(self):
        if self.likelihood not in (POISSON, GAUSSIAN):
            raise ValidationError(f"unknown likelihood mode {self.likelihood!r}")
        if not hasattr(self.model, "rates"):
            raise ValidationError("model must provide rates(u_norm)")
        if self.likelihood == GAUSSIAN:
            obs = self.field.counts / self.field.exposures if self.observations is None else self.observations
            obs = np.asarray(obs, dtype=float).ravel()
            if obs.size != self.field.n or not np.all(np.isfinite(obs)):
                raise ValidationError("gaussian observations must be finite, one per field location")
            self.observations = obs

    @classmethod
    def from_surrogate(cls, field_data: FieldDataset, surrogate: VecchiaSurrogate, domain: ParameterDomain,
                       **kw) -> "CalibrationProblem":
        if surrogate.data.d != surrogate.n_spatial + domain.p:
            raise ValidationError(
                f"surrogate has {surrogate.data.d} inputs, expected {surrogate.n_spatial} + {domain.p}"
            )
        return cls(field_data, SurrogateModel(surrogate, field_inputs(field_data)), domain, **kw)

    def loglik(self, u_norm, delta: float = 1.0) -> float:
        rates = self.model.rates(u_norm)
        if self.likelihood == GAUSSIAN:
            return gaussian_marginal_loglik(self.observations - delta * rates)
        return poisson_loglik(self.field, rates, delta)


@dataclass
class PosteriorSamples:
    u: np.ndarray  # (s, p) raw units
    u_norm: np.ndarray  # (s, p)
    delta: np.ndarray | None
    iters: np.ndarray  # stored iteration numbers (1-based)
    stored_loglik: np.ndarray
    accepted: np.ndarray  # u-block decision at each stored iteration
    loglik_trace: np.ndarray  # (T,)
    acceptance: dict  # post burn-in acceptance per block
    proposal_sd: dict  # final (frozen) proposal sds per block
    seed: int
    config: dict
    names: tuple = ()
    warning: str | None = None
    decisions: np.ndarray | None = None  # (T,) u-block accept flags
    log_ratios: np.ndarray | None = None  # (T, 4): loglik ratio, log prior ratio, log q ratio, log U

    @property
    def n(self) -> int:
        return self.u.shape[0]

    def hpd(self, mass: float = 0.95) -> list[HpdInterval]:
        return [hpd_interval(self.u[:, k], mass) for k in range(self.u.shape[1])]

    def delta_hpd(self, mass: float = 0.95) -> HpdInterval:
        if self.delta is None:
            raise ValidationError("chain has no discrepancy block")
        return hpd_interval(self.delta, mass)

    def write_csv(self, path) -> None:
        p = self.u.shape[1]
        header = ["iter"] + [f"u_{k + 1}" for k in range(p)]
        if self.delta is not None:
            header.append("delta")
        header += ["loglik", "accepted"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(self.n):
                row = [int(self.iters[i])] + [repr(float(v)) for v in self.u[i]]
                if self.delta is not None:
                    row.append(repr(float(self.delta[i])))
                row += [repr(float(self.stored_loglik[i])), int(self.accepted[i])]
                w.writerow(row)

    def summary(self, mass: float = 0.95) -> dict:
        names = list(self.names) or [f"u_{k + 1}" for k in range(self.u.shape[1])]
        out = {
            "draws": int(self.n),
            "seed": int(self.seed),
            "posterior_mean": {n: float(v) for n, v in zip(names, self.u.mean(axis=0))},
            "hpd": {n: [h.lower, h.upper] for n, h in zip(names, self.hpd(mass))},
            "hpd_mass": mass,
            "acceptance": {k: float(v) for k, v in self.acceptance.items()},
            "proposal_sd": self.proposal_sd,
            "warning": self.warning,
            "config": self.config,
        }
        if self.delta is not None:
            h = self.delta_hpd(mass)
            out["posterior_mean"]["delta"] = float(self.delta.mean())
            out["hpd"]["delta"] = [h.lower, h.upper]
        return out

    def write_summary(self, path, mass: float = 0.95) -> None:
        Path(path).write_text(yaml.safe_dump(self.summary(mass), sort_keys=False))


# ---------------------------------------------------------------------------
# sampler
# ---------------------------------------------------------------------------


def adapt_proposal(accepts: Sequence[bool], sds, target: float = 0.30) -> np.ndarray:
    """Scale proposal sds by ``exp(observed_rate - target)`` over a window."""
    acc = np.asarray(accepts, dtype=float)
    rate = float(acc.mean()) if acc.size else target
    return np.asarray(sds, dtype=float) * math.exp(rate - target)


def _run_chain(problem: CalibrationProblem, config: McmcConfig) -> PosteriorSamples:
    p = problem.domain.p
    disc = problem.discrepancy
    rng = substream(config.seed, "chain", config.chain)
    sd_u = np.broadcast_to(np.asarray(config.proposal_sd, dtype=float), (p,)).copy()
    sd_d = float(config.delta_proposal_sd)
    u = np.full(p, 0.5) if config.initial is None else np.asarray(config.initial, dtype=float).copy()
    if u.shape != (p,) or np.any(u < 0) or np.any(u > 1):
        raise ValidationError("initial point must lie in the normalized unit box")
    eta = math.log(disc.initial) if disc else 0.0

    def ll_at(uu, ee, it):
        try:
            val = problem.loglik(uu, math.exp(ee))
        except CountcalError as exc:
            raise CalibrationError(f"likelihood evaluation failed: {exc}", it) from exc
        if not math.isfinite(val):
            raise CalibrationError("non-finite log-likelihood", it)
        return val

    T, B, k = config.iterations, config.burn_in, config.thin
    ll = ll_at(u, eta, 0)
    s = config.n_stored
    out_u = np.empty((s, p))
    out_d = np.empty(s) if disc else None
    out_it = np.empty(s, dtype=np.int64)
    out_ll = np.empty(s)
    out_acc = np.empty(s, dtype=np.int8)
    trace = np.empty(T)
    acc_u = np.zeros(T, dtype=bool)
    acc_d = np.zeros(T, dtype=bool)
    ratios = np.empty((T, 4))
    run = 0
    stalled_at = None
    j = 0
    for t in range(1, T + 1):
        # parameter block
        prop = u + sd_u * rng.standard_normal(p)
        log_unif = math.log(rng.random())
        if np.all(prop >= 0.0) and np.all(prop <= 1.0):
            ll_new = ll_at(prop, eta, t)
            d_ll, d_prior = ll_new - ll, 0.0
        else:
            ll_new, d_ll, d_prior = -math.inf, math.nan, -math.inf
        log_ratio = d_ll + d_prior + 0.0 if d_prior == 0.0 else -math.inf  # q ratio is 1
        ratios[t - 1] = (d_ll, d_prior, 0.0, log_unif)
        if log_unif < log_ratio:
            u, ll = prop, ll_new
            acc_u[t - 1] = True
        # discrepancy block
        if disc:
            eta_new = eta + sd_d * rng.standard_normal()
            log_unif_d = math.log(rng.random())
            ll_new = ll_at(u, eta_new, t)
            log_ratio = ll_new - ll + disc.log_prior(eta_new) - disc.log_prior(eta)
            if log_unif_d < log_ratio:
                eta, ll = eta_new, ll_new
                acc_d[t - 1] = True
        trace[t - 1] = ll
        if t <= B:
            if config.adapt and t % config.adapt_every == 0:
                w = slice(t - config.adapt_every, t)
                sd_u = adapt_proposal(acc_u[w], sd_u, config.target_rate)
                if disc:
                    sd_d = float(adapt_proposal(acc_d[w], sd_d, config.target_rate))
        else:
            run = 0 if acc_u[t - 1] else run + 1
            if run >= config.stall_window and stalled_at is None:
                stalled_at = t
            if (t - B) % k == 0:
                out_u[j] = u
                if disc:
                    out_d[j] = math.exp(eta)
                out_it[j] = t
                out_ll[j] = ll
                out_acc[j] = acc_u[t - 1]
                j += 1
    warning = None
    if stalled_at is not None:
        warning = f"no parameter-block acceptance in {config.stall_window} consecutive post-burn-in iterations (ending at {stalled_at})"
        log.warning(warning)
    acceptance = {"u": float(acc_u[B:].mean())}
    sds = {"u": [float(v) for v in sd_u]}
    if disc:
        acceptance["delta"] = float(acc_d[B:].mean())
        sds["delta"] = sd_d
    cfg = config.to_dict()
    cfg["likelihood"] = problem.likelihood
    cfg["discrepancy"] = asdict(disc) if disc else None
    return PosteriorSamples(
        u=problem.domain.denormalize(out_u), u_norm=out_u, delta=out_d, iters=out_it,
        stored_loglik=out_ll, accepted=out_acc, loglik_trace=trace, acceptance=acceptance,
        proposal_sd=sds, seed=config.seed, config=cfg, names=problem.domain.names,
        warning=warning, decisions=acc_u, log_ratios=ratios,
    )


def metropolis_calibrate(problem: CalibrationProblem, config: McmcConfig = McmcConfig()) -> PosteriorSamples:
    """Adaptive random-walk Metropolis for the parameters (discrepancy, if set
    on the problem, gets its own block)."""
    return _run_chain(problem, config)


def metropolis_calibrate_with_discrepancy(problem: CalibrationProblem,
                                          config: McmcConfig = McmcConfig()) -> PosteriorSamples:
    if problem.discrepancy is None:
        problem = CalibrationProblem(problem.field, problem.model, problem.domain, problem.likelihood,
                                     DiscrepancySpec(), problem.observations)
    return _run_chain(problem, config)


def gaussian_calibrate(problem: CalibrationProblem, config: McmcConfig = McmcConfig()) -> PosteriorSamples:
    if problem.likelihood != GAUSSIAN:
        raise ValidationError("gaussian_calibrate needs a problem in gaussian likelihood mode")
    return _run_chain(problem, config)
