"""Synthetic-truth experiments: data generation, recovery grids and the
discrepancy sweep."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..data import FieldDataset, SimulatorCorpus, stack
from ..diagnostics import coverage_tally
from ..errors import ValidationError
from ..inversion import CalibrationProblem, DiscrepancySpec, McmcConfig, metropolis_calibrate
from ..seeding import substream, subseed
from ..vecchia import fit_vecchia
from .output import OutputDir, map_cells, write_table
from .testbed import FieldSchedule, skymap_rates

log = logging.getLogger(__name__)

TruthFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class SynthResult:
    field: FieldDataset
    u_star: np.ndarray  # raw units
    rates: np.ndarray  # true rates at the field locations (before delta)
    seed: int
    delta: float = 1.0


def synth_generate(corpus: SimulatorCorpus, u_star, exposures, backgrounds, seed: int,
                   directions=None, truth_fn: TruthFn | None = None, delta: float = 1.0,
                   index: int = 0) -> SynthResult:
    """Poisson field counts with mean ``(delta * rate* + background) * exposure``.

    Without ``truth_fn`` the truth must be a design row of ``corpus`` and the
    field sits on (a subset of) its grid; with ``truth_fn(u_norm, directions)``
    any in-domain ``u_star`` and any directions work.
    """
    u_star = np.asarray(u_star, dtype=float).ravel()
    exposures = np.asarray(exposures, dtype=float).ravel()
    backgrounds = np.asarray(backgrounds, dtype=float).ravel()
    if not np.all(corpus.domain.contains(u_star)):
        raise ValidationError("u* lies outside the parameter domain")
    if not delta > 0:
        raise ValidationError("delta must be positive")
    if truth_fn is None:
        r = corpus.run_index(u_star)
        if r is None:
            raise ValidationError("u* is not a design row and no truth function was supplied")
        if directions is None:
            idx = np.arange(corpus.n_grid)
        else:
            idx = _grid_lookup(corpus.grid, np.asarray(directions, dtype=float))
        dirs = corpus.grid[idx]
        rates = corpus.rates[r, idx]
    else:
        if directions is None:
            raise ValidationError("a truth function needs field directions")
        dirs = np.asarray(directions, dtype=float)
        rates = np.asarray(truth_fn(corpus.domain.normalize(u_star), dirs), dtype=float)
    if not (rates.size == exposures.size == backgrounds.size == dirs.shape[0]):
        raise ValidationError("directions, exposures and backgrounds must share one length")
    rng = substream(seed, "synth", index)
    counts = rng.poisson((delta * rates + backgrounds) * exposures)
    label = f"synthetic seed={seed} index={index} u*={[float(v) for v in u_star]} delta={delta!r}"
    fd = FieldDataset(dirs, counts, exposures, backgrounds, label=label)
    return SynthResult(fd, u_star, rates, seed, delta)


def _grid_lookup(grid: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    pos = {row.tobytes(): i for i, row in enumerate(np.ascontiguousarray(grid))}
    try:
        return np.array([pos[np.ascontiguousarray(d).tobytes()] for d in dirs], dtype=np.int64)
    except KeyError:
        raise ValidationError("field directions must be grid points when no truth function is given") from None


def run_hash(design_row, rates_row) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(design_row, dtype=float).tobytes())
    h.update(np.ascontiguousarray(rates_row, dtype=float).tobytes())
    return h.hexdigest()


def training_without(corpus: SimulatorCorpus, r: int) -> SimulatorCorpus:
    """Corpus minus run ``r``, verified by content hash."""
    sub = corpus.without_runs(r)
    banned = run_hash(corpus.designs[r], corpus.rates[r])
    if any(run_hash(d, y) == banned for d, y in zip(sub.designs, sub.rates)):
        raise AssertionError("truth run leaked into surrogate training data")
    return sub


@dataclass(frozen=True)
class RecoveryConfig:
    m: int = 25
    budget: int = 500
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    mass: float = 0.95
    seed: int = 0
    workers: int = 1
    write_draws: bool = True

    def to_dict(self) -> dict:
        return {"m": self.m, "budget": self.budget, "mcmc": self.mcmc.to_dict(), "mass": self.mass,
                "seed": self.seed, "workers": self.workers}


@dataclass
class RecoveryReport:
    rows: list
    coverage: object
    draws: dict  # cell index -> PosteriorSamples

    @property
    def joint_coverage(self) -> float:
        return self.coverage.joint


def _recovery_cell(args):
    corpus, r, schedule, cfg, truth_fn, i, deltas = args
    t0 = time.perf_counter()
    sub = training_without(corpus, r)
    surrogate = fit_vecchia(stack(sub), cfg.m, cfg.budget)
    fit_s = time.perf_counter() - t0
    u_star = corpus.designs[r]
    out = []
    for j, delta in enumerate(deltas):
        cell = i if delta is None else i * 1000 + j
        syn = synth_generate(corpus, u_star, schedule.exposures, schedule.backgrounds,
                             subseed(cfg.seed, "synth-cell", cell), schedule.directions, truth_fn,
                             1.0 if delta is None else delta, index=cell)
        disc = None if delta is None else DiscrepancySpec()
        prob = CalibrationProblem.from_surrogate(syn.field, surrogate, corpus.domain, discrepancy=disc)
        mc = replace(cfg.mcmc, seed=subseed(cfg.seed, "chain-cell", cell), chain=cell)
        t1 = time.perf_counter()
        post = metropolis_calibrate(prob, mc)
        out.append((j, delta, syn, post, fit_s, time.perf_counter() - t1))
    return i, r, surrogate.spec, out


def run_recovery_grid(corpus: SimulatorCorpus, truths: Sequence[int], schedule: FieldSchedule,
                      config: RecoveryConfig = RecoveryConfig(), truth_fn: TruthFn | None = skymap_rates,
                      out_dir=None, deltas: Sequence[float] | None = None) -> RecoveryReport:
    """For each truth run: drop it, fit the surrogate, synthesize field data at
    its parameters, calibrate and record HPD coverage.

    With ``deltas`` every truth is additionally swept over multiplicative
    discrepancies (one surrogate fit per truth, one chain per delta).
    """
    truths = [int(t) for t in truths]
    if not truths:
        raise ValidationError("need at least one truth")
    d_list = [None] if deltas is None else [float(d) for d in deltas]
    jobs = [(corpus, r, schedule, config, truth_fn, i, d_list) for i, r in enumerate(truths)]
    results = map_cells(_recovery_cell, jobs, config.workers)
    names = corpus.domain.names
    rows, reps, draws = [], [], {}
    od = OutputDir(out_dir) if out_dir is not None else None
    for i, r, spec, cells in results:
        for j, delta, syn, post, fit_s, mc_s in cells:
            hpd = post.hpd(config.mass)
            row = {"cell": i, "run_id": corpus.run_ids[r]}
            if delta is not None:
                dh = post.delta_hpd(config.mass)
                row.update({"delta_true": delta, "delta_mean": float(post.delta.mean()),
                            "delta_lower": dh.lower, "delta_upper": dh.upper,
                            "delta_covered": dh.contains(delta)})
            for k, n in enumerate(names):
                row[f"{n}_true"] = float(syn.u_star[k])
                row[f"{n}_mean"] = float(post.u[:, k].mean())
                row[f"{n}_lower"] = hpd[k].lower
                row[f"{n}_upper"] = hpd[k].upper
                row[f"{n}_covered"] = hpd[k].contains(float(syn.u_star[k]))
            row["joint_covered"] = all(h.contains(float(t)) for h, t in zip(hpd, syn.u_star))
            row["acceptance"] = post.acceptance["u"]
            row["total_counts"] = int(syn.field.counts.sum())
            row["warning"] = post.warning or ""
            row["fit_seconds"] = fit_s
            row["mcmc_seconds"] = mc_s
            rows.append(row)
            reps.append((syn.u_star, hpd))
            key = i if delta is None else (i, j)
            draws[key] = post
            if od is not None and config.write_draws:
                tag = f"{i:03d}" if delta is None else f"{i:03d}_{j:02d}"
                post.write_csv(od.file(f"draws/posterior_{tag}.csv"))
    coverage = coverage_tally(reps)
    if od is not None:
        od.write_metrics(rows)
        cov_rows = coverage.as_rows(names)
        if deltas is not None:
            n_cov = sum(int(r["delta_covered"]) for r in rows)
            cov_rows.append({"target": "delta", "covered": n_cov, "replicates": len(rows),
                             "fraction": n_cov / len(rows)})
        write_table(od.file("coverage.csv"), cov_rows)
        od.echo_config({"experiment": "recovery" if deltas is None else "discrepancy",
                        "truths": truths, "deltas": d_list if deltas is not None else None,
                        "n_field": schedule.n, **config.to_dict()})
        od.write_manifest()
    return RecoveryReport(rows, coverage, draws)


def discrepancy_sweep(corpus: SimulatorCorpus, truth: int, deltas: Sequence[float], schedule: FieldSchedule,
                      config: RecoveryConfig = RecoveryConfig(), truth_fn: TruthFn | None = skymap_rates,
                      out_dir=None) -> RecoveryReport:
    """Counts drawn with rate ``delta * m(u*, x) + background`` for each delta;
    calibrate u and delta jointly."""
    if len(deltas) < 1 or any(not d > 0 for d in deltas):
        raise ValidationError("deltas must be positive")
    return run_recovery_grid(corpus, [truth], schedule, config, truth_fn, out_dir, deltas)
