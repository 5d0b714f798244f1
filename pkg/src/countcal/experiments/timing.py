"""Wall-time sweeps over response dimension or number of runs.

Two measures are available. ``fit`` times a full hyperparameter fit plus
prediction of one unseen map. ``loglik`` fixes the hyperparameters and
times one likelihood evaluation plus that prediction, with ordering and
conditioning-set construction reported separately as setup.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from ..data import stack
from ..exact import DENSE_CAP, ExactGP, fit_mle_dense, predict_dense
from ..errors import ValidationError
from ..kernel import KernelSpec
from ..seeding import subseed
from ..vecchia import VecchiaSurrogate, build_neighbors, fit_vecchia, maximin_order
from .output import OutputDir
from .testbed import random_corpus

log = logging.getLogger(__name__)

RESPONSE = "response"
RUNS = "runs"
FIT = "fit"
LOGLIK = "loglik"


@dataclass(frozen=True)
class TimingConfig:
    axis: str = RESPONSE
    sizes: tuple = (1000, 2000, 4000, 8000, 16000)
    m_values: tuple = (25,)
    methods: tuple = ("vecchia",)
    repetitions: int = 5
    measure: str = FIT
    fixed: int | None = None  # runs (response axis) or grid points (runs axis)
    budget: int = 100
    dense_cap: int = DENSE_CAP
    timeout: float = 600.0  # seconds per repetition; slower cells are censored
    seed: int = 0

    def __post_init__(self):
        if self.axis not in (RESPONSE, RUNS):
            raise ValidationError(f"axis must be {RESPONSE!r} or {RUNS!r}")
        if self.measure not in (FIT, LOGLIK):
            raise ValidationError(f"measure must be {FIT!r} or {LOGLIK!r}")
        s = list(self.sizes)
        if not s or s != sorted(s) or len(set(s)) != len(s) or s[0] < 1:
            raise ValidationError("sizes must be positive and strictly ascending")
        if self.repetitions < 1 or not self.timeout > 0:
            raise ValidationError("repetitions and timeout must be positive")
        if set(self.methods) - {"vecchia", "dense"}:
            raise ValidationError(f"unknown method in {self.methods}")

    @property
    def fixed_size(self) -> int:
        if self.fixed is not None:
            return int(self.fixed)
        return 10 if self.axis == RESPONSE else 200

    def shape(self, size: int) -> tuple[int, int]:
        """(n_runs, n_grid) for one sweep size. On the response axis the size
        is the total n_M = n_runs * n_grid."""
        if self.axis == RESPONSE:
            return self.fixed_size, max(1, int(round(size / self.fixed_size)))
        return int(size), self.fixed_size

    def to_dict(self) -> dict:
        return {"axis": self.axis, "sizes": [int(s) for s in self.sizes], "m_values": [int(m) for m in self.m_values],
                "methods": list(self.methods), "repetitions": self.repetitions, "measure": self.measure,
                "fixed": self.fixed_size, "budget": self.budget, "dense_cap": self.dense_cap,
                "timeout": self.timeout, "seed": self.seed}


def fixed_spec(d: int, y) -> KernelSpec:
    v = float(np.var(y)) or 1.0
    return KernelSpec(np.full(d, 0.3), v, 1e-6 * v)


def _problem(cfg: TimingConfig, size: int, rep: int):
    n_runs, n_grid = cfg.shape(size)
    corpus = random_corpus(n_runs + 1, n_grid, subseed(cfg.seed, "timing", rep))
    train = stack(corpus.without_runs(n_runs))
    u = corpus.domain.normalize(corpus.designs[n_runs])
    Xq = np.hstack([train.grid, np.tile(u, (train.grid.shape[0], 1))])
    return train, Xq


def _time_vecchia(train, Xq, m, cfg):
    t0 = time.perf_counter()
    if cfg.measure == FIT:
        model = fit_vecchia(train, m, cfg.budget)
        t1 = t0
    else:
        spec = fixed_spec(train.d, train.responses)
        order = maximin_order(train.inputs, spec.theta)
        nb = build_neighbors(train.inputs, order, m, spec.theta)
        model = VecchiaSurrogate(spec, train, order, nb, m)
        terms = model.likelihood_terms()
        t1 = time.perf_counter()
        terms(spec)
    t2 = time.perf_counter()
    model.predict(Xq)
    t3 = time.perf_counter()
    return {"setup_seconds": t1 - t0, "core_seconds": t2 - t1, "predict_seconds": t3 - t2}


def _time_dense(train, Xq, cfg):
    t0 = time.perf_counter()
    if cfg.measure == FIT:
        spec = fit_mle_dense(train.inputs, train.responses, budget=cfg.budget, cap=cfg.dense_cap).spec
    else:
        spec = fixed_spec(train.d, train.responses)
    t1 = t0 if cfg.measure == FIT else time.perf_counter()
    gp = ExactGP(spec, train.inputs, train.responses)
    gp.log_likelihood()
    t2 = time.perf_counter()
    predict_dense(gp, Xq)
    t3 = time.perf_counter()
    return {"setup_seconds": t1 - t0, "core_seconds": t2 - t1, "predict_seconds": t3 - t2}


HEADER = ["axis", "size", "n_runs", "n_grid", "n_M", "method", "m", "repetitions", "censored", "note",
          "setup_seconds", "core_seconds", "predict_seconds", "total_seconds"]


def timing_sweep(config: TimingConfig = TimingConfig(), out_dir=None) -> list[dict]:
    """Mean elapsed times per size x method x m. ``total_seconds`` is the
    measured quantity (fit + predict, or likelihood + predict). In
    ``loglik`` mode ordering and neighbor search are reported as setup and
    excluded from it."""
    cells = [("vecchia", int(m)) for m in config.m_values if "vecchia" in config.methods]
    if "dense" in config.methods:
        cells.append(("dense", None))
    censored = {c: False for c in cells}
    # untimed pass at the smallest size so first-call dispatch costs stay out
    train, Xq = _problem(config, config.sizes[0], 0)
    for method, m in cells:
        if method == "vecchia":
            _time_vecchia(train, Xq, m, config)
        elif train.n <= config.dense_cap:
            _time_dense(train, Xq, config)
    rows = []
    for size in config.sizes:
        n_runs, n_grid = config.shape(size)
        n_M = n_runs * n_grid
        for cell in cells:
            method, m = cell
            row = {"axis": config.axis, "size": int(size), "n_runs": n_runs, "n_grid": n_grid, "n_M": n_M,
                   "method": method, "m": "" if m is None else m, "repetitions": 0, "censored": True, "note": ""}
            if method == "dense" and n_M > config.dense_cap:
                row["note"] = f"n_M={n_M} exceeds dense cap {config.dense_cap}"
            elif censored[cell]:
                row["note"] = "censored at a smaller size"
            else:
                times = []
                for rep in range(config.repetitions):
                    train, Xq = _problem(config, size, rep)
                    t = _time_vecchia(train, Xq, m, config) if method == "vecchia" else _time_dense(train, Xq, config)
                    times.append(t)
                    if t["core_seconds"] + t["predict_seconds"] > config.timeout:
                        censored[cell] = True
                        row["note"] = f"repetition {rep} exceeded timeout {config.timeout}s"
                        break
                if not censored[cell]:
                    row["censored"] = False
                    row["repetitions"] = len(times)
                    for k in ("setup_seconds", "core_seconds", "predict_seconds"):
                        row[k] = float(np.mean([t[k] for t in times]))
                    row["total_seconds"] = row["core_seconds"] + row["predict_seconds"]
            rows.append(row)
            log.info("timing %s", row)
    if out_dir is not None:
        od = OutputDir(out_dir)
        od.write_metrics(rows, HEADER)
        od.echo_config({"experiment": "bench", **config.to_dict()})
        od.write_manifest()
    return rows


def loglog_slope(rows, method: str = "vecchia", m: int | None = 25, x: str = "n_M") -> float:
    """Least-squares slope of log(total_seconds) on log(x) over uncensored rows."""
    sel = [r for r in rows if r["method"] == method and not r["censored"] and (m is None or r["m"] == m)]
    if len(sel) < 2:
        raise ValidationError("need at least two uncensored sizes for a slope")
    xs = np.log([float(r[x]) for r in sel])
    ys = np.log([float(r["total_seconds"]) for r in sel])
    return float(np.polyfit(xs, ys, 1)[0])
