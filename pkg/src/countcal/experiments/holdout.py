"""Hold-one-run-out surrogate benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..data import SimulatorCorpus, stack
from ..diagnostics import crps_gaussian, rmse
from ..errors import ValidationError
from ..exact import DENSE_CAP, ExactGP, fit_mle_dense, predict_dense
from ..vecchia import fit_vecchia, predict_vecchia
from .output import OutputDir, map_cells

VECCHIA = "vecchia"
DENSE = "dense"


@dataclass(frozen=True)
class HoldoutConfig:
    m_values: tuple = (25,)
    methods: tuple = (VECCHIA, DENSE)
    budget: int = 500
    dense_cap: int = DENSE_CAP
    dense_hypers: str = "vecchia"  # or "mle"
    held_out: tuple | None = None  # run indices; all runs by default
    workers: int = 1

    def __post_init__(self):
        if not self.m_values or any(int(m) < 1 for m in self.m_values):
            raise ValidationError("m values must be >= 1")
        if set(self.methods) - {VECCHIA, DENSE}:
            raise ValidationError(f"unknown method in {self.methods}")
        if self.dense_hypers not in ("vecchia", "mle"):
            raise ValidationError("dense_hypers must be 'vecchia' or 'mle'")

    def to_dict(self) -> dict:
        return {"m_values": [int(m) for m in self.m_values], "methods": list(self.methods),
                "budget": self.budget, "dense_cap": self.dense_cap, "dense_hypers": self.dense_hypers,
                "held_out": None if self.held_out is None else [int(h) for h in self.held_out],
                "workers": self.workers}


def score(pred_mean, pred_sd, nugget, actual) -> tuple[float, float]:
    """RMSE and mean Gaussian CRPS; the predictive sd includes the nugget."""
    sd = np.sqrt(np.asarray(pred_sd) ** 2 + nugget)
    return rmse(pred_mean, actual), float(np.mean(crps_gaussian(pred_mean, sd, actual)))


def _holdout_cell(args):
    i, corpus, h, cfg = args
    train = stack(corpus.without_runs(h))
    u = corpus.domain.normalize(corpus.designs[h])
    Xq = np.hstack([train.grid, np.tile(u, (train.grid.shape[0], 1))])
    actual = corpus.rates[h]
    rows = []
    first_spec = None
    base = {"cell": i, "held_out": corpus.run_ids[h], "n_train": train.n}
    if VECCHIA in cfg.methods or cfg.dense_hypers == "vecchia":
        for m in cfg.m_values:
            t0 = time.perf_counter()
            model = fit_vecchia(train, int(m), cfg.budget)
            t1 = time.perf_counter()
            pred = predict_vecchia(model, Xq)
            t2 = time.perf_counter()
            first_spec = first_spec or model.spec
            if VECCHIA in cfg.methods:
                r, c = score(pred.means, pred.sds, model.spec.nugget, actual)
                rows.append({**base, "method": VECCHIA, "m": int(m), "rmse": r, "crps": c,
                             "loglik": model.log_likelihood(), "note": "",
                             "fit_seconds": t1 - t0, "predict_seconds": t2 - t1})
    if DENSE in cfg.methods:
        row = {**base, "method": DENSE, "m": train.n - 1}
        if train.n > cfg.dense_cap:
            row.update({"note": f"skipped: n_M={train.n} exceeds dense cap {cfg.dense_cap}"})
        else:
            t0 = time.perf_counter()
            if cfg.dense_hypers == "mle":
                spec = fit_mle_dense(train.inputs, train.responses, cap=cfg.dense_cap).spec
                note = "mle"
            else:
                spec, note = first_spec, f"vecchia m={int(cfg.m_values[0])} hyperparameters"
            gp = ExactGP(spec, train.inputs, train.responses)
            t1 = time.perf_counter()
            pred = predict_dense(gp, Xq)
            t2 = time.perf_counter()
            r, c = score(pred.means, pred.sds, spec.nugget, actual)
            row.update({"rmse": r, "crps": c, "loglik": gp.log_likelihood(), "note": note,
                        "fit_seconds": t1 - t0, "predict_seconds": t2 - t1})
        rows.append(row)
    return i, rows


HEADER = ["cell", "held_out", "n_train", "method", "m", "rmse", "crps", "loglik", "note",
          "fit_seconds", "predict_seconds"]


def holdout_benchmark(corpus: SimulatorCorpus, config: HoldoutConfig = HoldoutConfig(), out_dir=None) -> list[dict]:
    """For each held-out run: fit on the remaining runs, predict the held-out
    map and score it, per method and neighbor count."""
    if corpus.n_runs < 3:
        raise ValidationError("hold-one-out needs at least 3 runs")
    held = range(corpus.n_runs) if config.held_out is None else config.held_out
    jobs = [(i, corpus, int(h), config) for i, h in enumerate(held)]
    rows = [r for _, cell in map_cells(_holdout_cell, jobs, config.workers) for r in cell]
    if out_dir is not None:
        od = OutputDir(out_dir)
        od.write_metrics(rows, HEADER)
        od.write_metrics(summarize(rows), SUMMARY_HEADER, "summary.csv")
        od.echo_config({"experiment": "holdout", "n_runs": corpus.n_runs, "n_grid": corpus.n_grid,
                        **config.to_dict()})
        od.write_manifest()
    return rows


SUMMARY_HEADER = ["method", "m", "cells", "rmse", "crps", "fit_seconds", "predict_seconds"]


def summarize(rows: Sequence[dict]) -> list[dict]:
    """Mean scores per (method, m) over held-out runs that were scored."""
    keys = []
    for r in rows:
        k = (r["method"], r["m"] if r["method"] == VECCHIA else -1)
        if "rmse" in r and k not in keys:
            keys.append(k)
    out = []
    for method, m in keys:
        sel = [r for r in rows if r["method"] == method and "rmse" in r and (method != VECCHIA or r["m"] == m)]
        out.append({
            "method": method, "m": m if method == VECCHIA else "", "cells": len(sel),
            "rmse": float(np.mean([r["rmse"] for r in sel])), "crps": float(np.mean([r["crps"] for r in sel])),
            "fit_seconds": float(np.mean([r["fit_seconds"] for r in sel])),
            "predict_seconds": float(np.mean([r["predict_seconds"] for r in sel])),
        })
    return out
