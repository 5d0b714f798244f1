"""Cross-validated CRPS surfaces over the parameter box.

Field locations are split into folds (seeded shuffle, then round-robin).
For each fold the parameters are calibrated on the other folds; the
held-out counts are then scored with the Poisson CRPS of the plug-in
surrogate prediction along one line per parameter (others fixed at the
fold's posterior mean) and on a lattice over the first two parameters.
Surfaces are averaged over folds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..data import FieldDataset, ParameterDomain
from ..diagnostics import crps_poisson, write_crps_grid_csv
from ..errors import ValidationError
from ..inversion import CalibrationProblem, McmcConfig, SurrogateModel, field_inputs, metropolis_calibrate
from ..seeding import substream, subseed
from .output import OutputDir, map_cells

log = logging.getLogger(__name__)

ModelFactory = Callable[[FieldDataset], object]


@dataclass(frozen=True)
class CvConfig:
    folds: int = 10
    line_points: int = 200
    lattice: int = 30
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.folds < 2:
            raise ValidationError("need at least 2 folds")
        if self.line_points < 2 or self.lattice < 2:
            raise ValidationError("grid sizes must be >= 2")

    def to_dict(self) -> dict:
        return {"folds": self.folds, "line_points": self.line_points, "lattice": self.lattice,
                "mcmc": self.mcmc.to_dict(), "seed": self.seed, "workers": self.workers}


@dataclass
class CvResult:
    folds: np.ndarray  # fold label per field location
    posterior_means: np.ndarray  # (folds, p) normalized
    lines: list  # per parameter: (line_points,) fold-averaged CRPS
    line_grid: np.ndarray  # (line_points,) normalized coordinate values
    lattice: np.ndarray  # (lattice, lattice) fold-averaged CRPS, [i, j] = (u_1[i], u_2[j])
    lattice_grid: np.ndarray
    rows: list

    def lattice_argmin(self) -> np.ndarray:
        """Normalized (u_1, u_2) of the smallest fold-averaged lattice CRPS."""
        i, j = np.unravel_index(int(np.argmin(self.lattice)), self.lattice.shape)
        return np.array([self.lattice_grid[i], self.lattice_grid[j]])


def assign_folds(n: int, folds: int, seed: int) -> np.ndarray:
    """Round-robin fold labels over a seeded permutation of ``n`` items."""
    if folds < 2 or n < folds:
        raise ValidationError(f"cannot split {n} locations into {folds} folds")
    perm = substream(seed, "folds").permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.arange(n) % folds
    return out


def mean_crps(model, test: FieldDataset, u_norm) -> float:
    mu = np.maximum(model.rates(u_norm) + test.backgrounds, 1e-10) * test.exposures
    return float(np.mean(crps_poisson(test.counts, mu)))


def _fold_cell(args):
    f, field_data, labels, domain, factory, cfg = args
    train = field_data.subset(np.flatnonzero(labels != f))
    test = field_data.subset(np.flatnonzero(labels == f))
    prob = CalibrationProblem(train, factory(train), domain)
    mc = replace(cfg.mcmc, seed=subseed(cfg.seed, "cv-chain", f), chain=f)
    post = metropolis_calibrate(prob, mc)
    ubar = post.u_norm.mean(axis=0)
    model = factory(test)
    p = domain.p
    t = np.linspace(0.0, 1.0, cfg.line_points)
    lines = []
    for k in range(p):
        vals = np.empty(t.size)
        for i, v in enumerate(t):
            u = ubar.copy()
            u[k] = v
            vals[i] = mean_crps(model, test, u)
        lines.append(vals)
    g = np.linspace(0.0, 1.0, cfg.lattice)
    lat = np.empty((g.size, g.size))
    for i, a in enumerate(g):
        for j, b in enumerate(g):
            u = ubar.copy()
            u[0], u[1] = a, b
            lat[i, j] = mean_crps(model, test, u)
    row = {"fold": f, "n_train": train.n, "n_test": test.n,
           **{f"{n}_mean": float(v) for n, v in zip(domain.names, domain.denormalize(ubar))},
           "crps_at_mean": mean_crps(model, test, ubar), "acceptance": post.acceptance["u"],
           "warning": post.warning or ""}
    return f, ubar, lines, lat, row


def surrogate_factory(surrogate) -> ModelFactory:
    return lambda fd: SurrogateModel(surrogate, field_inputs(fd))


def cv_crps_grid(field_data: FieldDataset, domain: ParameterDomain, factory: ModelFactory,
                 config: CvConfig = CvConfig(), out_dir=None) -> CvResult:
    """Fold-averaged CRPS along per-parameter lines and over a lattice.

    ``factory(field_subset)`` returns a forward model with
    ``rates(u_norm)`` at that subset's locations; use
    :func:`surrogate_factory` for a fitted surrogate.
    """
    if domain.p < 2:
        raise ValidationError("the CRPS lattice needs at least two parameters")
    labels = assign_folds(field_data.n, config.folds, config.seed)
    jobs = [(f, field_data, labels, domain, factory, config) for f in range(config.folds)]
    cells = map_cells(_fold_cell, jobs, config.workers)
    means = np.array([c[1] for c in cells])
    lines = [np.mean([c[2][k] for c in cells], axis=0) for k in range(domain.p)]
    lattice = np.mean([c[3] for c in cells], axis=0)
    rows = [c[4] for c in cells]
    t = np.linspace(0.0, 1.0, config.line_points)
    g = np.linspace(0.0, 1.0, config.lattice)
    res = CvResult(labels, means, lines, t, lattice, g, rows)
    if out_dir is not None:
        od = OutputDir(out_dir)
        od.write_metrics(rows)
        names = [f"u_{k + 1}" for k in range(domain.p)]
        lo, hi = domain.lower, domain.upper
        for k in range(domain.p):
            raw = lo[k] + t * (hi[k] - lo[k])
            write_crps_grid_csv(od.file(f"crps_line_u_{k + 1}.csv"), raw[:, None], lines[k], [names[k]])
        G1, G2 = np.meshgrid(lo[0] + g * (hi[0] - lo[0]), lo[1] + g * (hi[1] - lo[1]), indexing="ij")
        write_crps_grid_csv(od.file("crps_grid.csv"), np.column_stack([G1.ravel(), G2.ravel()]),
                            lattice.ravel(), names[:2])
        od.echo_config({"experiment": "cv", "n_field": field_data.n, "parameters": list(domain.names),
                        **config.to_dict()})
        od.write_manifest()
    return res
