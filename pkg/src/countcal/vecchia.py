"""Scaled Vecchia GP: ordering, neighbor sets, likelihood, fit and prediction.

Rows are put in maximin order in lengthscale-scaled input space; each row
conditions on its ``m`` nearest predecessors. Fitting runs twice: once with
unit scales, then again after re-ordering and re-conditioning with the
stage-one lengthscales. Prediction conditions each query on its ``m`` nearest
training rows in the same scaled metric.
"""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels as K
from .data import AffineMap, ParameterDomain, StackedDesign
from .errors import IllConditionedError, NumericalError, ValidationError
from .exact import PredictiveSummary
from .kernel import KernelSpec, jitter_ladder
from .optim import default_init, maximize, response_scale

log = logging.getLogger(__name__)

FORMAT = "countcal-vecchia"
FORMAT_VERSION = 1
GRID_CACHE_MAX = 4000  # largest grid/run count for which full factor tables are cached
PAIR_MAP_MAX = 30_000_000  # bound on n * m^2, sizing the per-row grid-pair map
R_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Ordering:
    """``perm[k]`` is the original row placed at position ``k``."""

    perm: np.ndarray
    method: str = "maximin"
    rank: np.ndarray = field(init=False)

    def __post_init__(self):
        perm = np.array(self.perm, dtype=np.int64)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValidationError("ordering must be a permutation")
        rank = np.empty_like(perm)
        rank[perm] = np.arange(perm.size)
        perm.setflags(write=False)
        rank.setflags(write=False)
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "rank", rank)

    @property
    def n(self) -> int:
        return self.perm.size


@dataclass(frozen=True, eq=False)
class NeighborSets:
    """Conditioning sets in ordered positions, ascending, padded with -1."""

    nb: np.ndarray
    m: int

    def __post_init__(self):
        nb = np.array(self.nb, dtype=np.int64)
        nb.setflags(write=False)
        object.__setattr__(self, "nb", nb)

    def __getitem__(self, i) -> np.ndarray:
        row = self.nb[i]
        return row[row >= 0]


def _scales(d: int, scales) -> np.ndarray:
    s = np.ones(d) if scales is None else np.asarray(scales, dtype=float).ravel()
    if s.size != d or np.any(~(s > 0)):
        raise ValidationError(f"need {d} positive scales")
    return s


def maximin_order(inputs, scales=None) -> Ordering:
    """Maximin ordering in scaled space.

    Starts at the row nearest the centroid; every later row maximizes its
    minimum distance to the rows already placed. Ties go to the lowest index.
    """
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(inputs, dtype=float)))
    if X.shape[0] == 0:
        raise ValidationError("cannot order an empty input set")
    inv = 1.0 / _scales(X.shape[1], scales)
    d0 = np.sum(((X - X.mean(axis=0)) * inv) ** 2, axis=1)
    first = int(np.argmin(d0))
    return Ordering(K.maximin(X, inv, first), "maximin")


def build_neighbors(inputs, ordering: Ordering, m: int, scales=None) -> NeighborSets:
    """Exact ``m`` nearest predecessors of every ordered row.

    Candidates come from k-d trees over growing prefixes of the ordering;
    each row is accepted only once the candidate list provably contains its
    exact nearest predecessors, which are then picked by exact scaled
    distance with ties to the earlier row.
    """
    if m < 1:
        raise ValidationError("m must be >= 1")
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    if X.shape[0] != ordering.n:
        raise ValidationError("ordering does not match inputs")
    inv = 1.0 / _scales(X.shape[1], scales)
    Xo = np.ascontiguousarray(X[ordering.perm])
    n = Xo.shape[0]
    mm = min(m, n - 1)
    nb = np.full((n, max(mm, 0)), -1, dtype=np.int64)
    if mm <= 0:
        return NeighborSets(nb, m)
    Z = Xo * inv
    a_tol = 1e-12 * (1.0 + float(np.abs(Z).max()))
    lo, hi = 0, min(n, max(512, 8 * mm))
    while lo < n:
        tree = cKDTree(Z[:hi])
        pending = np.arange(lo, hi)
        k = min(hi, 2 * mm + 8)
        while pending.size:
            complete = k >= hi
            kq = min(k, hi)
            d, j = tree.query(Z[pending], k=kq)
            d = np.asarray(d, dtype=float).reshape(pending.size, kq)
            j = np.asarray(j, dtype=np.int64).reshape(pending.size, kq)
            done = K.finish_neighbors(Xo, inv, pending, j, d, mm, R_TOL, a_tol, complete, nb)
            pending = pending[~done]
            k *= 2
        lo, hi = hi, min(n, 2 * hi)
    return NeighborSets(nb, m)


class _Terms:
    """Per-row Vecchia terms for a fixed ordering and conditioning sets.

    When the training set is a grid x design product of modest size, the
    parameter factors are tabulated over runs and the spatial factors are
    computed once per distinct grid pair occurring in a conditioning set;
    the result is identical to the generic path.
    """

    def __init__(self, inputs, responses, ordering: Ordering, neighbors: NeighborSets,
                 split: int | None = None, design: StackedDesign | None = None):
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(responses, dtype=float).ravel()
        if X.shape[0] != y.size or ordering.n != y.size or neighbors.nb.shape[0] != y.size:
            raise ValidationError("inputs, responses, ordering and neighbors disagree in size")
        perm = ordering.perm
        self.ordering = ordering
        self.Xo = np.ascontiguousarray(X[perm])
        self.yo = np.ascontiguousarray(y[perm])
        self.nb = np.ascontiguousarray(neighbors.nb)
        self.split = X.shape[1] if split is None else int(split)
        self.grid = None
        if (
            design is not None
            and design.grid.shape[0] <= GRID_CACHE_MAX
            and design.design.shape[0] <= GRID_CACHE_MAX
            and y.size * self.nb.shape[1] ** 2 <= PAIR_MAP_MAX
        ):
            ng = design.grid.shape[0]
            self.grid = np.ascontiguousarray(design.grid)
            self.runs = np.ascontiguousarray(design.design)
            self.ri = np.ascontiguousarray(design.run_index[perm])
            keys = K.grid_pair_keys(np.ascontiguousarray(design.grid_index[perm]), self.nb, ng)
            used = keys >= 0
            uniq, inverse = np.unique(keys[used], return_inverse=True)
            self.slot = np.full(keys.shape, -1, dtype=np.int32)
            self.slot[used] = inverse
            self.pa, self.pb = uniq // ng, uniq % ng

    def evaluate(self, spec: KernelSpec):
        inv = spec.inv_theta
        if self.grid is not None:
            s = self.split
            Fp = K.pair_factors(self.grid, self.pa, self.pb, np.ascontiguousarray(inv[:s]))
            Fu = K.factor_matrix(self.runs, self.runs, np.ascontiguousarray(inv[s:]), 0, inv.size - s)
        for jit in jitter_ladder(spec.tau2):
            g = spec.nugget + jit
            if self.grid is not None:
                out = K.vecchia_terms_grid(self.slot, self.ri, Fp, Fu, self.yo, self.nb, spec.tau2, g)
            else:
                out = K.vecchia_terms(self.Xo, self.yo, self.nb, inv, spec.tau2, g, self.split)
            if out[3] < 0:
                return out[0], out[1], out[2], jit
        raise IllConditionedError("local Vecchia covariance not positive definite", jit)

    def __call__(self, spec: KernelSpec) -> float:
        terms = self.evaluate(spec)[0]
        return float(K.ordered_sum(terms))


def vecchia_log_likelihood(spec: KernelSpec, inputs, responses, ordering: Ordering,
                           neighbors: NeighborSets, split: int | None = None) -> float:
    """Sum of the Vecchia conditional log densities of ``responses`` (as given,
    no centering)."""
    return _Terms(inputs, responses, ordering, neighbors, split)(spec)


def _stage(data: StackedDesign, yc, m, scales, init, budget, restarts):
    ordering = maximin_order(data.inputs, scales)
    neighbors = build_neighbors(data.inputs, ordering, m, scales)
    terms = _Terms(data.inputs, yc, ordering, neighbors, data.n_spatial, data)
    res = maximize(terms, init, response_scale(yc), budget, restarts)
    return res, ordering, neighbors


def fit_vecchia(data: StackedDesign, m: int = 25, budget: int = 500, init: KernelSpec | None = None,
                restarts: int = 2) -> "VecchiaSurrogate":
    """Two-stage Scaled Vecchia fit.

    Stage one orders and conditions with unit scales; stage two redoes both
    with the stage-one lengthscales and re-optimizes from the stage-one
    estimate. If stage two ends below stage one (the likelihoods are taken
    under different conditioning sets) the stage-one model is kept.
    """
    if m < 1:
        raise ValidationError("m must be >= 1")
    yc = data.responses - data.responses.mean()
    init = init or default_init(data.d, yc)
    res1, ord1, nb1 = _stage(data, yc, m, None, init, budget, restarts)
    res2, ord2, nb2 = _stage(data, yc, m, res1.spec.theta, res1.spec, budget, restarts)
    report = {
        "stage_logliks": [res1.loglik, res2.loglik],
        "stage_init_logliks": [res1.init_loglik, res2.init_loglik],
        "stage_evals": [res1.n_evals, res2.n_evals],
        "converged": bool(res1.converged and res2.converged),
        "warnings": [w for w in (res1.warning, res2.warning) if w],
        "kept_stage": 2,
    }
    if res2.loglik < res1.loglik:
        log.info("stage-two likelihood %.6g below stage one %.6g; keeping stage one", res2.loglik, res1.loglik)
        report["kept_stage"] = 1
        return VecchiaSurrogate(res1.spec, data, ord1, nb1, m, report)
    return VecchiaSurrogate(res2.spec, data, ord2, nb2, m, report)


class VecchiaSurrogate:
    """Fitted Scaled Vecchia emulator on a stacked grid x design set.

    Immutable after construction. Inputs to :meth:`predict` are in the
    normalized [0, 1] box of ``data.normalization``.
    """

    def __init__(self, spec: KernelSpec, data: StackedDesign, ordering: Ordering,
                 neighbors: NeighborSets, m: int, fit_report: dict | None = None):
        if spec.d != data.d:
            raise ValidationError(f"spec has {spec.d} lengthscales, data has {data.d} columns")
        if ordering.n != data.n or neighbors.nb.shape[0] != data.n:
            raise ValidationError("ordering/neighbors do not match data")
        self.spec = spec
        self.data = data
        self.ordering = ordering
        self.neighbors = neighbors
        self.m = int(m)
        self.fit_report = dict(fit_report or {})
        self.mean = float(data.responses.mean())
        self.responses = data.responses - self.mean
        self.responses.setflags(write=False)
        self.domain = None  # parameter names/bounds, when known (set by load)
        self._cond = None
        self._tree = None

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def normalization(self) -> AffineMap:
        return self.data.normalization

    @property
    def n_spatial(self) -> int:
        return self.data.n_spatial

    def likelihood_terms(self) -> _Terms:
        """Precomputed structure for evaluating the likelihood at any
        hyperparameters on this ordering and these conditioning sets."""
        return _Terms(self.data.inputs, self.responses, self.ordering, self.neighbors, self.n_spatial, self.data)

    def log_likelihood(self) -> float:
        return self.likelihood_terms()(self.spec)

    def local_conditionals(self) -> tuple[np.ndarray, np.ndarray]:
        """Conditional means (centered) and variances of every training row,
        in original row order."""
        if self._cond is None:
            _, cm, cv, _ = self.likelihood_terms().evaluate(self.spec)
            rank = self.ordering.rank
            cm, cv = cm[rank], cv[rank]
            cm.setflags(write=False)
            cv.setflags(write=False)
            self._cond = (cm, cv)
        return self._cond

    def prediction_neighbors(self, xstar) -> np.ndarray:
        """Training rows (original indices) each query conditions on, sorted by
        ordered rank, padded with -1."""
        Xq = np.ascontiguousarray(np.atleast_2d(np.asarray(xstar, dtype=float)))
        if Xq.shape[1] != self.data.d:
            raise ValidationError(f"queries need {self.data.d} columns, got {Xq.shape[1]}")
        if not np.all(np.isfinite(Xq)):
            raise ValidationError("query inputs must be finite")
        inv = self.spec.inv_theta
        X = np.ascontiguousarray(self.data.inputs)
        n = X.shape[0]
        mq = min(self.m, n)
        if self._tree is None:
            self._tree = cKDTree(X * inv)
        Zq = Xq * inv
        a_tol = 1e-12 * (1.0 + float(max(np.abs(X * inv).max(), np.abs(Zq).max())))
        nb = np.full((Xq.shape[0], mq), -1, dtype=np.int64)
        pending = np.arange(Xq.shape[0])
        k = min(n, mq + 16)
        while pending.size:
            complete = k >= n
            kq = min(k, n)
            d, j = self._tree.query(Zq[pending], k=kq)
            d = np.asarray(d, dtype=float).reshape(pending.size, kq)
            j = np.asarray(j, dtype=np.int64).reshape(pending.size, kq)
            sub = np.full((pending.size, mq), -1, dtype=np.int64)
            done = K.nearest_exact(X, inv, Xq[pending], self.ordering.rank, j, d, mq, R_TOL, a_tol, complete, sub)
            nb[pending[done]] = sub[done]
            pending = pending[~done]
            k *= 2
        return nb

    def predict(self, xstar) -> PredictiveSummary:
        return predict_vecchia(self, xstar)

    def field_predictor(self, field_inputs) -> "FieldPredictor":
        return FieldPredictor(self, field_inputs)

    # persistence ---------------------------------------------------------

    def save(self, path, domain: ParameterDomain | None = None) -> None:
        """Write an ``.npz`` archive; ``domain`` (parameter names and bounds)
        is embedded when given."""
        domain = domain if domain is not None else self.domain
        meta = {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "kernel": self.spec.to_dict(),
            "m": self.m,
            "ordering_method": self.ordering.method,
            "n_spatial": self.n_spatial,
            "normalization": self.normalization.to_dict(),
            "data_sha256": self.data.content_hash(),
            "fit_report": self.fit_report,
        }
        if domain is not None:
            if not np.array_equal(domain.affine.lower, self.normalization.lower[self.n_spatial:]) or \
                    not np.array_equal(domain.affine.upper, self.normalization.upper[self.n_spatial:]):
                raise ValidationError("domain bounds do not match the surrogate's parameter normalization")
            meta["domain"] = domain.to_dict()
        arrays = {
            "meta": np.array(json.dumps(meta, sort_keys=True)),
            "grid": self.data.grid,
            "design": self.data.design,
            "responses": self.data.responses,
            "perm": self.ordering.perm,
            "neighbors": self.neighbors.nb,
        }
        # an .npz written entry by entry with a fixed timestamp, so identical
        # models give identical bytes
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                with zf.open(info, "w", force_zip64=True) as fh:
                    np.lib.format.write_array(fh, np.asanyarray(arr), allow_pickle=False)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "VecchiaSurrogate":
        try:
            with np.load(Path(path), allow_pickle=False) as z:
                meta = json.loads(str(z["meta"]))
                arrays = {k: z[k] for k in ("grid", "design", "responses", "perm", "neighbors")}
        except (OSError, KeyError, ValueError) as exc:
            raise ValidationError(f"cannot read surrogate file {path}: {exc}") from None
        if meta.get("format") != FORMAT or meta.get("version") != FORMAT_VERSION:
            raise ValidationError(
                f"unsupported surrogate format {meta.get('format')!r} version {meta.get('version')!r}"
            )
        data = StackedDesign(
            arrays["grid"], arrays["design"], arrays["responses"],
            AffineMap.from_dict(meta["normalization"]), int(meta["n_spatial"]),
        )
        if data.content_hash() != meta["data_sha256"]:
            raise ValidationError("surrogate training data does not match its recorded hash")
        model = cls(
            KernelSpec.from_dict(meta["kernel"]), data,
            Ordering(arrays["perm"], meta.get("ordering_method", "maximin")),
            NeighborSets(arrays["neighbors"], int(meta["m"])),
            int(meta["m"]), meta.get("fit_report"),
        )
        if "domain" in meta:
            model.domain = ParameterDomain.from_dict(meta["domain"])
        return model


def predict_vecchia(model: VecchiaSurrogate, xstar) -> PredictiveSummary:
    """Kriging means and latent standard deviations, each query conditioned
    on its ``m`` nearest training rows."""
    Xq = np.ascontiguousarray(np.atleast_2d(np.asarray(xstar, dtype=float)))
    nb = model.prediction_neighbors(Xq)
    spec = model.spec
    jit = np.array(jitter_ladder(spec.tau2))
    mean, var, _, fail = K.krige(
        np.ascontiguousarray(model.data.inputs), np.ascontiguousarray(model.responses), Xq, nb,
        spec.inv_theta, spec.tau2, spec.nugget, model.n_spatial, jit,
    )
    if fail >= 0:
        raise IllConditionedError(f"prediction covariance not positive definite at query {fail}", float(jit[-1]))
    return PredictiveSummary(mean + model.mean, np.sqrt(var))


class FieldPredictor:
    """Surrogate rates at fixed field locations for many parameter vectors.

    Exploits the grid x design structure: for a field location, only grid
    points within its ``m`` spatially nearest can appear among its ``m``
    nearest training rows for any parameter vector, so their spatial
    distances and kernel factors are computed once. Each call then only
    needs the per-run parameter factors. Results match :func:`predict_vecchia`.
    """

    def __init__(self, model: VecchiaSurrogate, field_inputs, block: int = 256):
        Q = np.ascontiguousarray(np.atleast_2d(np.asarray(field_inputs, dtype=float)))
        s = model.n_spatial
        if Q.shape[1] != s:
            raise ValidationError(f"field locations need {s} columns, got {Q.shape[1]}")
        data = model.data
        G = np.ascontiguousarray(data.grid)
        D = np.ascontiguousarray(data.design)
        inv = model.spec.inv_theta
        self.model = model
        self.inv_s = np.ascontiguousarray(inv[:s])
        self.inv_u = np.ascontiguousarray(inv[s:])
        self.design = D
        self.n_field = Q.shape[0]
        self.mq = min(model.m, data.n)
        mg = min(self.mq, G.shape[0])

        rows, dss = [], []
        for lo in range(0, Q.shape[0], block):
            q = Q[lo : lo + block]
            ds = np.zeros((q.shape[0], G.shape[0]))
            for k in range(s):
                t = (q[:, k, None] - G[None, :, k]) * self.inv_s[k]
                ds = ds + t * t
            thr = np.partition(ds, mg - 1, axis=1)[:, mg - 1]
            for r in range(q.shape[0]):
                idx = np.flatnonzero(ds[r] <= thr[r] * (1.0 + 1e-6))
                idx = idx[np.argsort(ds[r, idx], kind="stable")]
                rows.append(idx)
                dss.append(ds[r, idx])
        maxc = max(len(r) for r in rows)
        self.cand = np.zeros((self.n_field, maxc), dtype=np.int64)
        self.cand_cnt = np.array([len(r) for r in rows], dtype=np.int64)
        self.ds_part = np.zeros((self.n_field, maxc))
        for j, (idx, dv) in enumerate(zip(rows, dss)):
            self.cand[j, : idx.size] = idx
            self.ds_part[j, : idx.size] = dv
        self.Fq, self.Fcc = K.field_factors(Q, G, self.cand, self.cand_cnt, self.inv_s)
        self.Fu_all = K.factor_matrix(D, D, self.inv_u, 0, self.inv_u.size)
        self.run_base = np.arange(D.shape[0], dtype=np.int64) * G.shape[0]
        self.rank_of = np.ascontiguousarray(model.ordering.rank)
        self.ri = np.ascontiguousarray(data.run_index)
        self.y = np.ascontiguousarray(model.responses)
        self.jitters = np.array(jitter_ladder(model.spec.tau2))
        self._nb = np.empty((self.n_field, self.mq), dtype=np.int64)
        self._slot = np.empty((self.n_field, self.mq), dtype=np.int64)

    def _select(self, u: np.ndarray) -> None:
        au = np.ascontiguousarray(((u - self.design) * self.inv_u) ** 2)
        order = np.argsort(au.sum(axis=1), kind="stable")
        K.field_candidates(self.ds_part, self.cand, self.cand_cnt, au, order,
                           self.rank_of, self.run_base, self.mq, self._nb, self._slot)

    def neighbors(self, u_norm) -> np.ndarray:
        self._select(self._check(u_norm))
        return self._nb.copy()

    def _check(self, u_norm) -> np.ndarray:
        u = np.asarray(u_norm, dtype=float).ravel()
        if u.size != self.inv_u.size or not np.all(np.isfinite(u)):
            raise ValidationError(f"parameter vector must have {self.inv_u.size} finite entries")
        return u

    def predict(self, u_norm) -> PredictiveSummary:
        mean, var = self._krige(u_norm)
        return PredictiveSummary(mean, np.sqrt(var))

    def rates(self, u_norm) -> np.ndarray:
        """Surrogate mean rates at every field location."""
        return self._krige(u_norm)[0]

    def _krige(self, u_norm):
        u = self._check(u_norm)
        self._select(u)
        Fu_q = K.factor_matrix(u[None, :], self.design, self.inv_u, 0, self.inv_u.size)[0]
        spec = self.model.spec
        mean, var, _, fail = K.krige_grid(self.ri, self.y, self.Fcc, self.Fq, self.Fu_all, Fu_q,
                                          self._nb, self._slot, spec.tau2, spec.nugget, self.jitters)
        if fail >= 0:
            raise NumericalError(f"field prediction covariance not positive definite at location {fail}")
        return mean + self.model.mean, var
