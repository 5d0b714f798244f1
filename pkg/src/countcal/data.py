"""Domain types and CSV/YAML ingestion for field counts and simulator runs.

Spatial locations are carried as 3D unit vectors. Every GP input column is
mapped affinely onto [0, 1]: unit-vector coordinates from [-1, 1], model
parameters from their domain box. Stacking is row-major with runs outer and
grid points inner, so row ``i * n_grid + j`` is grid point ``j`` of run ``i``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import StructuralError, ValidationError

UNIT_TOL = 1e-9

LATLON_FIELD_HEADER = ["lat_deg", "lon_deg", "exposure_s", "count", "background_rate"]
UNIT_FIELD_HEADER = ["ux", "uy", "uz", "exposure_s", "count", "background_rate"]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Spherical coordinates
# ---------------------------------------------------------------------------


def latlon_to_unit(lat_deg, lon_deg) -> np.ndarray:
    """Convert latitude/longitude in degrees to unit vectors.

    Accepts scalars or arrays; returns shape ``(..., 3)``.
    """
    lat = np.asarray(lat_deg, dtype=float)
    lon = np.asarray(lon_deg, dtype=float)
    if not np.all(np.isfinite(lat)) or not np.all(np.isfinite(lon)):
        raise ValidationError("latitude/longitude must be finite")
    if np.any(np.abs(lat) > 90.0):
        raise ValidationError("latitude must lie in [-90, 90] degrees")
    la = np.radians(lat)
    lo = np.radians(lon)
    cl = np.cos(la)
    return np.stack([cl * np.cos(lo), cl * np.sin(lo), np.sin(la)], axis=-1)


def unit_to_latlon(v) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`latlon_to_unit`; longitude returned in [0, 360)."""
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    lat = np.degrees(np.arctan2(z, np.hypot(x, y)))
    lon = np.mod(np.degrees(np.arctan2(y, x)), 360.0)
    # mod can return 360.0 for tiny negative angles
    lon = np.where(lon >= 360.0, 0.0, lon)
    return lat, lon


def _check_unit(coords: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(coords, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
    if bad.size:
        raise ValidationError(f"{what}: row {bad[0]} is not a unit vector (norm {norms[bad[0]]!r})")


@dataclass(frozen=True)
class SpatialLocation:
    direction: tuple[float, float, float]

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,):
            raise ValidationError("direction must be a 3-vector")
        _check_unit(d[None, :], "SpatialLocation")

    @classmethod
    def from_latlon(cls, lat_deg: float, lon_deg: float) -> "SpatialLocation":
        return cls(tuple(float(c) for c in latlon_to_unit(lat_deg, lon_deg)))

    @property
    def lat_deg(self) -> float:
        return float(unit_to_latlon(np.asarray(self.direction))[0])

    @property
    def lon_deg(self) -> float:
        return float(unit_to_latlon(np.asarray(self.direction))[1])


# ---------------------------------------------------------------------------
# Field data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldDataset:
    """Observed counts with exposures (s) and background rates (ENAs/s).

    ``coords`` are unit vectors of shape ``(n, 3)`` unless ``spherical`` is
    False, in which case they are arbitrary (already normalized) spatial
    inputs, as used by the 1D toy problem.
    """

    coords: np.ndarray
    counts: np.ndarray
    exposures: np.ndarray
    backgrounds: np.ndarray
    label: str = ""
    spherical: bool = True

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        counts_raw = np.asarray(self.counts)
        exposures = np.array(self.exposures, dtype=float).ravel()
        backgrounds = np.array(self.backgrounds, dtype=float).ravel()
        n = coords.shape[0]
        if n < 1:
            raise ValidationError("field dataset needs at least one observation")
        if not (counts_raw.shape[0] == exposures.shape[0] == backgrounds.shape[0] == n):
            raise ValidationError("coords, counts, exposures and backgrounds must share one length")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("field locations must be finite")
        if self.spherical:
            if coords.shape[1] != 3:
                raise ValidationError("spherical field locations must be 3-vectors")
            _check_unit(coords, "field location")
        counts_f = np.asarray(counts_raw, dtype=float)
        if not np.all(np.isfinite(counts_f)) or np.any(counts_f < 0) or np.any(counts_f != np.floor(counts_f)):
            raise ValidationError("counts must be non-negative integers")
        if not np.all(np.isfinite(exposures)) or np.any(exposures <= 0):
            raise ValidationError("exposures must be strictly positive")
        if not np.all(np.isfinite(backgrounds)) or np.any(backgrounds < 0):
            raise ValidationError("background rates must be non-negative")
        object.__setattr__(self, "coords", _frozen(coords))
        object.__setattr__(self, "counts", _frozen(counts_raw, dtype=np.int64))
        object.__setattr__(self, "exposures", _frozen(exposures))
        object.__setattr__(self, "backgrounds", _frozen(backgrounds))

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def subset(self, idx) -> "FieldDataset":
        idx = np.asarray(idx)
        return FieldDataset(
            self.coords[idx], self.counts[idx], self.exposures[idx], self.backgrounds[idx],
            label=self.label, spherical=self.spherical,
        )

    def with_counts(self, counts) -> "FieldDataset":
        return FieldDataset(
            self.coords, counts, self.exposures, self.backgrounds, label=self.label, spherical=self.spherical
        )


def concat_fields(fields: Sequence[FieldDataset], label: str = "") -> FieldDataset:
    """Stack several field datasets (e.g. several years) into one."""
    if not fields:
        raise ValidationError("nothing to concatenate")
    return FieldDataset(
        np.vstack([f.coords for f in fields]),
        np.concatenate([f.counts for f in fields]),
        np.concatenate([f.exposures for f in fields]),
        np.concatenate([f.backgrounds for f in fields]),
        label=label or "+".join(f.label for f in fields),
        spherical=all(f.spherical for f in fields),
    )


def _parse_float(text: str, lineno: int, col: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise ValidationError(f"line {lineno}, column {col!r}: cannot parse {text!r} as a number") from None
    if not math.isfinite(val):
        raise ValidationError(f"line {lineno}, column {col!r}: value must be finite")
    return val


def _parse_count(text: str, lineno: int, col: str) -> int:
    try:
        val = int(text)
    except ValueError:
        raise ValidationError(f"line {lineno}, column {col!r}: {text!r} is not an integer count") from None
    if val < 0:
        raise ValidationError(f"line {lineno}, column {col!r}: count must be non-negative")
    return val


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = []
        header = None
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [h.strip() for h in row]
                continue
            rows.append((reader.line_num, [c.strip() for c in row]))
    if header is None:
        raise ValidationError(f"{path}: empty file")
    return header, rows


def load_field_csv(path, label: str | None = None) -> FieldDataset:
    """Read a field CSV in either the lat/lon or unit-vector layout."""
    header, rows = _read_rows(path)
    if header == LATLON_FIELD_HEADER:
        latlon = True
    elif header == UNIT_FIELD_HEADER:
        latlon = False
    else:
        raise ValidationError(
            f"{path}: header must be {','.join(LATLON_FIELD_HEADER)} or {','.join(UNIT_FIELD_HEADER)}"
        )
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    coords, counts, exposures, backgrounds = [], [], [], []
    for lineno, row in rows:
        if len(row) != len(header):
            raise ValidationError(f"line {lineno}: expected {len(header)} columns, found {len(row)}")
        vals = dict(zip(header, row))
        if latlon:
            lat = _parse_float(vals["lat_deg"], lineno, "lat_deg")
            lon = _parse_float(vals["lon_deg"], lineno, "lon_deg")
            if abs(lat) > 90:
                raise ValidationError(f"line {lineno}, column 'lat_deg': latitude out of range")
            coords.append(latlon_to_unit(lat, lon))
        else:
            v = [_parse_float(vals[c], lineno, c) for c in ("ux", "uy", "uz")]
            if abs(math.sqrt(sum(c * c for c in v)) - 1.0) > UNIT_TOL:
                raise ValidationError(f"line {lineno}, columns 'ux,uy,uz': not a unit vector")
            coords.append(v)
        exp_ = _parse_float(vals["exposure_s"], lineno, "exposure_s")
        if exp_ <= 0:
            raise ValidationError(f"line {lineno}, column 'exposure_s': exposure must be > 0")
        bg = _parse_float(vals["background_rate"], lineno, "background_rate")
        if bg < 0:
            raise ValidationError(f"line {lineno}, column 'background_rate': must be >= 0")
        counts.append(_parse_count(vals["count"], lineno, "count"))
        exposures.append(exp_)
        backgrounds.append(bg)
    return FieldDataset(
        np.array(coords), np.array(counts, dtype=np.int64), exposures, backgrounds,
        label=Path(path).stem if label is None else label,
    )


def write_field_csv(path, field_data: FieldDataset, layout: str = "unit") -> None:
    """Write a field dataset; floats are written with ``repr`` so reads are exact."""
    if layout not in ("unit", "latlon"):
        raise ValueError("layout must be 'unit' or 'latlon'")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if layout == "unit":
            w.writerow(UNIT_FIELD_HEADER)
            for c, y, e, b in zip(field_data.coords, field_data.counts, field_data.exposures, field_data.backgrounds):
                w.writerow([repr(float(c[0])), repr(float(c[1])), repr(float(c[2])), repr(float(e)), int(y), repr(float(b))])
        else:
            lat, lon = unit_to_latlon(field_data.coords)
            w.writerow(LATLON_FIELD_HEADER)
            for la, lo, y, e, b in zip(lat, lon, field_data.counts, field_data.exposures, field_data.backgrounds):
                w.writerow([repr(float(la)), repr(float(lo)), repr(float(e)), int(y), repr(float(b))])


# ---------------------------------------------------------------------------
# Parameter domain and normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AffineMap:
    """Per-column map ``z = (x - lower) / (upper - lower)``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).ravel()
        hi = np.array(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(~(lo < hi)):
            raise ValidationError("affine map needs lower < upper in every column")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def denormalize(self, z) -> np.ndarray:
        return self.lower + np.asarray(z, dtype=float) * (self.upper - self.lower)

    def to_dict(self) -> dict:
        return {"lower": [float(v) for v in self.lower], "upper": [float(v) for v in self.upper]}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineMap":
        return cls(d["lower"], d["upper"])

    def concat(self, other: "AffineMap") -> "AffineMap":
        return AffineMap(np.concatenate([self.lower, other.lower]), np.concatenate([self.upper, other.upper]))


@dataclass(frozen=True, eq=False)
class ParameterDomain:
    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        lo = np.array(self.lower, dtype=float).ravel()
        hi = np.array(self.upper, dtype=float).ravel()
        if len(names) < 1:
            raise ValidationError("parameter domain needs at least one parameter")
        if not (len(names) == lo.size == hi.size):
            raise ValidationError("names, lower and upper must have equal length")
        if len(set(names)) != len(names):
            raise ValidationError("parameter names must be unique")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)) or np.any(~(lo < hi)):
            raise ValidationError("each parameter needs finite lower < upper")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @property
    def p(self) -> int:
        return len(self.names)

    @property
    def affine(self) -> AffineMap:
        return AffineMap(self.lower, self.upper)

    def normalize(self, u) -> np.ndarray:
        return self.affine.normalize(u)

    def denormalize(self, z) -> np.ndarray:
        return self.affine.denormalize(z)

    def contains(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.all((u >= self.lower) & (u <= self.upper), axis=1)

    def to_dict(self) -> dict:
        return {
            "parameters": [
                {"name": n, "lower": float(lo), "upper": float(hi)}
                for n, lo, hi in zip(self.names, self.lower, self.upper)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterDomain":
        try:
            params = d["parameters"]
            return cls(
                tuple(p["name"] for p in params),
                [float(p["lower"]) for p in params],
                [float(p["upper"]) for p in params],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed domain description: {exc}") from None


def load_domain(path) -> ParameterDomain:
    """Read a domain file (YAML: a ``parameters`` list of name/lower/upper)."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: expected a mapping with a 'parameters' list")
    return ParameterDomain.from_dict(doc)


def write_domain(path, domain: ParameterDomain) -> None:
    Path(path).write_text(yaml.safe_dump(domain.to_dict(), sort_keys=False), encoding="utf-8")


# ---------------------------------------------------------------------------
# Simulator corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimulatorCorpus:
    """Simulator rates for ``n_runs`` parameter vectors on a shared grid."""

    domain: ParameterDomain
    designs: np.ndarray
    grid: np.ndarray
    rates: np.ndarray
    run_ids: tuple[str, ...] = ()

    def __post_init__(self):
        designs = np.array(self.designs, dtype=float)
        if designs.ndim == 1:
            designs = designs[:, None]
        grid = np.array(self.grid, dtype=float)
        rates = np.array(self.rates, dtype=float)
        if designs.shape[1] != self.domain.p:
            raise ValidationError(f"designs have {designs.shape[1]} columns, domain has {self.domain.p}")
        if grid.ndim != 2 or grid.shape[1] != 3:
            raise ValidationError("grid must be an (n_grid, 3) array of unit vectors")
        _check_unit(grid, "grid location")
        if rates.shape != (designs.shape[0], grid.shape[0]):
            raise ValidationError(f"rates must have shape (n_runs, n_grid) = {(designs.shape[0], grid.shape[0])}")
        inside = self.domain.contains(designs)
        if not np.all(inside):
            raise ValidationError(f"design row {int(np.flatnonzero(~inside)[0])} lies outside the domain")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ValidationError("simulator rates must be finite and non-negative")
        run_ids = tuple(self.run_ids) if self.run_ids else tuple(str(i + 1) for i in range(designs.shape[0]))
        if len(run_ids) != designs.shape[0] or len(set(run_ids)) != len(run_ids):
            raise ValidationError("run_ids must be unique, one per design row")
        object.__setattr__(self, "designs", _frozen(designs))
        object.__setattr__(self, "grid", _frozen(grid))
        object.__setattr__(self, "rates", _frozen(rates))
        object.__setattr__(self, "run_ids", run_ids)

    @property
    def n_runs(self) -> int:
        return self.designs.shape[0]

    @property
    def n_grid(self) -> int:
        return self.grid.shape[0]

    @property
    def n_M(self) -> int:
        return self.n_runs * self.n_grid

    def run_index(self, u) -> int | None:
        """Index of the run whose design row equals ``u`` exactly, else None."""
        hit = np.flatnonzero(np.all(self.designs == np.asarray(u, dtype=float), axis=1))
        return int(hit[0]) if hit.size else None

    def without_runs(self, idx) -> "SimulatorCorpus":
        keep = np.setdiff1d(np.arange(self.n_runs), np.atleast_1d(idx))
        return SimulatorCorpus(
            self.domain, self.designs[keep], self.grid, self.rates[keep], tuple(self.run_ids[i] for i in keep)
        )

    def with_grid_subset(self, idx) -> "SimulatorCorpus":
        return SimulatorCorpus(self.domain, self.designs, self.grid[idx], self.rates[:, idx], self.run_ids)


def load_simulator_csv(path, domain: ParameterDomain) -> SimulatorCorpus:
    """Read simulator output: ``run_id,u_1..u_p,<location>,rate`` grouped by run."""
    header, rows = _read_rows(path)
    p = domain.p
    if len(header) == p + 4 and header[0] == "run_id" and header[-3:] == ["lat_deg", "lon_deg", "rate"]:
        n_loc = 2
    elif len(header) == p + 5 and header[0] == "run_id" and header[-4:] == ["ux", "uy", "uz", "rate"]:
        n_loc = 3
    else:
        raise ValidationError(
            f"{path}: header must be run_id,<{p} parameter columns>,lat_deg,lon_deg,rate (or ux,uy,uz)"
        )
    ucols = header[1 : 1 + p]
    if not rows:
        raise ValidationError(f"{path}: no data rows")

    order: list[str] = []
    per_run: dict[str, dict] = {}
    for lineno, row in rows:
        if len(row) != len(header):
            raise ValidationError(f"line {lineno}: expected {len(header)} columns, found {len(row)}")
        rid = row[0]
        if not rid:
            raise ValidationError(f"line {lineno}, column 'run_id': empty run id")
        u = tuple(_parse_float(row[1 + k], lineno, ucols[k]) for k in range(p))
        loc_vals = tuple(_parse_float(row[1 + p + k], lineno, header[1 + p + k]) for k in range(n_loc))
        rate = _parse_float(row[-1], lineno, "rate")
        if rate < 0:
            raise ValidationError(f"line {lineno}, column 'rate': rates must be non-negative")
        if n_loc == 2 and abs(loc_vals[0]) > 90:
            raise ValidationError(f"line {lineno}, column 'lat_deg': latitude out of range")
        if rid not in per_run:
            per_run[rid] = {"u": u, "locs": [], "rates": {}, "line": lineno}
            order.append(rid)
        run = per_run[rid]
        if run["u"] != u:
            raise ValidationError(f"line {lineno}: run {rid!r} has inconsistent parameter values")
        if loc_vals in run["rates"]:
            if run["rates"][loc_vals] != rate:
                raise ValidationError(f"line {lineno}: run {rid!r} has conflicting rates at {loc_vals}")
        else:
            run["rates"][loc_vals] = rate
            run["locs"].append(loc_vals)

    grid_locs = per_run[order[0]]["locs"]
    for rid in order[1:]:
        if per_run[rid]["locs"] != grid_locs:
            raise StructuralError(
                f"{path}: run {rid!r} does not share the grid of run {order[0]!r} (same locations, same order)"
            )
    if n_loc == 2:
        arr = np.array(grid_locs)
        grid = latlon_to_unit(arr[:, 0], arr[:, 1])
    else:
        grid = np.array(grid_locs, dtype=float)
        _check_unit(grid, f"{path} grid")
    designs = np.array([per_run[r]["u"] for r in order])
    if len({tuple(d) for d in designs}) != len(order):
        raise ValidationError(f"{path}: two runs share identical parameter values")
    inside = domain.contains(designs)
    if not np.all(inside):
        bad = order[int(np.flatnonzero(~inside)[0])]
        raise ValidationError(f"line {per_run[bad]['line']}: run {bad!r} lies outside the parameter domain")
    rates = np.array([[per_run[r]["rates"][loc] for loc in grid_locs] for r in order])
    return SimulatorCorpus(domain, designs, grid, rates, tuple(order))


def write_simulator_csv(path, corpus: SimulatorCorpus) -> None:
    """Write a corpus in the unit-vector layout with ``u_1..u_p`` columns."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id"] + [f"u_{k + 1}" for k in range(corpus.domain.p)] + ["ux", "uy", "uz", "rate"])
        for rid, u, rates in zip(corpus.run_ids, corpus.designs, corpus.rates):
            us = [repr(float(v)) for v in u]
            for g, r in zip(corpus.grid, rates):
                w.writerow([rid] + us + [repr(float(g[0])), repr(float(g[1])), repr(float(g[2])), repr(float(r))])


# ---------------------------------------------------------------------------
# Stacked GP training design
# ---------------------------------------------------------------------------

SPHERE_BOX = AffineMap([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0])


@dataclass(frozen=True, eq=False)
class StackedDesign:
    """GP training set built as the Cartesian product of grid and design.

    ``inputs`` holds normalized spatial columns followed by normalized
    parameters; ``grid_index``/``run_index`` record the product structure so
    downstream code can reuse per-grid and per-run kernel factors.
    """

    grid: np.ndarray  # (n_grid, n_spatial), normalized
    design: np.ndarray  # (n_runs, p), normalized
    responses: np.ndarray  # (n_runs * n_grid,)
    normalization: AffineMap
    n_spatial: int
    inputs: np.ndarray = field(init=False)
    grid_index: np.ndarray = field(init=False)
    run_index: np.ndarray = field(init=False)

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        design = np.array(self.design, dtype=float)
        if grid.ndim == 1:
            grid = grid[:, None]
        if design.ndim == 1:
            design = design[:, None]
        resp = np.array(self.responses, dtype=float).ravel()
        n_runs, n_grid = design.shape[0], grid.shape[0]
        if grid.shape[1] != self.n_spatial:
            raise ValidationError("grid width must equal n_spatial")
        if resp.size != n_runs * n_grid:
            raise ValidationError("responses must have n_runs * n_grid entries")
        if self.normalization.lower.size != grid.shape[1] + design.shape[1]:
            raise ValidationError("normalization must cover every input column")
        run_index = np.repeat(np.arange(n_runs), n_grid)
        grid_index = np.tile(np.arange(n_grid), n_runs)
        inputs = np.hstack([grid[grid_index], design[run_index]])
        object.__setattr__(self, "grid", _frozen(grid))
        object.__setattr__(self, "design", _frozen(design))
        object.__setattr__(self, "responses", _frozen(resp))
        object.__setattr__(self, "inputs", _frozen(inputs))
        object.__setattr__(self, "grid_index", _frozen(grid_index, dtype=np.int64))
        object.__setattr__(self, "run_index", _frozen(run_index, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.responses.size

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.responses).tobytes())
        return h.hexdigest()


def stack(corpus: SimulatorCorpus) -> StackedDesign:
    """Stack a corpus row-major (runs outer, grid inner) with [0,1] inputs."""
    return StackedDesign(
        grid=SPHERE_BOX.normalize(corpus.grid),
        design=corpus.domain.normalize(corpus.designs),
        responses=corpus.rates.ravel(),
        normalization=SPHERE_BOX.concat(corpus.domain.affine),
        n_spatial=3,
    )


def normalize_locations(coords) -> np.ndarray:
    """Map unit vectors to the [0,1]^3 input box used by :func:`stack`."""
    return SPHERE_BOX.normalize(coords)
