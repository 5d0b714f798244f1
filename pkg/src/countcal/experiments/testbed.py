"""Synthetic sky-map testbed.

A cheap, smooth stand-in for a heliospheric simulator: a fixed large-scale
background flux plus a ring-shaped enhancement around a fixed sky direction
whose brightness, radius and thickness depend on two parameters. Designs
follow an 11 x 6 lattice over (parallel mean free path, ratio), and field
schedules scatter observation directions with log-normal exposures and small
known background rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import FieldDataset, ParameterDomain, SimulatorCorpus, latlon_to_unit
from ..errors import ValidationError
from ..seeding import substream

DOMAIN = ParameterDomain(("mfp_parallel", "ratio"), [500.0, 0.001], [3000.0, 0.1])
RING_CENTER = latlon_to_unit(25.0, 220.0)
FLUX_AXIS = latlon_to_unit(-10.0, 80.0)


def fibonacci_sphere(n: int) -> np.ndarray:
    """Near-uniform deterministic grid of ``n`` unit vectors."""
    if n < 1:
        raise ValidationError("grid size must be >= 1")
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    v = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_directions(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def skymap_rates(u_norm, directions) -> np.ndarray:
    """Rates (ENAs/s) at unit-vector ``directions`` for normalized parameters."""
    u1, u2 = np.asarray(u_norm, dtype=float).ravel()[:2]
    x = np.atleast_2d(directions)
    base = 0.05 + 0.02 * (1.0 + x @ FLUX_AXIS)
    cos_radius = np.cos(np.radians(65.0 + 15.0 * u1 - 8.0 * u2))
    width = 0.22 + 0.14 * u2
    amp = 0.10 + 0.10 * u1 - 0.04 * u2
    t = (x @ RING_CENTER - cos_radius) / width
    return base + amp * np.exp(-0.5 * t * t)


def lattice_design(n1: int = 11, n2: int = 6) -> np.ndarray:
    """Full factorial design in normalized coordinates, first parameter outer."""
    a = np.linspace(0.0, 1.0, n1)
    b = np.linspace(0.0, 1.0, n2)
    return np.array([(x, y) for x in a for y in b])


def make_corpus(n_grid: int = 500, n1: int = 11, n2: int = 6, domain: ParameterDomain = DOMAIN) -> SimulatorCorpus:
    grid = fibonacci_sphere(n_grid)
    design = lattice_design(n1, n2)
    rates = np.array([skymap_rates(u, grid) for u in design])
    return SimulatorCorpus(domain, domain.denormalize(design), grid, rates)


def random_corpus(n_runs: int, n_grid: int, seed: int, domain: ParameterDomain = DOMAIN) -> SimulatorCorpus:
    """Corpus on a seeded random (Latin hypercube) design."""
    rng = substream(seed, "design")
    p = domain.p
    design = (np.argsort(rng.random((n_runs, p)), axis=0) + rng.random((n_runs, p))) / n_runs
    grid = fibonacci_sphere(n_grid)
    rates = np.array([skymap_rates(u, grid) for u in design])
    return SimulatorCorpus(domain, domain.denormalize(design), grid, rates)


def interior_runs(corpus: SimulatorCorpus) -> np.ndarray:
    """Indices of design rows with no coordinate on a lattice edge."""
    d = corpus.designs
    lo, hi = d.min(axis=0), d.max(axis=0)
    return np.flatnonzero(np.all((d > lo) & (d < hi), axis=1))


@dataclass(frozen=True)
class FieldSchedule:
    directions: np.ndarray
    exposures: np.ndarray
    backgrounds: np.ndarray

    @property
    def n(self) -> int:
        return self.exposures.size


def field_schedule(n_field: int, seed: int, exposure_median: float = 60.0,
                   exposure_sigma: float = 0.5, background: float = 0.005) -> FieldSchedule:
    """Observation directions, exposures (s) and background rates (ENAs/s)."""
    rng = substream(seed, "schedule")
    dirs = random_directions(n_field, rng)
    exp_ = exposure_median * np.exp(exposure_sigma * rng.standard_normal(n_field))
    bg = background * (0.5 + rng.random(n_field))
    return FieldSchedule(dirs, exp_, bg)


def schedule_field(schedule: FieldSchedule, label: str = "") -> FieldDataset:
    """Field dataset with zero counts (counts are filled by synthesis)."""
    return FieldDataset(schedule.directions, np.zeros(schedule.n, dtype=np.int64), schedule.exposures,
                        schedule.backgrounds, label=label)
