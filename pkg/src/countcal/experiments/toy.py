"""Two-parameter 1D toy simulator for end-to-end demos and tests.

m(u, x) = 1 + 20 exp(-u2 x) sin^2(2 pi (x - u1)),  x, u1, u2 in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import AffineMap, FieldDataset, ParameterDomain, StackedDesign
from ..errors import ValidationError
from ..seeding import substream

TOY_DOMAIN = ParameterDomain(("u1", "u2"), [0.0, 0.0], [1.0, 1.0])


def toy_mean(u, x) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    return 1.0 + 20.0 * np.exp(-u[1] * x) * np.sin(2.0 * np.pi * (x - u[0])) ** 2


@dataclass(frozen=True)
class ToyProblem:
    truth: tuple = (0.35, 0.6)
    n_runs: int = 20
    n_grid: int = 30
    n_field: int = 60
    exposure: float = 5.0
    replicates: int = 1

    def __post_init__(self):
        t = np.asarray(self.truth, dtype=float)
        if t.shape != (2,) or np.any(t <= 0) or np.any(t >= 1):
            raise ValidationError("toy truth must be an interior point of [0, 1]^2")
        if self.n_runs < 3 or self.n_grid < 2 or self.n_field < 2 or not self.exposure > 0:
            raise ValidationError("toy sizes must be positive (n_runs >= 3)")

    @property
    def domain(self) -> ParameterDomain:
        return TOY_DOMAIN

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_grid)

    def design(self, seed: int) -> np.ndarray:
        rng = substream(seed, "toy-design")
        n = self.n_runs
        return (np.argsort(rng.random((n, 2)), axis=0) + rng.random((n, 2))) / n

    def stacked(self, seed: int) -> StackedDesign:
        x = self.grid()
        D = self.design(seed)
        resp = np.array([toy_mean(u, x) for u in D])
        return StackedDesign(x[:, None], D, resp.ravel(), AffineMap([0.0] * 3, [1.0] * 3), 1)

    def field(self, seed: int, replicate: int = 0) -> FieldDataset:
        rng = substream(seed, "toy-field", replicate)
        x = np.sort(rng.random(self.n_field))
        e = np.full(self.n_field, self.exposure)
        y = rng.poisson(toy_mean(self.truth, x) * e)
        return FieldDataset(x[:, None], y, e, np.zeros(self.n_field), label="toy", spherical=False)

    def gaussian_observations(self, seed: int, noise_sd: float = 1.0, replicate: int = 0):
        rng = substream(seed, "toy-gauss", replicate)
        x = np.sort(rng.random(self.n_field))
        y = toy_mean(self.truth, x) + noise_sd * rng.standard_normal(self.n_field)
        fd = FieldDataset(x[:, None], np.zeros(self.n_field, dtype=np.int64), np.ones(self.n_field),
                          np.zeros(self.n_field), label="toy-gaussian", spherical=False)
        return fd, y
