"""Separable Matérn-5/2 kernel specification."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import ValidationError

SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Lengthscales ``theta`` (one per input column), scale ``tau2``, nugget.

    The nugget is added to the diagonal of Gram matrices only; it never
    enters :func:`kernel_eval`.
    """

    theta: np.ndarray
    tau2: float
    nugget: float = 0.0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        theta.setflags(write=False)
        if theta.size < 1 or not np.all(np.isfinite(theta)) or np.any(theta <= 0):
            raise ValidationError("lengthscales must be positive and finite")
        if not (math.isfinite(self.tau2) and self.tau2 > 0):
            raise ValidationError("tau2 must be positive")
        if not (math.isfinite(self.nugget) and self.nugget >= 0):
            raise ValidationError("nugget must be non-negative")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "tau2", float(self.tau2))
        object.__setattr__(self, "nugget", float(self.nugget))

    @property
    def d(self) -> int:
        return self.theta.size

    @property
    def inv_theta(self) -> np.ndarray:
        return 1.0 / self.theta

    def replace(self, **kw) -> "KernelSpec":
        args = {"theta": self.theta, "tau2": self.tau2, "nugget": self.nugget}
        args.update(kw)
        return KernelSpec(**args)

    def to_dict(self) -> dict:
        return {"theta": [float(t) for t in self.theta], "tau2": self.tau2, "nugget": self.nugget}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        try:
            return cls(d["theta"], float(d["tau2"]), float(d.get("nugget", 0.0)))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed kernel spec: {exc}") from None

    def dumps(self) -> str:
        # yaml writes floats with repr(), so this round-trips exactly
        return yaml.safe_dump(self.to_dict(), default_flow_style=True, width=10_000).strip()

    @classmethod
    def loads(cls, text: str) -> "KernelSpec":
        return cls.from_dict(yaml.safe_load(text))

    def __eq__(self, other):
        if not isinstance(other, KernelSpec):
            return NotImplemented
        return (
            np.array_equal(self.theta, other.theta) and self.tau2 == other.tau2 and self.nugget == other.nugget
        )

    __hash__ = None


def matern52(r):
    """Unit-scale Matérn-5/2 correlation at scaled distance ``r``."""
    r = np.asarray(r, dtype=float)
    return (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def kernel_eval(spec: KernelSpec, x, xp) -> float:
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    r = np.abs(x - xp) / spec.theta
    return float(spec.tau2 * np.prod(matern52(r)))


def cross_cov(spec: KernelSpec, A, B, block: int = 512) -> np.ndarray:
    """Covariance matrix between rows of ``A`` and ``B`` (no nugget)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    out = np.empty((A.shape[0], B.shape[0]))
    it = spec.inv_theta
    for lo in range(0, A.shape[0], block):
        a = A[lo : lo + block]
        s = np.zeros((a.shape[0], B.shape[0]))
        p = np.ones_like(s)
        for k in range(A.shape[1]):
            r = np.abs(a[:, k, None] - B[None, :, k]) * it[k]
            s += r
            p *= 1.0 + SQRT5 * r + (5.0 / 3.0) * r * r
        out[lo : lo + block] = spec.tau2 * p * np.exp(-SQRT5 * s)
    return out


def jitter_ladder(tau2: float) -> list[float]:
    """0 first, then 1e-10*tau2 growing tenfold up to 1e-4*tau2."""
    return [0.0] + [tau2 * 10.0**e for e in range(-10, -3)]
