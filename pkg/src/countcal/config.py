"""Run configuration files.

A config is a YAML mapping with these sections (all optional)::

    seed: 0                 # master seed, 64-bit unsigned
    threads: 1              # worker processes for independent cells
    paths:                  # relative paths resolve against the config file
      field: field.csv
      simulator: simulator.csv
      domain: domain.yaml
      surrogate: surrogate.npz
      out_dir: out
    surrogate:
      m: 25                 # conditioning-set size
      dense_cap: 4000       # largest n_M handled by the dense GP
      budget: 500           # likelihood evaluations per optimizer stage
    mcmc:
      iterations: 10000
      burn_in: 1000
      thin: 10
      proposal_sd: 0.05     # scalar or one value per parameter (normalized units)
      delta_proposal_sd: 0.1
      adapt: true
      target_rate: 0.30
    experiment: {}          # free-form, mode-specific keys

Unknown keys are rejected so that typos do not pass silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ValidationError
from .exact import DENSE_CAP
from .inversion import McmcConfig
from .seeding import check_seed

PATH_KEYS = ("field", "simulator", "domain", "surrogate", "out_dir")


@dataclass(frozen=True)
class SurrogateBlock:
    m: int = 25
    dense_cap: int = DENSE_CAP
    budget: int = 500

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValidationError("surrogate.m must be >= 1")
        if int(self.dense_cap) < 1 or int(self.budget) < 1:
            raise ValidationError("surrogate.dense_cap and surrogate.budget must be >= 1")


@dataclass(frozen=True)
class McmcBlock:
    iterations: int = 10_000
    burn_in: int = 1_000
    thin: int = 10
    proposal_sd: float | tuple = 0.05
    delta_proposal_sd: float = 0.1
    adapt: bool = True
    target_rate: float = 0.30

    def to_config(self, seed: int, chain: int = 0) -> McmcConfig:
        sd = self.proposal_sd
        sd = tuple(float(v) for v in sd) if isinstance(sd, (list, tuple)) else float(sd)
        return McmcConfig(
            iterations=int(self.iterations), burn_in=int(self.burn_in), thin=int(self.thin), proposal_sd=sd,
            delta_proposal_sd=float(self.delta_proposal_sd), adapt=bool(self.adapt),
            target_rate=float(self.target_rate), seed=seed, chain=chain,
        )


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    paths: dict = field(default_factory=dict)
    surrogate: SurrogateBlock = field(default_factory=SurrogateBlock)
    mcmc: McmcBlock = field(default_factory=McmcBlock)
    experiment: dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            check_seed(self.seed)
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc)) from None
        if int(self.threads) < 1:
            raise ValidationError("threads must be a positive integer")
        bad = set(self.paths) - set(PATH_KEYS)
        if bad:
            raise ValidationError(f"unknown path keys: {sorted(bad)}")
        self.mcmc.to_config(int(self.seed))  # validates ranges

    def path(self, key: str) -> Path | None:
        v = self.paths.get(key)
        return None if v is None else Path(v)

    def require(self, key: str) -> Path:
        """A path that must be set and exist (output directories excepted)."""
        p = self.path(key)
        if p is None:
            raise ValidationError(f"no {key} path given (flag or paths.{key} in the config)")
        if key != "out_dir" and not p.exists():
            raise ValidationError(f"{key} path does not exist: {p}")
        return p

    def with_overrides(self, seed=None, threads=None, **paths) -> "RunConfig":
        new_paths = dict(self.paths)
        new_paths.update({k: str(v) for k, v in paths.items() if v is not None})
        return replace(
            self,
            seed=self.seed if seed is None else int(seed),
            threads=self.threads if threads is None else int(threads),
            paths=new_paths,
        )

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed), "threads": int(self.threads),
            "paths": {k: str(v) for k, v in sorted(self.paths.items())},
            "surrogate": {f.name: getattr(self.surrogate, f.name) for f in fields(SurrogateBlock)},
            "mcmc": {f.name: getattr(self.mcmc, f.name) for f in fields(McmcBlock)},
            "experiment": dict(self.experiment),
        }


def _block(cls, doc, name):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ValidationError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    bad = set(doc) - known
    if bad:
        raise ValidationError(f"unknown keys in section {name!r}: {sorted(bad)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"section {name!r}: {exc}") from None


def config_from_dict(doc: dict, base_dir: Path | None = None) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ValidationError("config must be a mapping")
    bad = set(doc) - {"seed", "threads", "paths", "surrogate", "mcmc", "experiment"}
    if bad:
        raise ValidationError(f"unknown top-level config keys: {sorted(bad)}")
    paths = doc.get("paths")
    paths = {} if paths is None else paths
    if not isinstance(paths, dict):
        raise ValidationError("paths must be a mapping")
    if base_dir is not None:
        paths = {k: str(v if Path(v).is_absolute() else base_dir / v) for k, v in paths.items()}
    exp = doc.get("experiment")
    exp = {} if exp is None else exp
    if not isinstance(exp, dict):
        raise ValidationError("experiment must be a mapping")
    try:
        seed, threads = int(doc.get("seed", 0)), int(doc.get("threads", 1))
    except (TypeError, ValueError):
        raise ValidationError("seed and threads must be integers") from None
    return RunConfig(
        seed=seed, threads=threads, paths=paths,
        surrogate=_block(SurrogateBlock, doc.get("surrogate"), "surrogate"),
        mcmc=_block(McmcBlock, doc.get("mcmc"), "mcmc"),
        experiment=exp,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such config file: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return config_from_dict(doc, path.parent)
