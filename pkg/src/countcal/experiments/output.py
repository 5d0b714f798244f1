"""Self-contained experiment output directories.

Each run directory holds ``config_echo`` (the resolved configuration),
``metrics.csv``, per-cell artifacts and a ``MANIFEST`` with one
``sha256  relative/path`` line per file. Columns whose names end in
``_seconds`` carry wall time and are the only non-reproducible fields.
"""

from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

MANIFEST = "MANIFEST"
TIME_SUFFIX = "_seconds"


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_table(path, rows: Sequence[dict], header: Sequence[str] | None = None) -> None:
    """Write dict rows as CSV with a fixed column order."""
    header = list(header or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(r.get(k)) for k in header])


def read_table(path, drop_time: bool = False) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if drop_time:
        rows = [{k: v for k, v in r.items() if not k.endswith(TIME_SUFFIX)} for r in rows]
    return rows


def to_plain(obj):
    """Convert numpy scalars/arrays (recursively) to YAML-safe builtins."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


class OutputDir:
    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)

    def file(self, name: str) -> Path:
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def echo_config(self, config: dict) -> None:
        self.file("config_echo").write_text(yaml.safe_dump(to_plain(config), sort_keys=True))

    def write_yaml(self, name: str, doc: dict) -> Path:
        p = self.file(name)
        p.write_text(yaml.safe_dump(to_plain(doc), sort_keys=False))
        return p

    def write_metrics(self, rows: Sequence[dict], header: Sequence[str] | None = None, name: str = "metrics.csv"):
        write_table(self.file(name), rows, header)

    def files(self) -> Iterable[Path]:
        return sorted(p for p in self.path.rglob("*") if p.is_file() and p.name != MANIFEST)

    def write_manifest(self) -> Path:
        lines = []
        for p in self.files():
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            lines.append(f"{digest}  {p.relative_to(self.path).as_posix()}")
        m = self.path / MANIFEST
        m.write_text("\n".join(lines) + "\n")
        return m


def map_cells(runner, jobs, workers: int = 1) -> list:
    """Run independent cells, optionally in worker processes.

    Each result's first element is its cell index; results come back sorted
    by it, so output does not depend on the worker count.
    """
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(runner, jobs))
    else:
        res = [runner(j) for j in jobs]
    return sorted(res, key=lambda t: t[0])
