"""CSV and manifest I/O for panels, truth samples, and metric reports.

Schemas (all long-format, comma-separated, header row first):

* panel:  ``component,time,value`` -- one row per observation; components
  are 0-based integers and may have different lengths and time stamps.
* truth:  ``component,deriv_order,time,value`` -- trajectory and derivative
  samples of the noiseless solution.
* report: ``design,n,d,sigma,seed,M1,M2,M3,M4`` -- one row per replication.

Floats are written with ``repr``, which round-trips exactly, so reading a
file written by this module and writing it again reproduces the bytes.
Manifests are JSON with sorted keys and no timestamps, making repeated runs
byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .smoother import TimeSeriesPanel

__all__ = [
    "MalformedRow",
    "config_hash",
    "read_panel",
    "read_report",
    "read_truth",
    "write_manifest",
    "write_panel",
    "write_report",
    "write_truth",
]

REPORT_FIELDS = ["design", "n", "d", "sigma", "seed", "M1", "M2", "M3", "M4"]


class MalformedRow(ValueError):
    """A CSV row failed to parse; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def write_panel(panel: TimeSeriesPanel, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "time", "value"])
        for j in range(panel.n_components):
            t, y = panel.component(j)
            for ti, yi in zip(t, y):
                w.writerow([j, repr(float(ti)), repr(float(yi))])


def read_panel(path) -> TimeSeriesPanel:
    by_comp: dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["component", "time", "value"]:
            raise MalformedRow(1, "expected header component,time,value")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                j, t, v = int(row[0]), float(row[1]), float(row[2])
            except (ValueError, IndexError) as exc:
                raise MalformedRow(lineno, str(exc)) from exc
            by_comp.setdefault(j, []).append((t, v))
    if not by_comp:
        raise ValueError(f"panel file {path} holds no observations")
    comps = sorted(by_comp)
    if comps != list(range(len(comps))):
        raise ValueError("component indices must be 0..d-1 without gaps")
    times = [np.array([t for t, _ in by_comp[j]]) for j in comps]
    values = [np.array([v for _, v in by_comp[j]]) for j in comps]
    return TimeSeriesPanel(times=times, values=values)


def write_truth(samples: dict, grid, path):
    """``samples`` maps deriv order -> (d, G) arrays on the common grid."""
    grid = np.asarray(grid, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "deriv_order", "time", "value"])
        for kappa in sorted(samples):
            arr = np.asarray(samples[kappa], dtype=float)
            for j in range(arr.shape[0]):
                for ti, vi in zip(grid, arr[j]):
                    w.writerow([j, kappa, repr(float(ti)), repr(float(vi))])


def read_truth(path):
    """Returns ``(samples, grid)`` matching :func:`write_truth`."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["component", "deriv_order", "time", "value"]:
            raise MalformedRow(1, "expected header component,deriv_order,time,value")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2]), float(row[3])))
            except (ValueError, IndexError) as exc:
                raise MalformedRow(lineno, str(exc)) from exc
    orders = sorted({r[1] for r in rows})
    comps = sorted({r[0] for r in rows})
    grid = np.array(sorted({r[2] for r in rows}))
    pos = {t: i for i, t in enumerate(grid)}
    samples = {k: np.full((len(comps), grid.size), np.nan) for k in orders}
    for j, kappa, t, v in rows:
        samples[kappa][j, pos[t]] = v
    return samples, grid


def write_report(rows: list, path):
    """Rows are dicts with the REPORT_FIELDS keys."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("sigma", "M1", "M2", "M3", "M4"):
                out[key] = repr(float(out[key]))
            w.writerow(out)


def read_report(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REPORT_FIELDS:
            raise MalformedRow(1, f"expected header {','.join(REPORT_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append({
                    "design": int(row["design"]),
                    "n": int(row["n"]),
                    "d": int(row["d"]),
                    "sigma": float(row["sigma"]),
                    "seed": int(row["seed"]),
                    "M1": float(row["M1"]),
                    "M2": float(row["M2"]),
                    "M3": float(row["M3"]),
                    "M4": float(row["M4"]),
                })
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedRow(lineno, str(exc)) from exc
    return rows


def config_hash(config: dict) -> str:
    """Stable hash of a configuration mapping (order-independent)."""
    canon = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_manifest(path, config: dict, seeds=None, extra: dict | None = None):
    """Reproducibility record: full config, its hash, seeds, versions."""
    import odecal

    payload = {
        "config": config,
        "config_hash": config_hash(config),
        "seeds": list(map(int, seeds)) if seeds is not None else None,
        "versions": {"odecal": odecal.__version__, "numpy": np.__version__},
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
