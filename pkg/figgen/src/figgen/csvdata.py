"""Readers for the harness CSV contracts.

Three file kinds are consumed, never produced:

- convergence sweeps: ``method,h,effective_h,error,stderr,n_force,n_sigma,
  seed,T,n_traj`` with the literal word ``unstable`` in the error/stderr
  columns for diverged runs;
- stability scans: ``p,q2,rho,stable,exact_stable`` in row-major (p outer)
  order with 0/1 flags;
- problem grids: ``x,V,sigma`` from the reference exporter.

Everything is re-plotted from these files alone; figgen never recomputes
simulation results.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

CONVERGENCE_HEADER = ("method", "h", "effective_h", "error", "stderr",
                      "n_force", "n_sigma", "seed", "T", "n_traj")
REGION_HEADER = ("p", "q2", "rho", "stable", "exact_stable")
GRID_HEADER = ("x", "V", "sigma")

UNSTABLE = "unstable"


@dataclass(frozen=True)
class Series:
    """One method's sweep: arrays sorted by decreasing h, finite rows only."""

    method: str
    h: np.ndarray
    error: np.ndarray
    stderr: np.ndarray
    n_force: np.ndarray
    unstable_h: tuple  # stepsizes whose rows carried the unstable sentinel


@dataclass(frozen=True)
class Region:
    p_grid: np.ndarray
    q2_grid: np.ndarray
    rho: np.ndarray
    stable: np.ndarray
    exact_stable: np.ndarray


def _read_rows(path, expected_header):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {p}: {exc}")
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise DataError(f"{p}: empty file, expected header "
                        f"{','.join(expected_header)}")
    if tuple(rows[0]) != expected_header:
        raise DataError(f"{p}: bad header {','.join(rows[0])!r}, expected "
                        f"{','.join(expected_header)}")
    if len(rows) == 1:
        raise DataError(f"{p}: no data rows")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(expected_header):
            raise DataError(f"{p}: row {i}: expected "
                            f"{len(expected_header)} fields, got {len(row)}")
    return rows[1:]


def _number(path, rowno, name, raw):
    try:
        return float(raw)
    except ValueError:
        raise DataError(f"{path}: row {rowno}: {name} is not a number: {raw!r}")


def read_convergence(path) -> list:
    """Parse a sweep CSV into one Series per method, input order preserved."""
    rows = _read_rows(path, CONVERGENCE_HEADER)
    order = []
    groups = {}
    for i, row in enumerate(rows, start=2):
        method = row[0]
        if method not in groups:
            order.append(method)
            groups[method] = {"h": [], "error": [], "stderr": [],
                              "n_force": [], "unstable": []}
        g = groups[method]
        h = _number(path, i, "h", row[1])
        if h <= 0:
            raise DataError(f"{path}: row {i}: h must be positive, got {h}")
        if row[3] == UNSTABLE or row[4] == UNSTABLE:
            g["unstable"].append(h)
            continue
        error = _number(path, i, "error", row[3])
        stderr = _number(path, i, "stderr", row[4])
        if math.isnan(error) or math.isnan(stderr):
            g["unstable"].append(h)
            continue
        g["h"].append(h)
        g["error"].append(error)
        g["stderr"].append(stderr)
        g["n_force"].append(_number(path, i, "n_force", row[5]))
    out = []
    for method in order:
        g = groups[method]
        idx = np.argsort(-np.asarray(g["h"], dtype=float), kind="stable")
        out.append(Series(
            method=method,
            h=np.asarray(g["h"], dtype=float)[idx],
            error=np.asarray(g["error"], dtype=float)[idx],
            stderr=np.asarray(g["stderr"], dtype=float)[idx],
            n_force=np.asarray(g["n_force"], dtype=float)[idx],
            unstable_h=tuple(sorted(g["unstable"], reverse=True)),
        ))
    return out


def read_region(path) -> Region:
    """Parse a stability scan; rows must cover the full grid row-major."""
    rows = _read_rows(path, REGION_HEADER)
    p_vals, q2_vals = [], []
    for i, row in enumerate(rows, start=2):
        p = _number(path, i, "p", row[0])
        q2 = _number(path, i, "q2", row[1])
        if not p_vals or p != p_vals[-1]:
            p_vals.append(p)
        if len(p_vals) == 1:
            q2_vals.append(q2)
    n_p, n_q = len(p_vals), len(q2_vals)
    if n_p * n_q != len(rows):
        raise DataError(f"{path}: {len(rows)} rows do not tile a "
                        f"{n_p} x {n_q} grid; expected row-major order")
    rho = np.empty((n_p, n_q))
    stable = np.empty((n_p, n_q), dtype=bool)
    exact = np.empty((n_p, n_q), dtype=bool)
    for k, row in enumerate(rows):
        i, j = divmod(k, n_q)
        rowno = k + 2
        if _number(path, rowno, "p", row[0]) != p_vals[i] or \
                _number(path, rowno, "q2", row[1]) != q2_vals[j]:
            raise DataError(f"{path}: row {rowno}: grid coordinates out of "
                            f"row-major order")
        rho[i, j] = _number(path, rowno, "rho", row[2])
        for name, col, target in (("stable", 3, stable),
                                  ("exact_stable", 4, exact)):
            if row[col] not in ("0", "1"):
                raise DataError(f"{path}: row {rowno}: {name} must be 0 or 1, "
                                f"got {row[col]!r}")
            target[i, j] = row[col] == "1"
    return Region(np.asarray(p_vals), np.asarray(q2_vals), rho, stable, exact)


def read_problem_grid(path):
    """Parse an x,V,sigma export; returns three aligned arrays."""
    rows = _read_rows(path, GRID_HEADER)
    x = np.array([_number(path, i, "x", r[0])
                  for i, r in enumerate(rows, start=2)])
    v = np.array([_number(path, i, "V", r[1])
                  for i, r in enumerate(rows, start=2)])
    sigma = np.array([_number(path, i, "sigma", r[2])
                      for i, r in enumerate(rows, start=2)])
    if np.any(np.diff(x) <= 0):
        raise DataError(f"{path}: x column must be strictly increasing")
    return x, v, sigma
