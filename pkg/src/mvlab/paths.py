"""Uniform time grids, discretized paths and weighted path ensembles.

Everything downstream (drifts, entropies, solvers) consumes these types.
Grids are uniform and time arguments snap to nodes, so every time integral
in the package is an exact Riemann sum over grid nodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "Path",
    "Ensemble",
    "Marginal",
    "sup_norm",
    "holder_norm",
    "marginal",
    "project",
    "write_ensemble_csv",
    "read_ensemble_csv",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with nodes k * dt, k = 0..n_steps."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def times(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.dt

    def node_of(self, t: float) -> int:
        """Snap t to the nearest grid node; t outside [0, T] is a domain error."""
        if not (0.0 <= t <= self.t_end * (1 + 1e-12)):
            raise ValueError(f"time {t} outside [0, {self.t_end}]")
        return min(int(round(t / self.dt)), self.n_steps)

    def prefix(self, node: int) -> "TimeGrid":
        """Subgrid [0, node*dt] with the same spacing."""
        if not (1 <= node <= self.n_steps):
            raise ValueError(f"node {node} not in [1, {self.n_steps}]")
        return TimeGrid(node * self.dt, node)


@dataclass(frozen=True)
class Path:
    """One discretized trajectory: values[k] is the state at node k."""

    grid: TimeGrid
    values: np.ndarray  # (n_nodes, dim)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"path has {vals.shape[0]} values for a grid of {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("path contains non-finite values")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Ensemble:
    """M paths on one grid with weights summing to 1 (uniform by default).

    Values are stored as one (M, n_nodes, dim) block; member paths are views.
    """

    grid: TimeGrid
    values: np.ndarray  # (M, n_nodes, dim)
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        if vals.ndim != 3 or vals.shape[1] != self.grid.n_nodes:
            raise ValueError(f"ensemble values shape {vals.shape} does not match grid")
        if not np.all(np.isfinite(vals)):
            raise ValueError("ensemble contains non-finite values")
        w = self.weights
        if w is None:
            w = np.full(vals.shape[0], 1.0 / vals.shape[0])
        else:
            w = np.asarray(w, dtype=float)
            if w.shape != (vals.shape[0],):
                raise ValueError("weights length must equal the number of paths")
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights sum to {w.sum()}, not 1")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        w = np.ascontiguousarray(w)
        w.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "weights", w)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def path(self, i: int) -> Path:
        return Path(self.grid, self.values[i])

    def paths(self):
        return [self.path(i) for i in range(self.n_paths)]


@dataclass(frozen=True)
class Marginal:
    """Weighted point cloud in R^d: the time-t slice of an ensemble."""

    points: np.ndarray  # (M, dim)
    weights: np.ndarray  # (M,)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


def sup_norm(path: Path, t: float) -> float:
    """sup of |x_s| (Euclidean) over grid nodes s <= t; t snaps to a node."""
    k = path.grid.node_of(t)
    norms = np.linalg.norm(path.values[: k + 1], axis=1)
    return float(norms.max())


def holder_norm(path: Path, gamma: float, interval: tuple[float, float] | None = None) -> float:
    """Discrete gamma-Hoelder norm: max over node pairs s < t in [a, b] of
    |x_t - x_s| / (t - s)^gamma."""
    if not (0.0 < gamma <= 1.0):
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    a, b = interval if interval is not None else (0.0, path.grid.t_end)
    ia, ib = path.grid.node_of(a), path.grid.node_of(b)
    if ia >= ib:
        raise ValueError(f"empty interval [{a}, {b}]")
    dt = path.grid.dt
    vals = path.values[ia : ib + 1]
    best = 0.0
    for lag in range(1, len(vals)):
        diffs = np.linalg.norm(vals[lag:] - vals[:-lag], axis=1)
        best = max(best, diffs.max() / (lag * dt) ** gamma)
    return float(best)


def marginal(ensemble: Ensemble, t: float) -> Marginal:
    """Time-t values of every member path, carrying the ensemble weights."""
    k = ensemble.grid.node_of(t)
    return Marginal(ensemble.values[:, k, :], ensemble.weights)


def project(ensemble: Ensemble, t: float) -> Ensemble:
    """Restrict every path to [0, t] (t a grid node > 0), preserving weights."""
    k = ensemble.grid.node_of(t)
    if k == ensemble.grid.n_steps:
        return ensemble
    if k == 0:
        raise ValueError("cannot project onto the single node t=0")
    return Ensemble(ensemble.grid.prefix(k), ensemble.values[:, : k + 1, :], ensemble.weights)


def write_ensemble_csv(ensemble: Ensemble, fp) -> None:
    """CSV dump: header path_id,t,x1,...,xd and one row per (path, node)."""
    d = ensemble.dim
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["path_id", "t"] + [f"x{j + 1}" for j in range(d)])
    times = ensemble.grid.times()
    for i in range(ensemble.n_paths):
        for k in range(ensemble.grid.n_nodes):
            writer.writerow([i, f"{times[k]:.12g}"] + [f"{v:.12g}" for v in ensemble.values[i, k]])


def read_ensemble_csv(fp) -> Ensemble:
    """Inverse of write_ensemble_csv; weights come back uniform."""
    reader = csv.reader(fp)
    header = next(reader)
    d = len(header) - 2
    rows: dict[int, list[tuple[float, list[float]]]] = {}
    for row in reader:
        pid = int(row[0])
        rows.setdefault(pid, []).append((float(row[1]), [float(v) for v in row[2:]]))
    n_nodes = len(rows[0])
    t_end = max(t for t, _ in rows[0])
    grid = TimeGrid(t_end, n_nodes - 1)
    values = np.empty((len(rows), n_nodes, d))
    for pid, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        values[pid] = [v for _, v in entries]
    return Ensemble(grid, values)
