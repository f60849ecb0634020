"""Distances and entropy functionals between empirical laws.

Relative entropy is computed only through the Girsanov formula for
drift-shifted diffusions sharing one driver,

    H(P1[t] | P2[t]) = 1/2 E_P1 int_0^t |b1(s, X) - b2(s, X)|^2 ds,

never by density estimation: along simulated paths the formula is an exact
(unbiased) Monte-Carlo functional.  TV is a biased histogram plug-in kept
for diagnostics only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.stats import wasserstein_distance as _w1_1d

from .errors import DivergentWeightError, SingularDriftError, UnsupportedSizeError
from .paths import Ensemble, Marginal, TimeGrid

__all__ = [
    "EmpiricalMeasure",
    "EntropyReport",
    "HistogramPartition",
    "tv_distance",
    "wasserstein1",
    "girsanov_entropy",
    "weighted_pinsker_bound",
    "exp_moment_R",
]

# An empirical measure is just an ensemble viewed as a law on path space;
# marginal views at fixed t give measures on R^d.
EmpiricalMeasure = Ensemble

_EXACT_ASSIGNMENT_MAX = 512


@dataclass(frozen=True)
class EntropyReport:
    """Per-node entropy curve H(t) with Monte-Carlo standard errors."""

    grid: TimeGrid
    values: np.ndarray  # (n_nodes,)
    stderr: np.ndarray  # (n_nodes,)

    @property
    def final(self) -> float:
        return float(self.values[-1])

    @property
    def final_stderr(self) -> float:
        return float(self.stderr[-1])

    def at(self, t: float) -> float:
        return float(self.values[self.grid.node_of(t)])

    def write_csv(self, fp) -> None:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["t", "H", "stderr"])
        for t, h, se in zip(self.grid.times(), self.values, self.stderr):
            writer.writerow([f"{t:.12g}", f"{h:.12g}", f"{se:.12g}"])


@dataclass(frozen=True)
class HistogramPartition:
    """Axis-aligned histogram cells; points outside clamp to boundary cells."""

    edges: tuple  # one sorted edge array per axis

    @classmethod
    def regular(cls, lows, highs, bins: int = 32) -> "HistogramPartition":
        lows = np.atleast_1d(np.asarray(lows, float))
        highs = np.atleast_1d(np.asarray(highs, float))
        edges = []
        for lo, hi in zip(lows, highs):
            if hi <= lo:
                hi = lo + 1.0
            edges.append(np.linspace(lo, hi, bins + 1))
        return cls(tuple(edges))

    @classmethod
    def from_marginals(cls, mu: Marginal, nu: Marginal, bins: int = 32,
                       quantiles=(0.01, 0.99)) -> "HistogramPartition":
        """Default partition: `bins` cells per axis spanning the joint
        1st-99th percentile range of both clouds."""
        pooled = np.vstack([mu.points, nu.points])
        lo = np.quantile(pooled, quantiles[0], axis=0)
        hi = np.quantile(pooled, quantiles[1], axis=0)
        return cls.regular(lo, hi, bins)

    def cell_masses(self, m: Marginal) -> np.ndarray:
        idx = np.zeros(m.points.shape[0], dtype=np.int64)
        stride = 1
        for axis in range(len(self.edges) - 1, -1, -1):
            e = self.edges[axis]
            cells = len(e) - 1
            j = np.clip(np.searchsorted(e, m.points[:, axis], side="right") - 1, 0, cells - 1)
            idx += stride * j
            stride *= cells
        masses = np.zeros(stride)
        np.add.at(masses, idx, m.weights)
        return masses


def tv_distance(mu: Marginal, nu: Marginal,
                partition: HistogramPartition | None = None) -> float:
    """Histogram total-variation distance: half the L1 gap of cell masses.

    A biased (never over-) estimator of TV: mass differences inside one
    cell cancel.  Exact when the two supports are unions of whole cells.
    """
    if mu.points.size == 0 or nu.points.size == 0:
        raise ValueError("empty measure")
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch {mu.dim} != {nu.dim}")
    if partition is None:
        partition = HistogramPartition.from_marginals(mu, nu)
    return 0.5 * float(np.abs(partition.cell_masses(mu) - partition.cell_masses(nu)).sum())


def wasserstein1(mu: Marginal, nu: Marginal) -> float:
    """Exact 1-Wasserstein distance between two finite samples.

    d = 1 uses the quantile coupling (any weights); d > 1 solves the exact
    assignment problem, which needs equal counts, uniform weights and at
    most 512 points.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch {mu.dim} != {nu.dim}")
    if mu.dim == 1:
        return float(_w1_1d(mu.points[:, 0], nu.points[:, 0], mu.weights, nu.weights))
    m = mu.points.shape[0]
    if nu.points.shape[0] != m:
        raise UnsupportedSizeError("d > 1 requires equal sample counts")
    if m > _EXACT_ASSIGNMENT_MAX:
        raise UnsupportedSizeError(
            f"exact assignment supports at most {_EXACT_ASSIGNMENT_MAX} points, got {m}"
        )
    uniform = np.full(m, 1.0 / m)
    if not (np.allclose(mu.weights, uniform) and np.allclose(nu.weights, uniform)):
        raise UnsupportedSizeError("d > 1 requires uniform weights")
    cost = cdist(mu.points, nu.points)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def girsanov_entropy(b1, b2, sample_law: Ensemble, up_to: float) -> EntropyReport:
    """Exact Girsanov relative entropy between the laws of two drifts.

    `sample_law` must be drawn under drift b1 (same driver, shared initial
    samples, so the initial-entropy term is zero).  Per node,
    H(t) = 1/2 <law, left Riemann sum of |b1 - b2|^2>; the standard error
    comes from the path-wise spread of the per-path functionals.
    """
    grid = sample_law.grid
    kk = grid.node_of(up_to)
    if kk == 0:
        raise ValueError("up_to must be at least one step")
    dt = grid.dt
    vals = sample_law.values
    m = sample_law.n_paths
    per_path = np.zeros((m, kk + 1))
    acc = np.zeros(m)
    for k in range(kk):
        t = k * dt
        diff = b1.eval_batch(t, k, vals) - b2.eval_batch(t, k, vals)
        sq = np.einsum("md,md->m", diff, diff)
        if not np.all(np.isfinite(sq)):
            bad = int(np.flatnonzero(~np.isfinite(sq))[0])
            raise SingularDriftError(
                f"drift difference not finite on path {bad} at node {k}",
                path_id=bad, node=k,
            )
        acc = acc + sq * dt
        per_path[:, k + 1] = acc
    per_path *= 0.5
    w = sample_law.weights
    values = w @ per_path
    spread = per_path - values[None, :]
    stderr = np.sqrt(np.einsum("m,mk->k", w**2, spread**2))
    return EntropyReport(TimeGrid(kk * dt, kk) if kk < grid.n_steps else grid,
                         values, stderr)


def weighted_pinsker_bound(f, nu: Marginal, entropy: float) -> float:
    """Right side of the weighted Pinsker inequality:
    2 (1 + log <nu, e^{|f|^2}>) H, to compare against |<mu - nu, f>|^2.

    f maps a point block (M, d) to values (M,) or (M, k); |f|^2 is the
    squared Euclidean norm per sample.
    """
    if entropy < 0:
        raise ValueError("entropy must be nonnegative")
    vals = np.asarray(f(nu.points), float)
    if vals.ndim == 1:
        vals = vals[:, None]
    sq = np.einsum("mk,mk->m", vals, vals)
    with np.errstate(over="ignore"):
        weights = np.exp(sq)
    if not np.all(np.isfinite(weights)):
        raise DivergentWeightError("exp(|f|^2) overflowed on the sample support")
    integral = float(nu.weights @ weights)
    return 2.0 * (1.0 + math.log(integral)) * entropy


def exp_moment_R(mu: Ensemble, nu: Ensemble, kernel, eps: float) -> float:
    """sup_t log int int exp(eps |b(t,x,y)|^2) mu(dx) nu(dy).

    Returns +inf on overflow: the caller is being told to shrink eps,
    mirroring how the exponential-moment functional is used.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if mu.grid != nu.grid:
        raise ValueError("measures must share one grid")
    best = -math.inf
    wx, wy = mu.weights, nu.weights
    for k in range(mu.grid.n_nodes):
        t = k * mu.grid.dt
        if kernel.path_dependent:
            x_in, y_in = mu.values[:, : k + 1, :], nu.values[:, : k + 1, :]
        else:
            x_in, y_in = mu.values[:, k, :], nu.values[:, k, :]
        total = 0.0
        step = max(1, (1 << 22) // max(1, nu.n_paths * kernel.dim))
        for lo in range(0, mu.n_paths, step):
            block = kernel.pair_values(t, x_in[lo : lo + step], y_in)
            sq = np.einsum("xyd,xyd->xy", block, block)
            with np.errstate(over="ignore"):
                ex = np.exp(eps * sq)
            if not np.all(np.isfinite(ex)):
                return math.inf
            total += float(wx[lo : lo + step] @ ex @ wy)
        best = max(best, math.log(total))
    return best
