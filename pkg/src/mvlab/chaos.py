"""Quantitative propagation-of-chaos experiments.

The estimable quantities are the conditioned-drift discrepancy for one
tagged particle,

    E | (1/(N-1)) sum_{j != 1} F(t, X^1, X^j) - <mu_t, F(t, X^1, .)> |^2,

and the full-system Girsanov entropy against the product of the mean-field
law (exact for k = N since both laws share the diffusion):

    H^N = 1/2 sum_i E int | (1/(N-1)) sum_{j != i} F - <mu_s, F(s, X^i, .)> |^2 ds.

k-marginal entropies for 1 < k < N are not estimated (no unbiased estimator
without densities); the k = 1 drift gap is the documented surrogate.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats as _stats

from .drifts import DriftSpec, Kernel, MeanFieldKernel
from .paths import Ensemble
from .sde import SolverConfig, particle_system, picard_solve
from .spde import (
    FieldKernelOfOther,
    SpdeConfig,
    SpdeDriftSpec,
    SpdeKernel,
    SpectralBasis,
    heat_mf_solve,
    spde_particles,
)

__all__ = [
    "SdeKernelOps",
    "SpdeKernelOps",
    "drift_gap",
    "system_entropy",
    "RateFit",
    "rate_fit",
    "ChaosRun",
    "chaos_sweep_sde",
    "chaos_sweep_spde",
]


class SdeKernelOps:
    """Evaluation helpers for state kernels on R^d particle blocks.

    Measure means of g(y)-type kernels depend only on the node, not the
    probe system, and are cached across repetitions.
    """

    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self._mean_cache: dict = {}

    def excl_means(self, t, states):
        """(1/(N-1)) sum_{j != i} F(t, x_i, x_j) for every i: (N, d)."""
        n = states.shape[0]
        if isinstance(self.kernel, MeanFieldKernel):
            g = np.asarray(self.kernel.g(t, states), float)
            return (g.sum(axis=0) - g) / (n - 1)
        pair = self.kernel.pair_values(t, states, states)
        pair[np.arange(n), np.arange(n), :] = 0.0
        return pair.sum(axis=1) / (n - 1)

    def measure_means(self, t, states, meanfield: Ensemble, node: int):
        if isinstance(self.kernel, MeanFieldKernel):
            key = (id(meanfield), node)
            if key not in self._mean_cache:
                g = np.asarray(self.kernel.g(t, meanfield.values[:, node, :]), float)
                self._mean_cache[key] = meanfield.weights @ g
            return np.broadcast_to(self._mean_cache[key],
                                   (states.shape[0], states.shape[1])).copy()
        y = meanfield.values[:, node, :]
        return self.kernel.mean_against(t, states, y, meanfield.weights)


class SpdeKernelOps:
    """Same contract for field kernels; norms are L2 via mode projection."""

    def __init__(self, kernel: SpdeKernel, basis: SpectralBasis):
        self.kernel = kernel
        self.basis = basis
        self._mean_cache: dict = {}

    def excl_means(self, t, coeffs):
        n = coeffs.shape[0]
        spatial = self.basis.synthesize(coeffs)
        if isinstance(self.kernel, FieldKernelOfOther):
            f = np.asarray(self.kernel.fn(spatial), float)
            excl = (f.sum(axis=0) - f) / (n - 1)
        else:
            pair = self.kernel.pair_spatial(t, spatial, spatial)
            pair[np.arange(n), np.arange(n), :] = 0.0
            excl = pair.sum(axis=1) / (n - 1)
        return self.basis.project(excl)

    def measure_means(self, t, coeffs, meanfield: Ensemble, node: int):
        if isinstance(self.kernel, FieldKernelOfOther):
            key = (id(meanfield), node)
            if key not in self._mean_cache:
                y = self.basis.synthesize(meanfield.values[:, node, :])
                fy = np.asarray(self.kernel.fn(y), float)
                self._mean_cache[key] = self.basis.project(meanfield.weights @ fy)
            return np.broadcast_to(self._mean_cache[key],
                                   (coeffs.shape[0], self.basis.n_modes)).copy()
        spatial = self.basis.synthesize(coeffs)
        y = self.basis.synthesize(meanfield.values[:, node, :])
        return self.basis.project(
            self.kernel.mean_spatial(t, spatial, y, meanfield.weights)
        )


def drift_gap(systems, meanfield: Ensemble, ops, t: float):
    """Monte-Carlo estimate (value, stderr) of the tagged-particle drift gap
    at time t, one sample per repetition of the particle system."""
    node = meanfield.grid.node_of(t)
    samples = []
    for system in systems:
        if system.n_paths < 2:
            raise ValueError("drift gap needs at least two particles")
        k = system.grid.node_of(t)
        states = system.values[:, k, :]
        excl = ops.excl_means(t, states)[0]
        ref = ops.measure_means(t, states[:1], meanfield, node)[0]
        samples.append(float(np.sum((excl - ref) ** 2)))
    samples = np.asarray(samples)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(len(samples)))


def system_entropy(systems, meanfield: Ensemble, ops, up_to: float):
    """(value, stderr) of the exact k = N Girsanov entropy functional."""
    samples = []
    for system in systems:
        if system.n_paths < 2:
            raise ValueError("system entropy needs at least two particles")
        kk = system.grid.node_of(up_to)
        dt = system.grid.dt
        total = 0.0
        for k in range(kk):
            t = k * dt
            states = system.values[:, k, :]
            node = meanfield.grid.node_of(t)
            diff = ops.excl_means(t, states) - ops.measure_means(
                t, states, meanfield, node)
            total += float(np.sum(diff**2)) * dt
        samples.append(0.5 * total)
    samples = np.asarray(samples)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(len(samples)))


@dataclass(frozen=True)
class RateFit:
    slope: float
    half_width: float  # 95% confidence half-width


def rate_fit(ns, ys) -> RateFit:
    """OLS slope of log y against log N with a 95% confidence half-width."""
    ns = np.asarray(ns, float)
    ys = np.asarray(ys, float)
    if len(ns) < 4:
        raise ValueError("rate fit needs at least 4 points")
    if np.any(ys <= 0):
        raise ValueError("rate fit needs positive statistics")
    res = _stats.linregress(np.log(ns), np.log(ys))
    half = res.stderr * _stats.t.ppf(0.975, len(ns) - 2)
    return RateFit(float(res.slope), float(half))


@dataclass
class ChaosRun:
    """One sweep: per-N statistics rows, rate fits, and the mean-field
    reference the gaps were measured against."""

    ns: list
    rows: list  # dicts: {"N", "stat", "value", "stderr"}
    fits: dict  # stat name -> RateFit
    meanfield: Ensemble

    def values(self, stat):
        return [r["value"] for r in self.rows if r["stat"] == stat]

    def stderrs(self, stat):
        return [r["stderr"] for r in self.rows if r["stat"] == stat]


def _sweep(ns, repetitions, simulate, gap_ops, meanfield, horizon, threads):
    rows = []
    for n_particles in ns:
        def job(r, n_particles=n_particles):
            return simulate(n_particles, r)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                systems = list(pool.map(job, range(repetitions)))
        else:
            systems = [job(r) for r in range(repetitions)]
        g0, se0 = drift_gap(systems, meanfield, gap_ops, 0.0)
        gt, set_ = drift_gap(systems, meanfield, gap_ops, horizon)
        ent, se_e = system_entropy(systems, meanfield, gap_ops, horizon)
        rows += [
            {"N": n_particles, "stat": "drift_gap_t0", "value": g0, "stderr": se0},
            {"N": n_particles, "stat": "drift_gap_T", "value": gt, "stderr": set_},
            {"N": n_particles, "stat": "system_entropy", "value": ent, "stderr": se_e},
            {"N": n_particles, "stat": "entropy_per_particle", "value": ent / n_particles,
             "stderr": se_e / n_particles},
        ]
    fits = {}
    for stat in ("drift_gap_t0", "drift_gap_T", "entropy_per_particle"):
        vals = [r["value"] for r in rows if r["stat"] == stat]
        if len(ns) >= 4 and all(v > 0 for v in vals):
            fits[stat] = rate_fit(ns, vals)
    return rows, fits


def chaos_sweep_sde(spec: DriftSpec, ns, repetitions: int, config: SolverConfig,
                    mf_paths: int, tol: float, max_iter: int,
                    threads: int = 1) -> ChaosRun:
    """Particle sweep against the Picard fixed point at matching resolution.

    The mean-field reference is computed once and reused across the sweep;
    repetitions are independent keyed jobs reduced in repetition order.
    """
    mf_config = replace(config, n_paths=mf_paths)
    meanfield = picard_solve(spec, mf_config, tol, max_iter, label="chaos-mf").ensemble
    kernels = spec.kernels()
    if len(kernels) != 1:
        raise ValueError("chaos sweep expects a single interaction kernel")
    ops = SdeKernelOps(kernels[0])

    def simulate(n_particles, r):
        return particle_system(spec, n_particles, config,
                               label=f"chaos/N{n_particles}/rep{r}")

    rows, fits = _sweep(ns, repetitions, simulate, ops, meanfield,
                        config.grid.t_end, threads)
    return ChaosRun(list(ns), rows, fits, meanfield)


def chaos_sweep_spde(kernel: SpdeKernel, ns, repetitions: int, config: SpdeConfig,
                     mf_replicas: int, tol: float, max_iter: int,
                     threads: int = 1) -> ChaosRun:
    """SPDE variant: heat-equation particles against the mean-field SPDE."""
    basis = config.basis("heat")
    mf_config = replace(config, n_replicas=mf_replicas)
    mf_drift = SpdeDriftSpec(_MeanOfKernel(kernel, basis), bound=kernel.bound)
    meanfield = heat_mf_solve(mf_drift, mf_config, tol, max_iter,
                              label="chaos-mf").ensemble
    ops = SpdeKernelOps(kernel, basis)

    def simulate(n_particles, r):
        return spde_particles(kernel, n_particles, config,
                              label=f"chaos/N{n_particles}/rep{r}")

    rows, fits = _sweep(ns, repetitions, simulate, ops, meanfield,
                        config.grid.t_end, threads)
    return ChaosRun(list(ns), rows, fits, meanfield)


class _MeanOfKernel:
    """Mean-field forcing <mu_t, F(t, X, .)> induced by a pair kernel."""

    def __init__(self, kernel: SpdeKernel, basis: SpectralBasis):
        self.kernel = kernel
        self.basis = basis
        self.bound = kernel.bound

    def eval_modes(self, t, coeffs, measure, basis):
        spatial = basis.synthesize(coeffs)
        node = measure.node_of(t)
        y = basis.synthesize(measure.ensemble.values[:, node, :])
        return basis.project(
            self.kernel.mean_spatial(t, spatial, y, measure.ensemble.weights)
        )
