"""Euler-Maruyama integration of frozen-measure SDEs, the measure-Picard
fixed-point loop with entropy diagnostics, the truncation ladder, and direct
N-particle systems.

Every Picard iterate draws fresh noise and fresh initial samples (the fixed
point is a law, not a pathwise object); entropy between iterates is always
the exact Girsanov functional of the two frozen drifts, never a density
estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as _rng
from .drifts import Drift, DriftSpec, ZeroDrift, freeze, truncate
from .errors import SingularDriftError
from .fbm import FbmSampler, fbm_path_entropy
from .measures import EntropyReport, girsanov_entropy
from .paths import Ensemble, Marginal, TimeGrid

__all__ = [
    "PointMass",
    "GaussianLaw",
    "SampleFile",
    "NoiseSpec",
    "SolverConfig",
    "PicardState",
    "LadderRung",
    "euler_maruyama",
    "driver_ensemble",
    "entropy_between",
    "picard_solve",
    "truncation_ladder",
    "particle_system",
]


# ---------------------------------------------------------------------------
# initial laws

@dataclass(frozen=True)
class PointMass:
    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.atleast_1d(np.asarray(self.point, float)))

    def sample(self, m, dim, seed, label):
        if self.point.shape[0] != dim:
            raise ValueError("point mass dimension mismatch")
        return np.broadcast_to(self.point, (m, dim)).copy()

    def subgaussian_c0(self):
        return math.inf


@dataclass(frozen=True)
class GaussianLaw:
    mean: np.ndarray = 0.0
    std: float = 1.0

    def sample(self, m, dim, seed, label):
        mean = np.broadcast_to(np.atleast_1d(np.asarray(self.mean, float)), (dim,))
        z = _rng.path_normals(seed, label, m, (dim,))
        return mean + self.std * z

    def subgaussian_c0(self):
        # int e^{c|x|^2} dN(mean, std^2) < inf for c < 1/(2 std^2); record half
        return 1.0 / (4.0 * self.std**2)


@dataclass(frozen=True)
class SampleFile:
    """Initial samples loaded from a CSV of rows x1,...,xd (no header)."""

    path: str

    def sample(self, m, dim, seed, label):
        data = np.loadtxt(self.path, delimiter=",", ndmin=2)
        if data.shape != (m, dim):
            raise ValueError(
                f"sample file {self.path} has shape {data.shape}, expected {(m, dim)}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("sample file contains non-finite entries")
        return data

    def subgaussian_c0(self):
        return None  # unknown; reported as such next to R_eps diagnostics


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "bm"  # "bm" | "fbm"
    hurst: float = 0.5

    def __post_init__(self):
        if self.kind not in ("bm", "fbm"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "fbm" and not (0.0 < self.hurst < 1.0):
            raise ValueError(f"Hurst index must lie in (0, 1), got {self.hurst}")


@dataclass(frozen=True)
class SolverConfig:
    grid: TimeGrid
    n_paths: int
    dim: int = 1
    initial: object = field(default_factory=lambda: PointMass(np.zeros(1)))
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError(f"n_paths must be at least 2, got {self.n_paths}")


_sampler_cache: dict = {}


def _fbm_sampler(grid: TimeGrid, hurst: float, dim: int) -> FbmSampler:
    key = (grid, round(hurst, 12), dim)
    if key not in _sampler_cache:
        _sampler_cache[key] = FbmSampler(hurst, grid, dim)
    return _sampler_cache[key]


def _increments(config: SolverConfig, label: str, n_paths=None, indices=None) -> np.ndarray:
    """Driver increments (M, n_steps, dim) from per-path keyed streams."""
    m = config.n_paths if n_paths is None else n_paths
    n, d = config.grid.n_steps, config.dim
    if indices is None:
        z = _rng.path_normals(config.seed, label, m, (n, d))
    else:
        z = np.empty((m, n, d))
        for row, idx in enumerate(indices):
            z[row] = _rng.stream(config.seed, label, idx).standard_normal((n, d))
    if config.noise.kind == "bm":
        return math.sqrt(config.grid.dt) * z
    sampler = _fbm_sampler(config.grid, config.noise.hurst, d)
    paths = np.einsum("ij,mjd->mid", sampler.cov_factor, z)
    inc = np.empty_like(z)
    inc[:, 0, :] = paths[:, 0, :]
    inc[:, 1:, :] = np.diff(paths, axis=1)
    return inc


def _check_finite(block, k):
    flat = block.reshape(block.shape[0], -1)
    mask = ~np.all(np.isfinite(flat), axis=1)
    if mask.any():
        bad = int(np.flatnonzero(mask)[0])
        raise SingularDriftError(
            f"drift not finite on path {bad} at node {k}", path_id=bad, node=k
        )


def euler_maruyama(drift: Drift, config: SolverConfig, label: str = "em") -> Ensemble:
    """Left-point Euler scheme X_{k+1} = X_k + b(t_k, X_[0,t_k]) dt + dW_k.

    Deterministic given (config, seed, label); paths own keyed substreams.
    """
    grid = config.grid
    m, n, d = config.n_paths, grid.n_steps, config.dim
    x0 = config.initial.sample(m, d, config.seed, label + "/init")
    dw = _increments(config, label + "/noise")
    values = np.empty((m, n + 1, d))
    values[:, 0, :] = x0
    dt = grid.dt
    for k in range(n):
        b = drift.eval_batch(k * dt, k, values)
        _check_finite(b, k)
        values[:, k + 1, :] = values[:, k, :] + b * dt + dw[:, k, :]
    return Ensemble(grid, values)


def driver_ensemble(config: SolverConfig, label: str = "driver") -> Ensemble:
    """Law of (initial sample + driver): the Picard seed ensemble."""
    return euler_maruyama(ZeroDrift(config.dim), config, label)


def entropy_between(b_new: Drift, b_old: Drift, sample_law: Ensemble,
                    config: SolverConfig, up_to: float) -> EntropyReport:
    """Girsanov entropy H(law(b_new) | law(b_old)) along sample_law.

    Brownian drivers use the additive formula directly; fBM drivers push the
    drift difference through the inverse Volterra operator.
    """
    if config.noise.kind == "bm":
        return girsanov_entropy(b_new, b_old, sample_law, up_to)
    grid = sample_law.grid
    m, d = sample_law.n_paths, sample_law.dim
    u = np.empty((m, grid.n_nodes, d))
    for k in range(grid.n_nodes):
        t = k * grid.dt
        u[:, k, :] = b_new.eval_batch(t, k, sample_law.values) - b_old.eval_batch(
            t, k, sample_law.values
        )
        _check_finite(u[:, k, :], k)
    return fbm_path_entropy(u, config.noise.hurst, grid, up_to, sample_law.weights)


# ---------------------------------------------------------------------------
# measure-Picard iteration

@dataclass
class PicardState:
    """Result of the fixed-point loop: final iterate plus the gap ledger."""

    ensemble: Ensemble
    drift: Drift
    iterations: int
    gaps: list  # [(entropy_gap, stderr)] per iteration
    converged: bool
    non_contraction: bool

    @property
    def entropy_gap(self):
        return self.gaps[-1][0] if self.gaps else 0.0

    @property
    def gap_stderr(self):
        return self.gaps[-1][1] if self.gaps else 0.0

    @property
    def tv_bound(self):
        return math.sqrt(2.0 * max(self.entropy_gap, 0.0))

    def log_rows(self):
        return [
            {"iter": i + 1, "entropy_gap": g, "stderr": se,
             "tv_bound": math.sqrt(2.0 * max(g, 0.0))}
            for i, (g, se) in enumerate(self.gaps)
        ]


def _non_contraction(gaps) -> bool:
    vals = [g for g, _ in gaps]
    run = 0
    for prev, cur in zip(vals, vals[1:]):
        run = run + 1 if cur >= prev else 0
        if run >= 3:
            return True
    return False


def picard_solve(spec: DriftSpec, config: SolverConfig, tol: float,
                 max_iter: int, label: str = "picard") -> PicardState:
    """Iterate mu^{k+1} = law of the SDE with drift frozen at mu^k.

    mu^0 is the driver law started from the initial samples; each iterate
    uses fresh noise.  Stops when the Girsanov entropy between successive
    iterates at T falls below tol.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    horizon = config.grid.t_end
    mu = driver_ensemble(config, f"{label}/iter0")
    prev_drift: Drift = ZeroDrift(config.dim)
    gaps: list = []
    converged = False
    drift = prev_drift
    for it in range(1, max_iter + 1):
        drift = freeze(spec, mu)
        new = euler_maruyama(drift, config, f"{label}/iter{it}")
        report = entropy_between(drift, prev_drift, new, config, horizon)
        gaps.append((report.final, report.final_stderr))
        mu, prev_drift = new, drift
        if report.final < tol:
            converged = True
            break
    return PicardState(mu, drift, len(gaps), gaps, converged, _non_contraction(gaps))


@dataclass(frozen=True)
class LadderRung:
    level: float
    state: PicardState
    cross_entropy: float | None  # vs the previous (coarser) level
    cross_stderr: float | None


def truncation_ladder(spec: DriftSpec, levels, config: SolverConfig, tol: float,
                      max_iter: int) -> list[LadderRung]:
    """Picard fixed points of the truncated drifts b^n across levels.

    The cross-level entropy H(mu^fine | mu^coarse) is evaluated with the two
    frozen drifts along the finer level's ensemble.  Non-converged levels
    are reported, not fatal.
    """
    levels = list(levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    rungs: list[LadderRung] = []
    prev: tuple | None = None  # (level, state, frozen drift at fixed point)
    for level in levels:
        tspec = truncate(spec, level)
        state = picard_solve(tspec, config, tol, max_iter, label=f"ladder{level:g}")
        fine_drift = freeze(tspec, state.ensemble)
        if prev is None:
            rungs.append(LadderRung(level, state, None, None))
        else:
            _, _, coarse_drift = prev
            report = entropy_between(fine_drift, coarse_drift, state.ensemble,
                                     config, config.grid.t_end)
            rungs.append(LadderRung(level, state, report.final, report.final_stderr))
        prev = (level, state, fine_drift)
    return rungs


# ---------------------------------------------------------------------------
# direct particle systems

def particle_system(spec: DriftSpec, n_particles: int, config: SolverConfig,
                    label: str = "particles", index_map=None) -> Ensemble:
    """Coupled Euler scheme for N particles with pairwise-averaged interaction
    (1/(N-1)) sum_{j != i} b(t, X^i, X^j); the N = 1 sum is empty.

    index_map permutes the per-particle stream keys, so permuting it permutes
    the output paths identically (exchangeability knob).
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    idx = list(range(n_particles)) if index_map is None else list(index_map)
    cfg = replace(config, n_paths=max(n_particles, 2))
    x0_full = cfg.initial.sample(max(idx) + 1, config.dim, config.seed, label + "/init")
    x0 = x0_full[idx]
    dw = _increments(cfg, label + "/noise", n_paths=n_particles, indices=idx)
    grid = config.grid
    n, d = grid.n_steps, config.dim
    values = np.empty((n_particles, n + 1, d))
    values[:, 0, :] = x0
    dt = grid.dt
    b0 = spec.b0()
    kernels = spec.kernels()
    nonlinear = spec.nonlinear()
    for k in range(n):
        t = k * dt
        drift = b0.eval_batch(t, k, values)
        if n_particles > 1:
            for kern in kernels:
                block = values[:, : k + 1, :] if kern.path_dependent else values[:, k, :]
                pair = kern.pair_values(t, block, block)
                pair[np.arange(n_particles), np.arange(n_particles), :] = 0.0
                drift = drift + pair.sum(axis=1) / (n_particles - 1)
            if nonlinear is not None:
                states = values[:, k, :]
                others = np.full(n_particles - 1, 1.0 / (n_particles - 1))
                for i in range(n_particles):
                    rest = np.delete(states, i, axis=0)
                    drift[i] += np.asarray(
                        nonlinear(t, states[i][None, :], Marginal(rest, others)), float
                    )[0]
        _check_finite(drift, k)
        values[:, k + 1, :] = values[:, k, :] + drift * dt + dw[:, k, :]
    return Ensemble(grid, values)
