"""Spectral-Galerkin mean-field stochastic heat and wave equations on [0, 1].

Heat uses Neumann cosine modes (constant mode k = 0 is a pure Brownian
coordinate); wave uses Dirichlet sine modes, avoiding the zero eigenvalue.
The linear part is integrated exactly per mode (exponential Euler for heat,
exact rotation plus Duhamel increments for wave), so the only discretization
of the dynamics is freezing the nonlinearity on each step.

Field ensembles are plain `Ensemble`s whose state dimension is the mode
count; by Parseval the L2 norm of a field is the Euclidean norm of its
coefficients, so the Girsanov entropy machinery applies verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .drifts import Drift
from .errors import SingularDriftError
from .measures import EntropyReport, girsanov_entropy
from .paths import Ensemble, TimeGrid
from .sde import PicardState, _non_contraction

__all__ = [
    "SpectralBasis",
    "project_function",
    "DeterministicModes",
    "GaussianModes",
    "SpdeConfig",
    "GZero",
    "GConstantModes",
    "GSatDistToMean",
    "GMeasureMean",
    "SpdeDriftSpec",
    "FrozenSpdeDrift",
    "SpdeKernel",
    "FieldKernelOfOther",
    "heat_driver",
    "heat_mf_solve",
    "wave_driver",
    "wave_mf_solve",
    "spde_particles",
]


@dataclass(frozen=True)
class SpectralBasis:
    """Orthonormal mode basis on [0, 1] with midpoint spatial quadrature."""

    kind: str  # "heat" | "wave"
    n_modes: int
    n_quad: int = 256

    def __post_init__(self):
        if self.kind not in ("heat", "wave"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.n_modes < 1 or self.n_modes > self.n_quad:
            raise ValueError("need 1 <= n_modes <= n_quad")

    @property
    def sigma(self) -> np.ndarray:
        return (np.arange(self.n_quad) + 0.5) / self.n_quad

    @property
    def eigenvalues(self) -> np.ndarray:
        if self.kind == "heat":
            k = np.arange(self.n_modes)
        else:
            k = np.arange(1, self.n_modes + 1)
        return (k * np.pi) ** 2

    @property
    def synth_matrix(self) -> np.ndarray:
        """(n_quad, n_modes) values e_k(sigma_q)."""
        s = self.sigma[:, None]
        if self.kind == "heat":
            k = np.arange(self.n_modes)[None, :]
            mat = math.sqrt(2.0) * np.cos(k * np.pi * s)
            mat[:, 0] = 1.0
        else:
            k = np.arange(1, self.n_modes + 1)[None, :]
            mat = math.sqrt(2.0) * np.sin(k * np.pi * s)
        return mat

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Mode coefficients (..., K) -> field values at quad points (..., Q)."""
        return coeffs @ self.synth_matrix.T

    def project(self, values: np.ndarray) -> np.ndarray:
        """Field values at quad points (..., Q) -> mode coefficients (..., K)."""
        return values @ self.synth_matrix / self.n_quad


def project_function(basis: SpectralBasis, fn) -> np.ndarray:
    """Coefficients of a scalar function sigma -> value."""
    return basis.project(np.asarray(fn(basis.sigma), float))


# ---------------------------------------------------------------------------
# initial field laws

@dataclass(frozen=True)
class DeterministicModes:
    coeffs: np.ndarray

    def sample(self, m, n_modes, seed, label):
        c = np.asarray(self.coeffs, float)
        if c.shape != (n_modes,):
            raise ValueError(f"initial coefficients have shape {c.shape}, expected ({n_modes},)")
        return np.broadcast_to(c, (m, n_modes)).copy()


@dataclass(frozen=True)
class GaussianModes:
    """Independent centered Gaussian coefficients with per-mode scales."""

    scales: np.ndarray

    def sample(self, m, n_modes, seed, label):
        s = np.broadcast_to(np.asarray(self.scales, float), (n_modes,))
        return s * _rng.path_normals(seed, label, m, (n_modes,))


@dataclass(frozen=True)
class SpdeConfig:
    grid: TimeGrid
    n_replicas: int
    n_modes: int
    initial: object = field(default_factory=lambda: DeterministicModes(np.zeros(1)))
    seed: int = 0
    n_quad: int = 256

    def __post_init__(self):
        if self.n_replicas < 2:
            raise ValueError("need at least 2 replicas")

    def basis(self, kind: str) -> SpectralBasis:
        return SpectralBasis(kind, self.n_modes, self.n_quad)


# ---------------------------------------------------------------------------
# measure-dependent drifts G

class _FieldMeasure:
    """Frozen field ensemble with per-node caches used by the drifts."""

    def __init__(self, ensemble: Ensemble, basis: SpectralBasis, mode_slice=None):
        self.ensemble = ensemble
        self.basis = basis
        self.mode_slice = mode_slice or slice(None)
        self._mean_cache: dict = {}
        self._fn_cache: dict = {}

    def node_of(self, t):
        return self.ensemble.grid.node_of(t)

    def coeffs_at(self, t):
        return self.ensemble.values[:, self.node_of(t), self.mode_slice]

    def mean_spatial(self, t):
        k = self.node_of(t)
        if k not in self._mean_cache:
            mean_coeffs = self.ensemble.weights @ self.coeffs_at(t)
            self._mean_cache[k] = self.basis.synthesize(mean_coeffs)
        return self._mean_cache[k]

    def mean_of_spatial(self, t, fn, tag):
        """Weighted mean of fn(member field) in spatial representation."""
        k = (self.node_of(t), tag)
        if k not in self._fn_cache:
            spatial = self.basis.synthesize(self.coeffs_at(t))
            self._fn_cache[k] = self.ensemble.weights @ fn(spatial)
        return self._fn_cache[k]


class SpdeDrift:
    """Bounded measure-dependent forcing G(t, X, mu) in mode space."""

    bound: float = 0.0

    def eval_modes(self, t, coeffs, measure: _FieldMeasure | None, basis: SpectralBasis):
        raise NotImplementedError


@dataclass(frozen=True)
class GZero(SpdeDrift):
    bound: float = 0.0

    def eval_modes(self, t, coeffs, measure, basis):
        return np.zeros_like(coeffs)


@dataclass(frozen=True)
class GConstantModes(SpdeDrift):
    coeffs: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, float))

    @property
    def bound(self):
        return float(np.linalg.norm(self.coeffs))

    def eval_modes(self, t, coeffs, measure, basis):
        return np.broadcast_to(self.coeffs[: coeffs.shape[1]], coeffs.shape).copy()


@dataclass(frozen=True)
class GSatDistToMean(SpdeDrift):
    """Saturated pull toward the measure mean: strength * tanh(mean - X)."""

    strength: float = 1.0

    @property
    def bound(self):
        return self.strength

    def eval_modes(self, t, coeffs, measure, basis):
        spatial = basis.synthesize(coeffs)
        mean = measure.mean_spatial(t)
        return basis.project(self.strength * np.tanh(mean[None, :] - spatial))


@dataclass(frozen=True)
class GMeasureMean(SpdeDrift):
    """G(t, X, mu) = <mu, fn(.)>: state-independent mean of a saturated map."""

    fn: object = np.tanh
    sup: float = 1.0

    @property
    def bound(self):
        return self.sup

    def eval_modes(self, t, coeffs, measure, basis):
        mean = measure.mean_of_spatial(t, self.fn, id(self.fn))
        return np.broadcast_to(basis.project(mean), coeffs.shape).copy()


@dataclass(frozen=True)
class SpdeDriftSpec:
    """Forcing plus its declared L2 bound / TV-Lipschitz constant."""

    drift: SpdeDrift
    bound: float = 1.0
    velocity_only: bool = False  # wave systems force the velocity block


class FrozenSpdeDrift(Drift):
    """Adapter: frozen-measure SPDE forcing as a batch drift on coefficients.

    For wave systems the output lives in the velocity block and the position
    block is zero, so |difference|^2 is the L2 norm of the forcing gap.
    """

    def __init__(self, spec: SpdeDriftSpec, measure: Ensemble | None,
                 basis: SpectralBasis):
        self.spec = spec
        self.basis = basis
        self.n_modes = basis.n_modes
        half = slice(0, self.n_modes) if spec.velocity_only else None
        self.measure = (
            _FieldMeasure(measure, basis, mode_slice=half) if measure is not None else None
        )
        self.dim = 2 * self.n_modes if spec.velocity_only else self.n_modes

    def forcing(self, t, coeffs):
        """G in mode space: coeffs (M, K) or (M, 2K) -> (M, K)."""
        state = coeffs[:, : self.n_modes] if self.spec.velocity_only else coeffs
        return self.spec.drift.eval_modes(t, state, self.measure, self.basis)

    def eval_batch(self, t, k, values):
        g = self.forcing(t, values[:, k, :])
        if not self.spec.velocity_only:
            return g
        out = np.zeros((values.shape[0], self.dim))
        out[:, self.n_modes :] = g
        return out


# ---------------------------------------------------------------------------
# heat equation

def _heat_tables(eig, dt):
    decay = np.exp(-eig * dt)
    gain = np.where(eig > 0, -np.expm1(-eig * dt) / np.where(eig > 0, eig, 1.0), dt)
    nvar = np.where(eig > 0, -np.expm1(-2 * eig * dt) / np.where(eig > 0, 2 * eig, 1.0), dt)
    return decay, gain, np.sqrt(nvar)


def _heat_run(drift: FrozenSpdeDrift | None, config: SpdeConfig, label: str) -> Ensemble:
    basis = config.basis("heat")
    grid = config.grid
    m, n, kmodes = config.n_replicas, grid.n_steps, config.n_modes
    decay, gain, nstd = _heat_tables(basis.eigenvalues, grid.dt)
    x0 = config.initial.sample(m, kmodes, config.seed, label + "/init")
    noise = _rng.path_normals(config.seed, label + "/noise", m, (n, kmodes))
    values = np.empty((m, n + 1, kmodes))
    values[:, 0, :] = x0
    for k in range(n):
        x = values[:, k, :]
        g = 0.0 if drift is None else drift.forcing(k * grid.dt, x)
        if drift is not None and not np.all(np.isfinite(g)):
            raise SingularDriftError(f"SPDE forcing not finite at node {k}", node=k)
        values[:, k + 1, :] = decay * x + gain * g + nstd * noise[:, k, :]
    return Ensemble(grid, values)


def heat_driver(config: SpdeConfig, label: str = "heat-driver") -> Ensemble:
    """G = 0 stochastic heat dynamics: the Picard seed law."""
    return _heat_run(None, config, label)


def _picard_fields(spec: SpdeDriftSpec, config: SpdeConfig, tol, max_iter,
                   runner, basis, label) -> PicardState:
    mu = runner(None, config, f"{label}/iter0")
    prev: Drift | None = None
    gaps: list = []
    converged = False
    drift = None
    horizon = config.grid.t_end
    for it in range(1, max_iter + 1):
        drift = FrozenSpdeDrift(spec, mu, basis)
        new = runner(drift, config, f"{label}/iter{it}")
        old = prev if prev is not None else FrozenSpdeDrift(
            SpdeDriftSpec(GZero(), 0.0, spec.velocity_only), None, basis)
        report: EntropyReport = girsanov_entropy(drift, old, new, horizon)
        gaps.append((report.final, report.final_stderr))
        mu, prev = new, drift
        if report.final < tol:
            converged = True
            break
    return PicardState(mu, drift, len(gaps), gaps, converged, _non_contraction(gaps))


def heat_mf_solve(spec: SpdeDriftSpec, config: SpdeConfig, tol: float,
                  max_iter: int, label: str = "heat") -> PicardState:
    """Measure-Picard loop for the mean-field stochastic heat equation."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    basis = config.basis("heat")
    return _picard_fields(spec, config, tol, max_iter, _heat_run, basis, label)


# ---------------------------------------------------------------------------
# wave equation (second-order system, noise and forcing on the velocity)

def _wave_tables(eig, dt):
    om = np.sqrt(eig)
    c, s = np.cos(om * dt), np.sin(om * dt)
    drift_y = (1.0 - c) / eig
    drift_z = s / om
    var_y = dt / (2 * eig) - np.sin(2 * om * dt) / (4 * eig * om)
    var_z = dt / 2 + np.sin(2 * om * dt) / (4 * om)
    cov = np.sin(om * dt) ** 2 / (2 * eig)
    a = np.sqrt(np.maximum(var_y, 0.0))
    b = np.where(a > 0, cov / np.where(a > 0, a, 1.0), 0.0)
    cc = np.sqrt(np.maximum(var_z - b**2, 0.0))
    return om, c, s, drift_y, drift_z, a, b, cc


def _make_wave_runner(noisy: bool):
    def _wave_run(drift: FrozenSpdeDrift | None, config: SpdeConfig, label: str) -> Ensemble:
        basis = config.basis("wave")
        grid = config.grid
        m, n, kmodes = config.n_replicas, grid.n_steps, config.n_modes
        om, c, s, dy, dz, na, nb, nc = _wave_tables(basis.eigenvalues, grid.dt)
        x0 = config.initial.sample(m, 2 * kmodes, config.seed, label + "/init")
        if noisy:
            xi = _rng.path_normals(config.seed, label + "/noise", m, (n, 2, kmodes))
        values = np.empty((m, n + 1, 2 * kmodes))
        values[:, 0, :] = x0
        for k in range(n):
            y = values[:, k, :kmodes]
            z = values[:, k, kmodes:]
            g = 0.0 if drift is None else drift.forcing(k * grid.dt, values[:, k, :])
            if drift is not None and not np.all(np.isfinite(g)):
                raise SingularDriftError(f"SPDE forcing not finite at node {k}", node=k)
            ny = c * y + (s / om) * z + dy * g
            nz = -om * s * y + c * z + dz * g
            if noisy:
                ny = ny + na * xi[:, k, 0, :]
                nz = nz + nb * xi[:, k, 0, :] + nc * xi[:, k, 1, :]
            values[:, k + 1, :kmodes] = ny
            values[:, k + 1, kmodes:] = nz
        return Ensemble(grid, values)

    return _wave_run


def wave_driver(config: SpdeConfig, noisy: bool = True,
                label: str = "wave-driver") -> Ensemble:
    """G = 0 wave dynamics (exact per-mode rotation plus velocity noise)."""
    return _make_wave_runner(noisy)(None, config, label)


def wave_mf_solve(spec: SpdeDriftSpec, config: SpdeConfig, tol: float,
                  max_iter: int, noisy: bool = True, label: str = "wave") -> PicardState:
    """Measure-Picard loop for the mean-field stochastic wave equation.

    The forcing acts on the velocity component only; the Girsanov gap is the
    L2 norm of the velocity-drift difference.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    spec = SpdeDriftSpec(spec.drift, spec.bound, velocity_only=True)
    basis = config.basis("wave")
    return _picard_fields(spec, config, tol, max_iter, _make_wave_runner(noisy),
                          basis, label)


# ---------------------------------------------------------------------------
# interacting field particles (heat dynamics)

class SpdeKernel:
    """Pairwise field interaction F(t, x, y) evaluated spatially."""

    bound: float = 1.0

    def pair_spatial(self, t, xs, ys):
        """xs (Nx, Q), ys (Ny, Q) -> (Nx, Ny, Q)."""
        raise NotImplementedError

    def mean_spatial(self, t, xs, ys, weights):
        return np.einsum("xyq,y->xq", self.pair_spatial(t, xs, ys), weights)


@dataclass(frozen=True)
class FieldKernelOfOther(SpdeKernel):
    """F(t, x, y) = fn(y) pointwise in space (ignores the first argument)."""

    fn: object = np.tanh
    bound: float = 1.0

    def pair_spatial(self, t, xs, ys):
        fy = np.asarray(self.fn(ys), float)
        return np.broadcast_to(fy[None, :, :], (xs.shape[0],) + fy.shape).copy()

    def mean_spatial(self, t, xs, ys, weights):
        fy = np.asarray(self.fn(ys), float)
        return np.broadcast_to(weights @ fy, (xs.shape[0], ys.shape[1])).copy()


def spde_particles(kernel: SpdeKernel, n_particles: int, config: SpdeConfig,
                   label: str = "spde-particles") -> Ensemble:
    """N coupled stochastic heat equations with pairwise-averaged forcing
    (1/(N-1)) sum_{j != i} F(t, X^i, X^j); N = 1 has zero forcing."""
    if n_particles < 1:
        raise ValueError("need at least one particle")
    basis = config.basis("heat")
    grid = config.grid
    n, kmodes = grid.n_steps, config.n_modes
    decay, gain, nstd = _heat_tables(basis.eigenvalues, grid.dt)
    x0 = config.initial.sample(n_particles, kmodes, config.seed, label + "/init")
    noise = _rng.path_normals(config.seed, label + "/noise", n_particles, (n, kmodes))
    values = np.empty((n_particles, n + 1, kmodes))
    values[:, 0, :] = x0
    for k in range(n):
        x = values[:, k, :]
        if n_particles > 1:
            spatial = basis.synthesize(x)
            pair = kernel.pair_spatial(k * grid.dt, spatial, spatial)
            pair[np.arange(n_particles), np.arange(n_particles), :] = 0.0
            forcing = basis.project(pair.sum(axis=1) / (n_particles - 1))
        else:
            forcing = 0.0
        values[:, k + 1, :] = decay * x + gain * forcing + nstd * noise[:, k, :]
    return Ensemble(grid, values)
