"""Fractional Brownian drivers and the fractional-calculus toolbox.

Sampling is exact in distribution through a dense Cholesky factor of the
node covariance R_H(t_i, t_j) = (t_i^{2H} + t_j^{2H} - |t_i - t_j|^{2H}) / 2.
The forward Volterra kernel is never formed; inversion goes through the
Riemann-Liouville operators:

    K^{-1} h = s^{H-1/2} I^{1/2-H} [ s^{1/2-H} h' ]        (H < 1/2)
    K^{-1} h = s^{H-1/2} D^{H-1/2} [ s^{1/2-H} h' ]        (H > 1/2)
    K^{-1} h = h'                                          (H = 1/2)

discretized by product-rectangle quadrature on the solver grid, so the
entropy functionals below need no resampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as _gamma

from . import rng as _rng
from .errors import NumericError, ResolutionError
from .measures import EntropyReport
from .paths import Ensemble, Path, TimeGrid

__all__ = [
    "rh_cov",
    "FbmSampler",
    "sample_fbm",
    "sample_fbm_ensemble",
    "frac_integral",
    "frac_derivative",
    "kh_inverse",
    "fbm_path_entropy",
]

_MIN_KH_STEPS = 64


def rh_cov(s: float, t: float, hurst: float):
    """fBM covariance R_H(s, t) = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2."""
    if not (0.0 < hurst < 1.0):
        raise ValueError(f"Hurst index must lie in (0, 1), got {hurst}")
    s = np.asarray(s, float)
    t = np.asarray(t, float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("times must be nonnegative")
    h2 = 2.0 * hurst
    return 0.5 * (s**h2 + t**h2 - np.abs(t - s) ** h2)


@dataclass(frozen=True)
class FbmSampler:
    """Exact Gaussian sampler for B^H on a grid, one factorization per grid.

    The factor is lower-triangular for the covariance of nodes 1..n; node 0
    is pinned to zero.  A tiny diagonal jitter (at most 1e-10 T^{2H}) is
    allowed to absorb roundoff in the factorization.
    """

    hurst: float
    grid: TimeGrid
    dim: int = 1
    cov_factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.hurst < 1.0):
            raise ValueError(f"Hurst index must lie in (0, 1), got {self.hurst}")
        t = self.grid.times()[1:]
        cov = rh_cov(t[:, None], t[None, :], self.hurst)
        try:
            factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            jitter = 1e-10 * self.grid.t_end ** (2 * self.hurst)
            try:
                factor = np.linalg.cholesky(cov + jitter * np.eye(len(t)))
            except np.linalg.LinAlgError as exc:
                raise NumericError(
                    f"fBM covariance factorization failed for H={self.hurst}"
                ) from exc
        object.__setattr__(self, "cov_factor", factor)

    def covariance(self) -> np.ndarray:
        t = self.grid.times()[1:]
        return rh_cov(t[:, None], t[None, :], self.hurst)


def sample_fbm(sampler: FbmSampler, rng_stream: np.random.Generator) -> Path:
    """One d-dimensional fBM path; B_0 = 0 exactly, coordinates independent."""
    z = rng_stream.standard_normal((sampler.grid.n_steps, sampler.dim))
    vals = np.zeros((sampler.grid.n_nodes, sampler.dim))
    vals[1:] = sampler.cov_factor @ z
    return Path(sampler.grid, vals)


def sample_fbm_ensemble(sampler: FbmSampler, n_paths: int, seed: int, label: str) -> Ensemble:
    """n_paths fBM paths with per-path keyed streams (parallel-safe)."""
    z = _rng.path_normals(seed, label, n_paths, (sampler.grid.n_steps, sampler.dim))
    vals = np.zeros((n_paths, sampler.grid.n_nodes, sampler.dim))
    vals[:, 1:, :] = np.einsum("ij,mjd->mid", sampler.cov_factor, z)
    return Ensemble(sampler.grid, vals)


# ---------------------------------------------------------------------------
# Riemann-Liouville operators (product-rectangle quadrature)

_weights_cache: dict = {}


def _frac_weights(n_nodes: int, alpha: float, dt: float) -> np.ndarray:
    """Lower-triangular weights W with (I^alpha f)(t_i) = sum_j W[i, j] f(t_j).

    f is taken piecewise constant at the left node of each cell and the
    singular kernel (t_i - y)^{alpha-1} is integrated exactly per cell, so
    the rule is exact on constants.
    """
    key = (n_nodes, round(alpha, 12), round(dt, 15))
    if key not in _weights_cache:
        t = np.arange(n_nodes) * dt
        lag = np.maximum(t[:, None] - t[None, :], 0.0) ** alpha
        w = np.zeros((n_nodes, n_nodes))
        w[:, :-1] = lag[:, :-1] - lag[:, 1:]
        w /= _gamma(alpha + 1.0)
        w[np.triu_indices(n_nodes)] = 0.0
        _weights_cache[key] = w
    return _weights_cache[key]


def frac_integral(samples: np.ndarray, alpha: float, dt: float) -> np.ndarray:
    """Left fractional integral I^alpha of grid samples (last axis = nodes)."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    samples = np.asarray(samples, float)
    w = _frac_weights(samples.shape[-1], alpha, dt)
    return samples @ w.T


def frac_derivative(samples: np.ndarray, alpha: float, dt: float) -> np.ndarray:
    """Left fractional derivative D^alpha = d/dx of I^{1-alpha}.

    Centered differences in the interior, one-sided at the endpoints;
    requires f(0) = 0, otherwise the endpoint singularity corrupts the
    convolution quadrature.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    samples = np.asarray(samples, float)
    scale = 1.0 + float(np.max(np.abs(samples)))
    if np.any(np.abs(samples[..., 0]) > 1e-9 * scale):
        raise ValueError("fractional derivative requires f(0) = 0")
    smooth = frac_integral(samples, 1.0 - alpha, dt)
    return np.gradient(smooth, dt, axis=-1)


def kh_inverse(h: np.ndarray, hurst: float, dt: float) -> np.ndarray:
    """Inverse Volterra operator K^{-1} applied to one coordinate of h.

    h holds node values with h(0) = 0 (last axis = nodes); h' is the same
    finite-difference stencil as np.gradient, so the H = 1/2 branch returns
    exactly that derivative.
    """
    if not (0.0 < hurst < 1.0):
        raise ValueError(f"Hurst index must lie in (0, 1), got {hurst}")
    h = np.asarray(h, float)
    n_steps = h.shape[-1] - 1
    if n_steps < _MIN_KH_STEPS:
        raise ResolutionError(f"kh_inverse needs at least {_MIN_KH_STEPS} steps, got {n_steps}")
    hprime = np.gradient(h, dt, axis=-1)
    if hurst == 0.5:
        return hprime
    t = np.arange(n_steps + 1) * dt
    if hurst < 0.5:
        w = np.zeros_like(hprime)
        w[..., 1:] = t[1:] ** (0.5 - hurst) * hprime[..., 1:]
        v = frac_integral(w, 0.5 - hurst, dt)
        out = np.zeros_like(v)
        out[..., 1:] = t[1:] ** (hurst - 0.5) * v[..., 1:]
        return out
    # H > 1/2: the weight s^{1/2-H} blows up at 0; the first node uses the
    # cell midpoint (one-sided rule) to keep the quadrature finite.
    w = np.empty_like(hprime)
    w[..., 1:] = t[1:] ** (0.5 - hurst) * hprime[..., 1:]
    w[..., 0] = (0.5 * dt) ** (0.5 - hurst) * hprime[..., 0]
    smooth = frac_integral(w, 1.5 - hurst, dt)
    deriv = np.gradient(smooth, dt, axis=-1)
    out = np.zeros_like(deriv)
    out[..., 1:] = t[1:] ** (hurst - 0.5) * deriv[..., 1:]
    return out


def fbm_path_entropy(u: np.ndarray, hurst: float, grid: TimeGrid,
                     up_to: float, weights: np.ndarray | None = None) -> EntropyReport:
    """Girsanov entropy of a drift shift u under an fBM driver.

    u holds per-path node values (M, n_nodes, d).  Per path: form the
    left-Riemann integral U of u, apply K^{-1} per coordinate and return
    H(t) = 1/2 <ensemble, int_0^t |K^{-1} U|^2 ds> with its standard error.
    """
    u = np.asarray(u, float)
    if u.ndim == 2:
        u = u[:, :, None]
    m, n_nodes, d = u.shape
    if n_nodes != grid.n_nodes:
        raise ValueError("u must hold one value per grid node")
    kk = grid.node_of(up_to)
    if kk == 0:
        raise ValueError("up_to must be at least one step")
    dt = grid.dt
    big_u = np.zeros_like(u)
    big_u[:, 1:, :] = np.cumsum(u[:, :-1, :] * dt, axis=1)
    sq = np.zeros((m, n_nodes))
    for c in range(d):
        v = kh_inverse(big_u[:, :, c], hurst, dt)
        sq += v**2
    per_path = np.zeros((m, kk + 1))
    per_path[:, 1:] = 0.5 * np.cumsum(sq[:, :kk] * dt, axis=1)
    w = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, float)
    values = w @ per_path
    spread = per_path - values[None, :]
    stderr = np.sqrt(np.einsum("m,mk->k", w**2, spread**2))
    sub = TimeGrid(kk * dt, kk) if kk < grid.n_steps else grid
    return EntropyReport(sub, values, stderr)
