"""Drift registry: base drifts b0, interaction kernels b(t, x, y), truncation,
and frozen-measure drifts.

A kernel exposes two evaluation routes that agree exactly:

* ``pair_values`` for explicit pair blocks (particle systems, exponential
  moments), and
* ``mean_against`` for the weighted measure average.  Kernels whose average
  admits a closed form (mean-field g(y) kernels, linear attraction, the
  sin difference via the angle identity) override the generic chunked
  broadcast; the override is algebraic, not an approximation.

Frozen drifts close over an ensemble and cache per-node measure statistics,
so Picard sweeps do not recompute reductions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import SingularDriftError
from .paths import Ensemble, Marginal

__all__ = [
    "Drift",
    "ZeroDrift",
    "ConstantDrift",
    "StateDrift",
    "Kernel",
    "MeanFieldKernel",
    "IdentityKernel",
    "OtherFunctionKernel",
    "LinearAttractionKernel",
    "SinDiffKernel",
    "ArctanDiffKernel",
    "SingularPowerKernel",
    "SupGrowthKernel",
    "TruncatedKernel",
    "ClampCounter",
    "DriftSpec",
    "BoundedKernel",
    "LinearGrowthPath",
    "SublinearState",
    "SingularKernel",
    "Mixed",
    "NonlinearTV",
    "FrozenDrift",
    "eval_interaction",
    "truncate",
    "freeze",
]

_CHUNK = 1 << 22  # max scalars per pair block


# ---------------------------------------------------------------------------
# base drifts b0(t, x)

class Drift:
    """Batch-evaluable drift: eval_batch(t, k, values) -> (M, d).

    ``values`` is the ensemble block (M, n_nodes, d); implementations must
    read nodes <= k only (non-anticipativity).
    """

    dim: int

    def eval_batch(self, t: float, k: int, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroDrift(Drift):
    dim: int = 1

    def eval_batch(self, t, k, values):
        return np.zeros((values.shape[0], self.dim))


@dataclass(frozen=True)
class ConstantDrift(Drift):
    vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vector", np.atleast_1d(np.asarray(self.vector, float)))

    @property
    def dim(self):
        return self.vector.shape[0]

    def eval_batch(self, t, k, values):
        return np.broadcast_to(self.vector, (values.shape[0], self.dim)).copy()


@dataclass(frozen=True)
class StateDrift(Drift):
    """b0(t, x_t) given as a vectorized state map fn(t, states (M,d)) -> (M,d)."""

    fn: object
    dim: int = 1

    def eval_batch(self, t, k, values):
        return np.asarray(self.fn(t, values[:, k, :]), float)


# ---------------------------------------------------------------------------
# interaction kernels b(t, x, y)

class Kernel:
    """Pairwise interaction; state-dependent unless path_dependent is True."""

    dim: int = 1
    path_dependent: bool = False

    def pair_values(self, t, x, y):
        """Kernel on the full pair block.

        State kernels get x (Mx, d), y (My, d) and return (Mx, My, d);
        path kernels get prefix blocks (Mx, k+1, d), (My, k+1, d).
        """
        raise NotImplementedError

    def mean_against(self, t, x, y, weights):
        """Weighted average over y of b(t, x, y): returns (Mx, d)."""
        mx = x.shape[0]
        out = np.empty((mx, self.dim))
        step = max(1, _CHUNK // max(1, y.shape[0] * self.dim))
        for lo in range(0, mx, step):
            block = self.pair_values(t, x[lo : lo + step], y)
            out[lo : lo + step] = np.einsum("xyd,y->xd", block, weights)
        return out

    def bound(self):
        """Sup-norm bound if known, else None."""
        return None


@dataclass(frozen=True)
class MeanFieldKernel(Kernel):
    """b(t, x, y) = g(t, y_t): the average is a single weighted mean of g."""

    g: object
    dim: int = 1
    sup: float | None = None

    def pair_values(self, t, x, y):
        gy = np.asarray(self.g(t, y), float)
        return np.broadcast_to(gy[None, :, :], (x.shape[0],) + gy.shape).copy()

    def mean_against(self, t, x, y, weights):
        gy = np.asarray(self.g(t, y), float)
        m = weights @ gy
        return np.broadcast_to(m, (x.shape[0], self.dim)).copy()

    def bound(self):
        return self.sup


def IdentityKernel(dim: int = 1) -> MeanFieldKernel:
    """b(t, x, y) = y_t (mean-field mean)."""
    return MeanFieldKernel(g=lambda t, y: y, dim=dim)


def OtherFunctionKernel(fn, dim: int = 1, sup: float | None = None) -> MeanFieldKernel:
    """b(t, x, y) = fn(y_t) applied componentwise, e.g. tanh."""
    return MeanFieldKernel(g=lambda t, y: fn(y), dim=dim, sup=sup)


@dataclass(frozen=True)
class LinearAttractionKernel(Kernel):
    """b(t, x, y) = -(x_t - y_t); the average is -(x - mean(y))."""

    dim: int = 1

    def pair_values(self, t, x, y):
        return -(x[:, None, :] - y[None, :, :])

    def mean_against(self, t, x, y, weights):
        return -(x - weights @ y)


@dataclass(frozen=True)
class SinDiffKernel(Kernel):
    """b(t, x, y) = sin(x_t - y_t) componentwise.

    Measure average via sin(x)<cos y> - cos(x)<sin y> (exact identity).
    """

    dim: int = 1

    def pair_values(self, t, x, y):
        return np.sin(x[:, None, :] - y[None, :, :])

    def mean_against(self, t, x, y, weights):
        mc = weights @ np.cos(y)
        ms = weights @ np.sin(y)
        return np.sin(x) * mc - np.cos(x) * ms

    def bound(self):
        return 1.0


@dataclass(frozen=True)
class ArctanDiffKernel(Kernel):
    """b(t, x, y) = arctan(x_t - y_t) componentwise (saturated attraction)."""

    dim: int = 1

    def pair_values(self, t, x, y):
        return np.arctan(x[:, None, :] - y[None, :, :])

    def bound(self):
        return np.pi / 2


class ClampCounter:
    """Counts clamped singular-kernel evaluations against the total."""

    def __init__(self):
        self.hits = 0
        self.total = 0

    @property
    def fraction(self):
        return self.hits / self.total if self.total else 0.0


@dataclass(frozen=True)
class SingularPowerKernel(Kernel):
    """Krylov-class kernel |x_t - y_t|^(-a) 1_{|x_t - y_t| <= radius}, d = 1.

    Evaluations inside clamp_radius are clamped to the kernel value at
    clamp_radius and counted; collisions are measure-zero in law but can
    occur on floating-point grids.
    """

    a: float
    radius: float = 1.0
    clamp_radius: float = 1e-6
    counter: ClampCounter = field(default_factory=ClampCounter)
    dim: int = 1

    def __post_init__(self):
        if self.dim != 1:
            raise ValueError("singular power kernel is implemented for d = 1")
        if not (0 < self.a < 1):
            raise ValueError(f"exponent a must lie in (0, 1), got {self.a}")

    def pair_values(self, t, x, y):
        z = np.abs(x[:, None, 0] - y[None, :, 0])
        clamped = z < self.clamp_radius
        self.counter.hits += int(clamped.sum())
        self.counter.total += z.size
        z = np.maximum(z, self.clamp_radius)
        out = np.zeros_like(z)
        inside = z <= self.radius
        out[inside] = z[inside] ** (-self.a)
        return out[:, :, None]

    def bound(self):
        return self.clamp_radius ** (-self.a)


@dataclass(frozen=True)
class SupGrowthKernel(Kernel):
    """Path-dependent probe kernel c0 + c1*||x||_t + c2*||y||_t (componentwise).

    Satisfies the linear-growth bound with K = max(c0, c1, c2) scaling; the
    average needs only the running sup of the frozen paths.
    """

    c0: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    dim: int = 1
    path_dependent: bool = True

    def _sups(self, prefix):
        return np.max(np.linalg.norm(prefix, axis=2), axis=1)

    def pair_values(self, t, x, y):
        sx = self._sups(x)
        sy = self._sups(y)
        vals = self.c0 + self.c1 * sx[:, None] + self.c2 * sy[None, :]
        return np.repeat(vals[:, :, None], self.dim, axis=2)

    def mean_against(self, t, x, y, weights):
        sx = self._sups(x)
        msy = weights @ self._sups(y)
        vals = self.c0 + self.c1 * sx + self.c2 * msy
        return np.repeat(vals[:, None], self.dim, axis=1)

    def growth_constant(self):
        return max(self.c0, self.c1, self.c2)


@dataclass(frozen=True)
class TruncatedKernel(Kernel):
    """Componentwise clip of another kernel to [-level, level]."""

    inner: Kernel
    level: float

    @property
    def dim(self):
        return self.inner.dim

    @property
    def path_dependent(self):
        return self.inner.path_dependent

    def pair_values(self, t, x, y):
        return np.clip(self.inner.pair_values(t, x, y), -self.level, self.level)

    def mean_against(self, t, x, y, weights):
        inner_bound = self.inner.bound()
        if inner_bound is not None and inner_bound <= self.level:
            return self.inner.mean_against(t, x, y, weights)
        if isinstance(self.inner, MeanFieldKernel):
            gy = np.clip(np.asarray(self.inner.g(t, y), float), -self.level, self.level)
            return np.broadcast_to(weights @ gy, (x.shape[0], self.dim)).copy()
        return Kernel.mean_against(self, t, x, y, weights)

    def bound(self):
        inner_bound = self.inner.bound()
        if inner_bound is not None:
            return min(inner_bound, self.level)
        return self.level


# ---------------------------------------------------------------------------
# drift specifications

@dataclass(frozen=True)
class DriftSpec:
    """Tagged drift description; subclasses carry the declared constants."""

    dim: int = 1

    def b0(self) -> Drift:
        return ZeroDrift(self.dim)

    def kernels(self) -> tuple[Kernel, ...]:
        return ()

    def nonlinear(self):
        """Optional B(t, x_states, marginal) -> (M, d) for NonlinearTV."""
        return None

    def interaction_bound(self):
        bounds = [k.bound() for k in self.kernels()]
        if not bounds or any(b is None for b in bounds):
            return None
        return sum(bounds)

    def clamp_counters(self) -> tuple[ClampCounter, ...]:
        out = []
        for k in self.kernels():
            while isinstance(k, TruncatedKernel):
                k = k.inner
            if isinstance(k, SingularPowerKernel):
                out.append(k.counter)
        return tuple(out)


@dataclass(frozen=True)
class BoundedKernel(DriftSpec):
    kernel: Kernel = None  # type: ignore[assignment]
    sup: float = 1.0
    drift0: Drift | None = None

    def b0(self):
        return self.drift0 if self.drift0 is not None else ZeroDrift(self.dim)

    def kernels(self):
        return (self.kernel,)


@dataclass(frozen=True)
class LinearGrowthPath(DriftSpec):
    kernel: Kernel = None  # type: ignore[assignment]
    growth_k: float = 1.0
    drift0: Drift | None = None

    def b0(self):
        return self.drift0 if self.drift0 is not None else ZeroDrift(self.dim)

    def kernels(self):
        return (self.kernel,)


@dataclass(frozen=True)
class SublinearState(DriftSpec):
    """Drift-only spec |b0| <= K (1 + |x|^beta), beta < 1; no interaction."""

    drift0: Drift = None  # type: ignore[assignment]
    growth_k: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        if not (0 <= self.beta < 1):
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")

    def b0(self):
        return self.drift0


@dataclass(frozen=True)
class SingularKernel(DriftSpec):
    kernel: SingularPowerKernel = None  # type: ignore[assignment]
    p: float = 2.0
    q: float = 8.0
    drift0: Drift | None = None

    def __post_init__(self):
        if self.dim / self.p + 2 / self.q >= 1:
            raise ValueError(
                f"(p, q) = ({self.p}, {self.q}) inadmissible: d/p + 2/q = "
                f"{self.dim / self.p + 2 / self.q} >= 1"
            )

    def b0(self):
        return self.drift0 if self.drift0 is not None else ZeroDrift(self.dim)

    def kernels(self):
        return (self.kernel,)


@dataclass(frozen=True)
class Mixed(DriftSpec):
    parts: tuple[DriftSpec, ...] = ()

    def b0(self):
        drifts = [p.b0() for p in self.parts]

        class _Sum(Drift):
            dim = self.dim

            def eval_batch(_self, t, k, values):
                out = np.zeros((values.shape[0], self.dim))
                for d0 in drifts:
                    out += d0.eval_batch(t, k, values)
                return out

        return _Sum()

    def kernels(self):
        return tuple(k for p in self.parts for k in p.kernels())


@dataclass(frozen=True)
class NonlinearTV(DriftSpec):
    """Drift B(t, x_t, mu_t) given directly, Lipschitz in mu in TV."""

    B: object = None
    lipschitz: float = 1.0

    def nonlinear(self):
        return self.B

    def interaction_bound(self):
        return self.lipschitz


# ---------------------------------------------------------------------------
# operations

class FrozenDrift(Drift):
    """The callable b_mu(t, x) = b0(t, x) + <mu_t, b(t, x, .)> for fixed mu.

    Pure closure over the frozen ensemble; repeated calls with identical
    inputs return identical values.

    The interaction averages over the full frozen ensemble by default; an
    optional fixed-size subsample (drawn once from its own keyed stream)
    trades bias for speed and stays off in all acceptance runs.
    """

    def __init__(self, spec: DriftSpec, measure: Ensemble,
                 subsample: int | None = None, subsample_seed: int = 0):
        if spec.dim != measure.dim:
            raise ValueError(f"drift dim {spec.dim} != measure dim {measure.dim}")
        if subsample is not None:
            if not (0 < subsample <= measure.n_paths):
                raise ValueError(f"subsample size {subsample} out of range")
            rng = _rng.stream(subsample_seed, "frozen-drift-subsample")
            idx = rng.choice(measure.n_paths, size=subsample, replace=False,
                             p=measure.weights)
            measure = Ensemble(measure.grid, measure.values[np.sort(idx)])
        self.spec = spec
        self.measure = measure
        self.dim = spec.dim
        self._b0 = spec.b0()
        self._kernels = spec.kernels()
        self._nonlinear = spec.nonlinear()

    def _frozen_node(self, t: float) -> int:
        k = self.measure.grid.node_of(t)
        if abs(k * self.measure.grid.dt - t) > 1e-9 * max(1.0, self.measure.grid.t_end):
            raise ValueError(f"time {t} is not a node of the frozen measure grid")
        return k

    def eval_batch(self, t, k, values):
        out = self._b0.eval_batch(t, k, values)
        kf = self._frozen_node(t)
        y_states = self.measure.values[:, kf, :]
        w = self.measure.weights
        for kern in self._kernels:
            if kern.path_dependent:
                out = out + kern.mean_against(
                    t, values[:, : k + 1, :], self.measure.values[:, : kf + 1, :], w
                )
            else:
                out = out + kern.mean_against(t, values[:, k, :], y_states, w)
        if self._nonlinear is not None:
            out = out + np.asarray(
                self._nonlinear(t, values[:, k, :], Marginal(y_states, w)), float
            )
        return out


def eval_interaction(spec: DriftSpec, t: float, x: np.ndarray, mu: Ensemble) -> np.ndarray:
    """Interaction term <mu_t, b(t, x, .)> for a single path prefix x.

    x is the prefix values (k+1, d) of the probe path up to time t; state
    kernels read only its last row.  Returns a d-vector.
    """
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[:, None]
    kf = mu.grid.node_of(t)
    y_states = mu.values[:, kf, :]
    w = mu.weights
    out = np.zeros(spec.dim)
    for kern in spec.kernels():
        if kern.path_dependent:
            out += kern.mean_against(t, x[None, :, :], mu.values[:, : kf + 1, :], w)[0]
        else:
            out += kern.mean_against(t, x[-1][None, :], y_states, w)[0]
    nl = spec.nonlinear()
    if nl is not None:
        out += np.asarray(nl(t, x[-1][None, :], Marginal(y_states, w)), float)[0]
    if not np.all(np.isfinite(out)):
        raise SingularDriftError(f"interaction not finite at t={t}", node=kf)
    return out


def truncate(spec: DriftSpec, level: float) -> DriftSpec:
    """Clip every interaction output coordinate to [-level, level]; b0 is kept.

    level = 0 is allowed and kills the interaction outright (the bottom rung
    of a truncation ladder)."""
    if level < 0:
        raise ValueError(f"truncation level must be nonnegative, got {level}")
    if isinstance(spec, BoundedKernel):
        return BoundedKernel(spec.dim, TruncatedKernel(spec.kernel, level),
                             min(spec.sup, level), spec.drift0)
    if isinstance(spec, LinearGrowthPath):
        return LinearGrowthPath(spec.dim, TruncatedKernel(spec.kernel, level),
                                spec.growth_k, spec.drift0)
    if isinstance(spec, SingularKernel):
        return BoundedKernel(spec.dim, TruncatedKernel(spec.kernel, level), level, spec.drift0)
    if isinstance(spec, Mixed):
        return Mixed(spec.dim, tuple(truncate(p, level) for p in spec.parts))
    if isinstance(spec, SublinearState):
        return spec  # no interaction to clip
    if isinstance(spec, NonlinearTV):
        B = spec.B

        def clipped(t, x, m):
            return np.clip(np.asarray(B(t, x, m), float), -level, level)

        return NonlinearTV(spec.dim, clipped, spec.lipschitz)
    raise TypeError(f"cannot truncate {type(spec).__name__}")


def freeze(spec: DriftSpec, mu: Ensemble, subsample: int | None = None,
           subsample_seed: int = 0) -> FrozenDrift:
    """Freeze the measure argument: returns the drift of the fixed-measure SDE."""
    return FrozenDrift(spec, mu, subsample, subsample_seed)
