import math

import numpy as np
import pytest

from mvlab.chaos import (
    ChaosRun,
    SdeKernelOps,
    chaos_sweep_sde,
    chaos_sweep_spde,
    drift_gap,
    rate_fit,
    system_entropy,
)
from mvlab.drifts import (
    BoundedKernel,
    IdentityKernel,
    Kernel,
    MeanFieldKernel,
    OtherFunctionKernel,
)
from mvlab.paths import TimeGrid
from mvlab.sde import GaussianLaw, NoiseSpec, PointMass, SolverConfig, particle_system, picard_solve
from mvlab.spde import FieldKernelOfOther, GaussianModes, SpdeConfig


def config(m=64, n=16, seed=0, initial=None):
    return SolverConfig(TimeGrid(1.0, n), m, 1,
                        initial or GaussianLaw(0.0, 1.0), seed, NoiseSpec())


def make_systems(spec, n_particles, reps, n=8, seed_base=0, initial=None):
    out = []
    for r in range(reps):
        cfg = config(m=max(n_particles, 2), n=n, seed=seed_base, initial=initial)
        out.append(particle_system(spec, n_particles, cfg, label=f"sys{r}"))
    return out


class _XOnly(Kernel):
    """F(x, y) = tanh(x): ignores the second particle entirely."""

    dim = 1

    def pair_values(self, t, x, y):
        return np.repeat(np.tanh(x)[:, None, :], y.shape[0], axis=1)


class TestDriftGap:
    def test_constant_kernel_zero(self):
        spec = BoundedKernel(1, MeanFieldKernel(g=lambda t, y: np.full_like(y, 0.3)), 0.3)
        systems = make_systems(spec, 5, 10)
        mf = picard_solve(spec, config(m=500), tol=1e-6, max_iter=3)
        val, se = drift_gap(systems, mf.ensemble, SdeKernelOps(spec.kernels()[0]), 0.0)
        assert val == pytest.approx(0.0, abs=1e-25)  # exact up to summation-order dust

    def test_iid_variance_identity(self):
        # g(y) = y, mu0 = N(0,1), N = 11: gap(0) = Var(g)/(N-1) = 0.1
        spec = BoundedKernel(1, IdentityKernel(1), math.inf)
        systems = make_systems(spec, 11, 200)
        mf = picard_solve(spec, config(m=20000, n=8), tol=1e-5, max_iter=4)
        val, se = drift_gap(systems, mf.ensemble, SdeKernelOps(spec.kernels()[0]), 0.0)
        assert abs(val - 0.1) < 3 * se

    def test_gap_decreases_with_n(self):
        spec = BoundedKernel(1, OtherFunctionKernel(np.tanh, sup=1.0), 1.0)
        ops = SdeKernelOps(spec.kernels()[0])
        mf = picard_solve(spec, config(m=8000, n=8), tol=1e-5, max_iter=4)
        vals = {}
        for n_particles in (8, 32, 128):
            systems = make_systems(spec, n_particles, 100)
            vals[n_particles], _ = drift_gap(systems, mf.ensemble, ops, 0.0)
        assert vals[8] > vals[32] > vals[128]

    def test_rejects_single_particle(self):
        spec = BoundedKernel(1, IdentityKernel(1), math.inf)
        mf = picard_solve(spec, config(m=200, n=8), tol=1e-4, max_iter=2)
        lonely = make_systems(spec, 1, 1)
        with pytest.raises(ValueError):
            drift_gap(lonely, mf.ensemble, SdeKernelOps(spec.kernels()[0]), 0.0)


class TestSystemEntropy:
    def test_zero_kernel(self):
        spec = BoundedKernel(1, MeanFieldKernel(g=lambda t, y: np.zeros_like(y)), 0.0)
        systems = make_systems(spec, 6, 5)
        mf = picard_solve(spec, config(m=300, n=8), tol=1e-6, max_iter=2)
        val, _ = system_entropy(systems, mf.ensemble, SdeKernelOps(spec.kernels()[0]), 1.0)
        assert val == 0.0

    def test_x_only_kernel_identically_zero(self):
        spec = BoundedKernel(1, _XOnly(), 1.0)
        systems = make_systems(spec, 6, 5)
        mf = picard_solve(spec, config(m=300, n=8), tol=1e-6, max_iter=3)
        val, _ = system_entropy(systems, mf.ensemble, SdeKernelOps(spec.kernels()[0]), 1.0)
        assert val == pytest.approx(0.0, abs=1e-25)

    def test_total_entropy_roughly_constant_in_n(self):
        # H^N ~ (N/(N-1)) * 1/2 int Var(g) ds: doubling N moves it by < 20%
        spec = BoundedKernel(1, OtherFunctionKernel(np.tanh, sup=1.0), 1.0)
        ops = SdeKernelOps(spec.kernels()[0])
        mf = picard_solve(spec, config(m=8000, n=8), tol=1e-5, max_iter=4)
        h = {}
        for n_particles in (32, 64):
            systems = make_systems(spec, n_particles, 400)
            h[n_particles], _ = system_entropy(systems, mf.ensemble, ops, 1.0)
        assert abs(h[64] / h[32] - 1.0) < 0.2


class TestRateFit:
    def test_exact_inverse_n(self):
        ns = [8, 16, 32, 64, 128]
        fit = rate_fit(ns, [3.0 / n for n in ns])
        assert fit.slope == pytest.approx(-1.0, abs=1e-12)

    def test_exact_inverse_n_squared(self):
        ns = [8, 16, 32, 64]
        fit = rate_fit(ns, [5.0 / n**2 for n in ns])
        assert fit.slope == pytest.approx(-2.0, abs=1e-12)

    def test_noisy_synthetic_recovery(self):
        rng = np.random.default_rng(3)
        ns = [8, 16, 32, 64, 128, 256]
        ys = [2.0 / n * (1 + rng.uniform(-0.1, 0.1)) for n in ns]
        fit = rate_fit(ns, ys)
        assert abs(fit.slope + 1.0) < 0.1

    def test_guards(self):
        with pytest.raises(ValueError):
            rate_fit([8, 16, 32], [1, 2, 3])
        with pytest.raises(ValueError):
            rate_fit([8, 16, 32, 64], [1.0, -1.0, 0.5, 0.1])


class TestSweeps:
    def test_sde_sweep_slope_window(self):
        spec = BoundedKernel(1, OtherFunctionKernel(np.tanh, sup=1.0), 1.0)
        run = chaos_sweep_sde(spec, [8, 16, 32, 64], repetitions=60,
                              config=config(m=8, n=8, seed=5),
                              mf_paths=4000, tol=1e-4, max_iter=5)
        fit = run.fits["drift_gap_t0"]
        assert -1.3 < fit.slope < -0.7
        assert -1.3 < run.fits["entropy_per_particle"].slope < -0.7
        scaled = [v * (n - 1) for v, n in zip(run.values("drift_gap_t0"), run.ns)]
        assert max(scaled) / min(scaled) < 1.5

    def test_sde_sweep_threaded_matches_serial(self):
        spec = BoundedKernel(1, OtherFunctionKernel(np.tanh, sup=1.0), 1.0)
        kwargs = dict(ns=[8, 16, 32, 64], repetitions=12,
                      config=config(m=8, n=8, seed=6),
                      mf_paths=1000, tol=1e-4, max_iter=3)
        serial = chaos_sweep_sde(spec, **kwargs, threads=1)
        threaded = chaos_sweep_sde(spec, **kwargs, threads=4)
        for a, b in zip(serial.rows, threaded.rows):
            assert a == b

    def test_spde_sweep_slope_window(self):
        cfg = SpdeConfig(TimeGrid(1.0, 8), n_replicas=8, n_modes=8,
                         initial=GaussianModes(np.full(8, 0.6)), seed=7)
        run = chaos_sweep_spde(FieldKernelOfOther(), [8, 16, 32, 64],
                               repetitions=50, config=cfg, mf_replicas=2000,
                               tol=1e-3, max_iter=5)
        fit = run.fits["drift_gap_t0"]
        assert -1.3 < fit.slope < -0.7
