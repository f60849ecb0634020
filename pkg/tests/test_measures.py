import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discrete_laws import atom_marginal, discrete_kl, discrete_tv, random_law_pair
from mvlab.drifts import ConstantDrift, Kernel, StateDrift, ZeroDrift
from mvlab.errors import DivergentWeightError, UnsupportedSizeError
from mvlab.measures import (
    HistogramPartition,
    exp_moment_R,
    girsanov_entropy,
    tv_distance,
    wasserstein1,
    weighted_pinsker_bound,
)
from mvlab.paths import Ensemble, Marginal, TimeGrid


def cloud(points, weights=None):
    points = np.asarray(points, float)
    if points.ndim == 1:
        points = points[:, None]
    if weights is None:
        weights = np.full(len(points), 1.0 / len(points))
    return Marginal(points, np.asarray(weights, float))


class TestTvDistance:
    def test_identical_is_zero(self):
        m = cloud([0.1, 0.5, 0.9])
        assert tv_distance(m, m) == 0.0

    def test_disjoint_supports(self):
        part = HistogramPartition.regular([-1.0], [1.0], bins=2)
        assert tv_distance(cloud([-0.5, -0.6]), cloud([0.5, 0.7]), part) == 1.0

    def test_two_point_hand_value(self):
        part = HistogramPartition.regular([0.0], [1.0], bins=2)
        mu = cloud([0.2, 0.8], [0.3, 0.7])
        nu = cloud([0.2, 0.8], [0.7, 0.3])
        assert tv_distance(mu, nu, part) == pytest.approx(0.4)

    def test_symmetric_and_triangle(self):
        part = HistogramPartition.regular([-3.0], [3.0], bins=16)
        rng = np.random.default_rng(0)
        a, b, c = (cloud(rng.standard_normal(40)) for _ in range(3))
        dab = tv_distance(a, b, part)
        assert dab == tv_distance(b, a, part)
        assert 0.0 <= dab <= 1.0
        assert dab <= tv_distance(a, c, part) + tv_distance(c, b, part) + 1e-12


class TestWasserstein1:
    def test_point_masses(self):
        assert wasserstein1(cloud([1.5]), cloud([-2.0])) == pytest.approx(3.5)

    def test_identical_samples(self):
        m = cloud([0.0, 1.0, 2.0])
        assert wasserstein1(m, m) == 0.0

    def test_sorted_coupling_hand_value(self):
        assert wasserstein1(cloud([0.0, 1.0]), cloud([0.0, 2.0])) == pytest.approx(0.5)

    def test_exact_assignment_d2(self):
        mu = cloud(np.array([[0.0, 0.0], [1.0, 0.0]]))
        nu = cloud(np.array([[0.0, 1.0], [1.0, 1.0]]))
        assert wasserstein1(mu, nu) == pytest.approx(1.0)

    def test_size_guard(self):
        rng = np.random.default_rng(1)
        big = cloud(rng.standard_normal((600, 2)))
        with pytest.raises(UnsupportedSizeError):
            wasserstein1(big, big)

    @given(seed=st.integers(0, 200))
    @settings(max_examples=25, deadline=None)
    def test_metric_axioms_small(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (cloud(rng.standard_normal((6, 2))) for _ in range(3))
        dab = wasserstein1(a, b)
        assert dab == pytest.approx(wasserstein1(b, a), rel=1e-9)
        assert wasserstein1(a, a) == pytest.approx(0.0, abs=1e-12)
        assert dab <= wasserstein1(a, c) + wasserstein1(c, b) + 1e-9


class TestGirsanovEntropy:
    def bm_ensemble(self, m, n, seed=0):
        rng = np.random.default_rng(seed)
        grid = TimeGrid(1.0, n)
        dw = math.sqrt(grid.dt) * rng.standard_normal((m, n, 1))
        vals = np.zeros((m, n + 1, 1))
        vals[:, 1:, :] = np.cumsum(dw, axis=1)
        return Ensemble(grid, vals)

    def test_equal_drifts_zero(self):
        e = self.bm_ensemble(50, 16)
        rep = girsanov_entropy(ConstantDrift([2.0]), ConstantDrift([2.0]), e, 1.0)
        assert np.all(rep.values == 0.0)

    def test_constant_shift_exact(self):
        e = self.bm_ensemble(10, 8)
        c = 1.7
        rep = girsanov_entropy(ConstantDrift([c]), ZeroDrift(1), e, 1.0)
        assert rep.final == pytest.approx(c * c / 2)
        assert np.all(rep.stderr < 1e-14)

    def test_state_drift_bm_second_moment(self):
        # b1 = x_t vs b2 = 0 along BM: H(1) = 1/2 int_0^1 s ds = 1/4
        e = self.bm_ensemble(4000, 64, seed=3)
        rep = girsanov_entropy(StateDrift(lambda t, x: x, 1), ZeroDrift(1), e, 1.0)
        assert abs(rep.final - 0.25) < 3 * rep.final_stderr + 0.25 * 64**-1

    def test_nonnegative_nondecreasing(self):
        e = self.bm_ensemble(100, 32, seed=5)
        rep = girsanov_entropy(StateDrift(lambda t, x: np.sin(x), 1), ZeroDrift(1), e, 1.0)
        assert np.all(rep.values >= 0)
        assert np.all(np.diff(rep.values) >= -1e-15)

    def test_csv_schema(self):
        e = self.bm_ensemble(10, 4)
        rep = girsanov_entropy(ConstantDrift([1.0]), ZeroDrift(1), e, 1.0)
        buf = io.StringIO()
        rep.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "t,H,stderr"
        assert len(lines) == 6


class TestWeightedPinskerBound:
    def test_zero_function_gives_2h(self):
        nu = cloud([0.0, 1.0])
        assert weighted_pinsker_bound(lambda p: np.zeros(len(p)), nu, 0.7) == pytest.approx(1.4)

    def test_zero_entropy_gives_zero(self):
        nu = cloud([0.3, 0.4])
        assert weighted_pinsker_bound(lambda p: p[:, 0], nu, 0.0) == 0.0

    def test_gaussian_moment_factor(self):
        # f(x) = x sqrt(0.5) under N(0, 0.5): E e^{f^2} = (1 - 0.5)^{-1/2} = sqrt 2
        rng = np.random.default_rng(12)
        nu = cloud(math.sqrt(0.5) * rng.standard_normal(200_000))
        bound = weighted_pinsker_bound(lambda p: math.sqrt(0.5) * p[:, 0], nu, 1.0)
        assert bound == pytest.approx(2 * (1 + 0.5 * math.log(2.0)), rel=0.01)

    def test_overflow_raises(self):
        nu = cloud([40.0])
        with pytest.raises(DivergentWeightError):
            weighted_pinsker_bound(lambda p: p[:, 0], nu, 1.0)

    @given(seed=st.integers(0, 500), n_atoms=st.integers(2, 3))
    @settings(max_examples=60, deadline=None)
    def test_weighted_pinsker_inequality(self, seed, n_atoms):
        rng = np.random.default_rng(seed)
        p, q = random_law_pair(rng, n_atoms)
        atoms = np.sort(rng.standard_normal(n_atoms))
        fvals = rng.uniform(-1.2, 1.2, n_atoms)
        lhs = (np.dot(p - q, fvals)) ** 2
        nu = atom_marginal(atoms, q)
        f = lambda pts: np.interp(pts[:, 0], atoms, fvals)  # exact on atoms
        rhs = weighted_pinsker_bound(f, nu, discrete_kl(p, q))
        assert lhs <= rhs + 1e-12

    @given(seed=st.integers(0, 500), n_atoms=st.integers(2, 3))
    @settings(max_examples=60, deadline=None)
    def test_pinsker_inequality(self, seed, n_atoms):
        rng = np.random.default_rng(seed)
        p, q = random_law_pair(rng, n_atoms)
        assert discrete_tv(p, q) <= math.sqrt(2 * discrete_kl(p, q)) + 1e-12


class _XKernel(Kernel):
    """b(t, x, y) = x_t: exercises the x-side of the double average."""

    dim = 1

    def pair_values(self, t, x, y):
        return np.repeat(x[:, None, :], y.shape[0], axis=1)


class TestExpMomentR:
    def grid_ensemble(self, samples):
        samples = np.asarray(samples, float)
        grid = TimeGrid(1.0, 2)
        vals = np.repeat(samples[:, None], 3, axis=1)[:, :, None]
        return Ensemble(grid, vals)

    def test_zero_kernel(self):
        from mvlab.drifts import MeanFieldKernel
        mu = self.grid_ensemble([1.0, 2.0])
        kern = MeanFieldKernel(g=lambda t, y: np.zeros_like(y))
        assert exp_moment_R(mu, mu, kern, 0.5) == pytest.approx(0.0)

    def test_constant_kernel(self):
        from mvlab.drifts import MeanFieldKernel
        mu = self.grid_ensemble([1.0, 2.0, 3.0])
        kern = MeanFieldKernel(g=lambda t, y: np.ones_like(y))
        assert exp_moment_R(mu, mu, kern, 0.5) == pytest.approx(0.5)

    def test_gaussian_x_kernel(self):
        # E e^{0.1 X^2} for X ~ N(0,1) is (1 - 0.2)^{-1/2}
        rng = np.random.default_rng(21)
        mu = self.grid_ensemble(rng.standard_normal(120_000))
        nu = self.grid_ensemble([0.0, 1.0])
        val = exp_moment_R(mu, nu, _XKernel(), 0.1)
        assert val == pytest.approx(-0.5 * math.log(0.8), rel=0.02)

    def test_overflow_returns_inf(self):
        mu = self.grid_ensemble([50.0])
        assert exp_moment_R(mu, mu, _XKernel(), 1.0) == math.inf
