import numpy as np
import pytest

from mvlab.drifts import (
    ArctanDiffKernel,
    BoundedKernel,
    ConstantDrift,
    IdentityKernel,
    LinearAttractionKernel,
    LinearGrowthPath,
    MeanFieldKernel,
    Mixed,
    NonlinearTV,
    OtherFunctionKernel,
    SingularKernel,
    SingularPowerKernel,
    SinDiffKernel,
    SupGrowthKernel,
    TruncatedKernel,
    eval_interaction,
    freeze,
    truncate,
)
from mvlab.paths import Ensemble, TimeGrid

GRID = TimeGrid(1.0, 4)


def const_ensemble(samples):
    """Paths frozen in time at the given d=1 sample values."""
    samples = np.asarray(samples, float)
    vals = np.repeat(samples[:, None], GRID.n_nodes, axis=1)[:, :, None]
    return Ensemble(GRID, vals)


class TestEvalInteraction:
    def test_mean_field_kernel_is_sample_mean(self):
        mu = const_ensemble([1.0, 2.0, 3.0])
        spec = BoundedKernel(1, IdentityKernel(1), 10.0)
        out = eval_interaction(spec, 0.5, np.array([0.0]), mu)
        assert out == pytest.approx(2.0)

    def test_constant_kernel(self):
        mu = const_ensemble([5.0, -1.0])
        kern = MeanFieldKernel(g=lambda t, y: np.full_like(y, 0.7), sup=0.7)
        spec = BoundedKernel(1, kern, 0.7)
        out = eval_interaction(spec, 0.25, np.array([3.0]), mu)
        assert out == pytest.approx(0.7)

    def test_singular_kernel_hand_value(self):
        # (0.5^-0.4 + 0.25^-0.4 + 0) / 3, third sample outside support
        mu = const_ensemble([0.5, -0.25, 2.0])
        spec = SingularKernel(1, SingularPowerKernel(a=0.4), p=2.0, q=8.0)
        out = eval_interaction(spec, 0.0, np.array([0.0]), mu)
        expect = (0.5**-0.4 + 0.25**-0.4) / 3
        assert out == pytest.approx(expect, rel=1e-12)
        assert expect == pytest.approx(1.0202, abs=2e-4)

    def test_affine_in_weights(self):
        rng = np.random.default_rng(5)
        samples = rng.standard_normal(6)
        vals = np.repeat(samples[:, None], GRID.n_nodes, axis=1)[:, :, None]
        w1 = rng.random(6)
        w1 /= w1.sum()
        w2 = rng.random(6)
        w2 /= w2.sum()
        alpha = 0.3
        kern = SinDiffKernel(1)
        spec = BoundedKernel(1, kern, 1.0)
        x = np.array([0.4])
        outs = []
        for w in (w1, w2, alpha * w1 + (1 - alpha) * w2):
            mu = Ensemble(GRID, vals, weights=w)
            outs.append(eval_interaction(spec, 0.5, x, mu))
        assert outs[2] == pytest.approx(alpha * outs[0] + (1 - alpha) * outs[1], rel=1e-12)


class TestFastPathsAgree:
    """Closed-form measure averages must equal the generic pair average."""

    @pytest.mark.parametrize("kern", [
        IdentityKernel(2),
        OtherFunctionKernel(np.tanh, dim=2, sup=1.0),
        LinearAttractionKernel(2),
        SinDiffKernel(2),
        TruncatedKernel(IdentityKernel(2), 0.8),
        TruncatedKernel(SinDiffKernel(2), 0.4),
    ])
    def test_against_generic(self, kern):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((7, 2))
        y = rng.standard_normal((13, 2))
        w = rng.random(13)
        w /= w.sum()
        fast = kern.mean_against(0.3, x, y, w)
        generic = np.einsum("xyd,y->xd", kern.pair_values(0.3, x, y), w)
        assert np.allclose(fast, generic, atol=1e-12)

    def test_path_kernel_fast_path(self):
        kern = SupGrowthKernel(0.5, 1.0, 2.0, dim=1)
        rng = np.random.default_rng(2)
        xp = rng.standard_normal((4, 3, 1))
        yp = rng.standard_normal((6, 3, 1))
        w = np.full(6, 1 / 6)
        fast = kern.mean_against(0.5, xp, yp, w)
        generic = np.einsum("xyd,y->xd", kern.pair_values(0.5, xp, yp), w)
        assert np.allclose(fast, generic, atol=1e-12)


class TestTruncate:
    def test_clip_above(self):
        kern = MeanFieldKernel(g=lambda t, y: np.full_like(y, 5.0))
        tk = TruncatedKernel(kern, 3.0)
        out = tk.pair_values(0.0, np.zeros((1, 1)), np.zeros((1, 1)))
        assert out[0, 0, 0] == 3.0

    def test_clip_below(self):
        kern = MeanFieldKernel(g=lambda t, y: np.full_like(y, -5.0))
        tk = TruncatedKernel(kern, 3.0)
        assert tk.pair_values(0.0, np.zeros((1, 1)), np.zeros((1, 1)))[0, 0, 0] == -3.0

    def test_componentwise_clip(self):
        kern = MeanFieldKernel(g=lambda t, y: np.tile([5.0, -0.2], (y.shape[0], 1)), dim=2)
        tk = TruncatedKernel(kern, 3.0)
        out = tk.pair_values(0.0, np.zeros((1, 2)), np.zeros((1, 2)))
        assert np.allclose(out[0, 0], [3.0, -0.2])

    def test_noop_below_bound(self):
        spec = BoundedKernel(1, SinDiffKernel(1), 1.0)
        tspec = truncate(spec, 2.0)
        rng = np.random.default_rng(0)
        mu = const_ensemble(rng.standard_normal(5))
        x = np.array([0.3])
        assert eval_interaction(tspec, 0.5, x, mu) == pytest.approx(
            eval_interaction(spec, 0.5, x, mu), rel=1e-14)

    def test_truncated_everywhere_bounded(self):
        spec = truncate(LinearGrowthPath(1, IdentityKernel(1), 1.0), 2.5)
        rng = np.random.default_rng(1)
        mu = const_ensemble(100 * rng.standard_normal(8))
        out = eval_interaction(spec, 0.25, np.array([0.0]), mu)
        assert abs(out[0]) <= 2.5

    def test_negative_level_rejected(self):
        with pytest.raises(ValueError):
            truncate(BoundedKernel(1, SinDiffKernel(1), 1.0), -1.0)


class TestFreeze:
    def test_frozen_mean_kernel(self):
        mu = const_ensemble([1.0, 3.0])  # mean 2 at every node
        drift = freeze(BoundedKernel(1, IdentityKernel(1), 5.0), mu)
        vals = np.zeros((4, GRID.n_nodes, 1))
        out = drift.eval_batch(0.5, 2, vals)
        assert np.allclose(out, 2.0)

    def test_frozen_constant_b0(self):
        mu = const_ensemble([0.0])
        spec = BoundedKernel(1, MeanFieldKernel(g=lambda t, y: np.zeros_like(y)),
                             0.0, drift0=ConstantDrift([1.0]))
        drift = freeze(spec, mu)
        out = drift.eval_batch(0.0, 0, np.zeros((3, GRID.n_nodes, 1)))
        assert np.allclose(out, 1.0)

    def test_freeze_deterministic(self):
        rng = np.random.default_rng(9)
        mu = const_ensemble(rng.standard_normal(10))
        spec = BoundedKernel(1, SinDiffKernel(1), 1.0)
        d1, d2 = freeze(spec, mu), freeze(spec, mu)
        vals = rng.standard_normal((5, GRID.n_nodes, 1))
        assert np.array_equal(d1.eval_batch(0.25, 1, vals), d2.eval_batch(0.25, 1, vals))

    def test_dim_mismatch(self):
        mu = const_ensemble([0.0])
        with pytest.raises(ValueError):
            freeze(BoundedKernel(2, SinDiffKernel(2), 1.0), mu)


class TestGrowthAndTV:
    def test_linear_growth_bound_on_probes(self):
        kern = SupGrowthKernel(1.0, 1.0, 1.0, dim=1)
        spec = LinearGrowthPath(1, kern, growth_k=1.0)
        rng = np.random.default_rng(4)
        vals = rng.standard_normal((6, GRID.n_nodes, 1))
        mu = Ensemble(GRID, vals)
        sups = np.max(np.abs(vals), axis=(1, 2))
        for k in (1, 2, 4):
            x = vals[0, : k + 1]
            out = eval_interaction(spec, k * GRID.dt, x, mu)
            lhs = np.linalg.norm(out)
            bound = 1.0 * (1.0 + np.abs(x).max() + float(np.mean(sups)))
            assert lhs <= bound + 1e-9

    def test_nonlinear_tv_lipschitz(self):
        # B(t, x, mu) = c * P_mu(y > 0); atoms sit in distinct histogram cells
        from mvlab.measures import HistogramPartition, tv_distance
        from mvlab.paths import Marginal

        c = 2.0

        def B(t, x, marg):
            mass = float(marg.weights @ (marg.points[:, 0] > 0))
            return np.full((x.shape[0], 1), c * mass)

        spec = NonlinearTV(1, B, lipschitz=c)
        part = HistogramPartition.regular([-2.0], [2.0], bins=4)
        rng = np.random.default_rng(8)
        atoms = np.array([[-1.5], [-0.5], [0.5], [1.5]])
        for _ in range(25):
            w1 = rng.random(4)
            w1 /= w1.sum()
            w2 = rng.random(4)
            w2 /= w2.sum()
            m1, m2 = Marginal(atoms, w1), Marginal(atoms, w2)
            b1 = spec.B(0.0, np.zeros((1, 1)), m1)[0, 0]
            b2 = spec.B(0.0, np.zeros((1, 1)), m2)[0, 0]
            assert abs(b1 - b2) <= c * tv_distance(m1, m2, part) + 1e-12


class TestKernelExtras:
    def test_arctan_bound(self):
        kern = ArctanDiffKernel(1)
        vals = kern.pair_values(0.0, np.array([[100.0]]), np.array([[-100.0]]))
        assert abs(vals).max() <= np.pi / 2

    def test_singular_clamp_counted(self):
        kern = SingularPowerKernel(a=0.4, clamp_radius=1e-6)
        x = np.array([[0.0]])
        y = np.array([[0.0], [0.5]])
        out = kern.pair_values(0.0, x, y)
        assert kern.counter.hits == 1
        assert kern.counter.total == 2
        assert out[0, 0, 0] == pytest.approx((1e-6) ** -0.4)

    def test_mixed_spec_sums_parts(self):
        mu = const_ensemble([1.0, 3.0])
        spec = Mixed(1, (
            BoundedKernel(1, IdentityKernel(1), 5.0),
            BoundedKernel(1, MeanFieldKernel(g=lambda t, y: np.ones_like(y)), 1.0),
        ))
        out = eval_interaction(spec, 0.5, np.array([0.0]), mu)
        assert out == pytest.approx(3.0)

    def test_inadmissible_singular_pair_rejected(self):
        with pytest.raises(ValueError):
            SingularKernel(1, SingularPowerKernel(a=0.4), p=1.5, q=2.0)


class TestSpecVariants:
    def test_sublinear_state_spec(self):
        from mvlab.drifts import SublinearState, StateDrift, freeze

        b0 = StateDrift(lambda t, x: 0.5 * np.sign(x) * np.sqrt(np.abs(x)), 1)
        spec = SublinearState(1, b0, growth_k=0.5, beta=0.5)
        assert spec.kernels() == ()
        mu = const_ensemble([0.0, 1.0])
        drift = freeze(spec, mu)
        out = drift.eval_batch(0.0, 0, np.full((3, GRID.n_nodes, 1), 4.0))
        assert np.allclose(out, 1.0)  # 0.5 * sqrt(4)
        with pytest.raises(ValueError):
            SublinearState(1, b0, growth_k=1.0, beta=1.0)

    def test_frozen_subsample_approximates_full(self):
        rng = np.random.default_rng(17)
        samples = rng.standard_normal(4000)
        vals = np.repeat(samples[:, None], GRID.n_nodes, axis=1)[:, :, None]
        mu = Ensemble(GRID, vals)
        spec = BoundedKernel(1, SinDiffKernel(1), 1.0)
        x = rng.standard_normal((5, GRID.n_nodes, 1))
        full = freeze(spec, mu).eval_batch(0.5, 2, x)
        sub = freeze(spec, mu, subsample=1000, subsample_seed=3).eval_batch(0.5, 2, x)
        assert np.allclose(full, sub, atol=0.15)
        assert not np.array_equal(full, sub)
        again = freeze(spec, mu, subsample=1000, subsample_seed=3).eval_batch(0.5, 2, x)
        assert np.array_equal(sub, again)  # keyed stream -> deterministic

    def test_subsample_size_guard(self):
        mu = const_ensemble([1.0, 2.0])
        spec = BoundedKernel(1, SinDiffKernel(1), 1.0)
        with pytest.raises(ValueError):
            freeze(spec, mu, subsample=5)
