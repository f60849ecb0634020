import math

import numpy as np
import pytest

from mvlab.verify import (
    box_indicator,
    constant_function,
    khasminskii_check,
    krylov_check,
    power_indicator,
)


class TestLpLqFunctions:
    def test_power_norm_value(self):
        # ||f||_p = (2/(1-ap))^{1/p}, times T^{1/q}
        f = power_indicator(0.4, p=2.0, q=8.0, t_end=1.0)
        assert f.norm == pytest.approx(math.sqrt(10.0))
        assert f.admissible
        assert f.scaling_exponent == pytest.approx(7 / 8 - 1 / 4)

    def test_power_rejects_non_integrable(self):
        with pytest.raises(ValueError):
            power_indicator(0.6, p=2.0, q=8.0, t_end=1.0)

    def test_box_bounded_by_one(self):
        f = box_indicator(2.0, 8.0, 1.0)
        vals = f.fn(0.5, np.linspace(-3, 3, 101)[:, None])
        assert vals.max() <= 1.0
        assert vals.min() >= 0.0

    def test_inadmissible_pair_flag(self):
        f = box_indicator(p=1.5, q=2.0, t_end=1.0)
        assert not f.admissible


class TestKrylov:
    def test_zero_function(self):
        f = constant_function(0.0, 2.0, 8.0)
        rep = krylov_check(f, [0.25, 0.5, 1.0], n_paths=200, n_steps=64)
        assert all(r.estimate == 0.0 for r in rep.rows)

    def test_bounded_function_under_t(self):
        # |f| <= 1 implies lhs <= t
        f = box_indicator(2.0, 8.0, 1.0)
        rep = krylov_check(f, [0.25, 0.5, 1.0], n_paths=2000, n_steps=128, seed=1)
        for r in rep.rows:
            assert r.estimate <= r.t + 1e-12

    def test_monotone_in_t(self):
        f = power_indicator(0.4, 2.0, 8.0, 1.0)
        rep = krylov_check(f, [0.2, 0.4, 0.6, 0.8, 1.0], n_paths=3000, n_steps=128, seed=2)
        ests = [r.estimate for r in rep.rows]
        assert all(b >= a for a, b in zip(ests, ests[1:]))

    def test_singular_scaling_exponent(self):
        # E|W_s|^{-0.8} 1 ~ s^{-0.4}: lhs(t) ~ t^{0.6}
        f = power_indicator(0.4, 2.0, 8.0, 1.0)
        rep = krylov_check(f, [0.125, 0.25, 0.5, 1.0], n_paths=30000,
                           n_steps=256, seed=3)
        assert 0.5 <= rep.fitted_exponent <= 0.7
        assert rep.all_flags_pass
        assert rep.clamp_total > 0
        assert rep.clamp_hits / rep.clamp_total < 1e-3

    def test_constant_start_independence(self):
        # f = c: lhs = c^2 t exactly, for every start point
        f = constant_function(1.5, 2.0, 8.0)
        for x0 in (0.0, 5.0):
            rep = krylov_check(f, [0.5, 1.0], n_paths=50, n_steps=64, x0=x0)
            for r in rep.rows:
                assert r.estimate == pytest.approx(1.5**2 * r.t, rel=1e-12)

    def test_inadmissible_rejected(self):
        f = box_indicator(p=1.5, q=2.0, t_end=1.0)
        with pytest.raises(ValueError):
            krylov_check(f, [0.5, 1.0], 100, 32)


class TestKhasminskii:
    def test_zero_function_gives_one(self):
        f = constant_function(0.0, 2.0, 8.0)
        rep = khasminskii_check(f, lam=0.5, n_paths=100, n_steps=32, t_end=1.0)
        assert rep.estimate == 1.0
        assert not rep.diverged

    def test_bounded_envelope(self):
        # |f| <= 1: estimate <= e^{lam T}
        f = box_indicator(2.0, 8.0, 1.0)
        rep = khasminskii_check(f, lam=0.3, n_paths=2000, n_steps=64, t_end=1.0, seed=4)
        assert rep.estimate <= math.exp(0.3) + 1e-12
        assert rep.estimate >= 1.0

    def test_jensen_lower_bound(self):
        f = power_indicator(0.4, 2.0, 8.0, 1.0)
        rep = khasminskii_check(f, lam=0.05, n_paths=4000, n_steps=128, t_end=1.0, seed=5)
        assert rep.estimate >= 1.0

    def test_singular_stable_under_doubling(self):
        f = power_indicator(0.4, 2.0, 8.0, 1.0)
        rep = khasminskii_check(f, lam=0.1, n_paths=20000, n_steps=128, t_end=1.0, seed=6)
        assert not rep.diverged
        assert rep.stability < 0.1

    def test_divergence_flag(self):
        f = constant_function(30.0, 2.0, 8.0)
        rep = khasminskii_check(f, lam=1.0, n_paths=50, n_steps=16, t_end=1.0)
        assert rep.diverged
        assert rep.estimate == math.inf
