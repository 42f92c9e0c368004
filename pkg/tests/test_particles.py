from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import small_solve
from nash_lab.mfg import MFGProblem, gaussian_density, picard_mfg
from nash_lab.model import EmpiricalMeasure
from nash_lab.particles import (
    SimConfig,
    chaos_gap,
    gaussian_block,
    simulate,
    simulate_closed_loop,
    synchronous_coupling,
    wasserstein_1d,
)

atoms = arrays(float, st.integers(1, 6), elements=st.floats(-5, 5, allow_nan=False))


def minus_x(t, X):
    return -X


def brute_w(p, a, b):
    """Optimal matching over all permutations for equal-size atom lists."""
    best = min(np.mean(np.abs(np.asarray(a) - np.asarray(b)[list(perm)]) ** p)
               for perm in itertools.permutations(range(len(b))))
    return best ** (1.0 / p)


def mfg_for(F, G, n=61, K=40):
    m0 = gaussian_density(np.linspace(-6, 6, n), 0.0, 0.25)
    return picard_mfg(MFGProblem(F, G, [m0], n=n, time_steps=K))


class TestSimulate:
    def test_zero_solution_no_noise(self, zero_solution):
        ens = simulate_closed_loop(zero_solution, [0.3, -0.7], SimConfig(paths=3, sigma=0.0))
        assert np.all(ens.paths == np.array([0.3, -0.7]))
        assert ens.paths.shape == (3, 41, 2) and not ens.exit_flags.any()

    def test_linear_solution_no_noise(self, linear_solution):
        ens = simulate_closed_loop(linear_solution, [0.5, 0.0], SimConfig(paths=2, sigma=0.0))
        expected = np.array([0.5, 0.0]) - ens.times[:, None]
        np.testing.assert_allclose(ens.paths[0], expected, atol=1e-12)

    def test_ou_mean(self):
        ens = simulate(minus_x, [1.0], 1.0, 100, sigma=0.5, paths=10_000, seed=11)
        final = ens.paths[:, -1, 0]
        se = final.std(ddof=1) / math.sqrt(len(final))
        # Euler mean is (1 - dt)^K; compare against the continuous e^{-1}
        assert abs(final.mean() - math.exp(-1.0)) <= 3 * se + abs((1 - 0.01) ** 100 - math.exp(-1))

    def test_gradient_flow_decreases_potential(self):
        x0 = np.random.default_rng(0).uniform(-2, 2, size=(5, 3))
        ens = simulate(minus_x, x0[0], 1.0, 50, sigma=0.0, paths=1)
        pot = 0.5 * np.sum(ens.paths[0] ** 2, axis=1)
        assert np.all(np.diff(pot) <= 0)

    def test_reproducible(self, coupled_solution):
        cfg = SimConfig(paths=64, seed=9)
        a = simulate_closed_loop(coupled_solution, [0.1, 0.2], cfg)
        b = simulate_closed_loop(coupled_solution, [0.1, 0.2], cfg)
        assert a.paths.tobytes() == b.paths.tobytes()
        c = simulate_closed_loop(coupled_solution, [0.1, 0.2], SimConfig(paths=64, seed=10))
        assert not np.array_equal(a.paths, c.paths)

    def test_noise_prefix_independent_of_path_count(self):
        small = gaussian_block(5, 3, 0, 10, 2)
        large = gaussian_block(5, 3, 0, 40, 2)
        np.testing.assert_array_equal(small, large[:10])

    def test_gaussian_moments(self):
        z = gaussian_block(1, 0, 0, 20_000, 1)
        assert abs(z.mean()) < 0.03 and abs(z.var() - 1.0) < 0.05

    def test_common_noise_shared(self):
        ens = simulate(lambda t, X: 0 * X, [0.0, 0.0], 1.0, 10, sigma=0.0, beta=1.0, paths=4)
        np.testing.assert_array_equal(ens.paths[..., 0], ens.paths[..., 1])

    def test_exit_flag(self, zero_solution):
        ens = simulate_closed_loop(zero_solution, [2.9, 0.0], SimConfig(paths=200, seed=1, sigma=4.0))
        assert ens.exit_flags.any()
        assert np.all(np.isfinite(ens.paths))

    def test_x0_outside_box(self, zero_solution):
        with pytest.raises(ValueError):
            simulate_closed_loop(zero_solution, [4.0, 0.0])

    def test_csv(self, tmp_path, zero_solution):
        ens = simulate_closed_loop(zero_solution, [0.0, 0.0], SimConfig(paths=2, steps=3))
        ens.to_csv(tmp_path / "e.csv")
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines[0] == "path,t,x1,x2" and len(lines) == 1 + 2 * 4

    @pytest.mark.parametrize("kw", [dict(steps=0), dict(paths=0), dict(seed=-1)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)


class TestCoupling:
    def test_same_start(self, coupled_solution):
        res = synchronous_coupling(coupled_solution, [0.2, 0.1], [0.2, 0.1], 0.5, SimConfig(paths=16))
        assert np.all(res.msd == 0.0)

    def test_injected_contraction(self):
        cfg = SimConfig(paths=256, steps=200, seed=4)
        res = synchronous_coupling(minus_x, [1.0], [0.0], -1.0, cfg, T=1.0, sigma=1.0)
        # the gap solves the Euler recursion exactly: (1 - dt)^{2k}
        np.testing.assert_allclose(res.msd, (1 - 1 / 200) ** (2 * np.arange(201)), rtol=1e-12)
        assert res.ratio[-1] == pytest.approx(1.0, abs=2 * 1.0 * 0.005 + 1e-12)
        assert np.max(res.stderr) <= 1e-12

    def test_zero_drift(self, zero_solution):
        res = synchronous_coupling(zero_solution, [0.5, 0.0], [-0.5, 0.0], 0.0, SimConfig(paths=64))
        np.testing.assert_allclose(res.msd, 1.0, atol=1e-12)
        assert res.passed and res.max_ratio <= 1.0 + 1e-12

    def test_callable_needs_horizon(self):
        with pytest.raises(ValueError):
            synchronous_coupling(minus_x, [1.0], [0.0], 0.0, SimConfig(steps=10))


class TestWasserstein:
    def test_identical(self):
        assert wasserstein_1d(1, [0.0, 1.0, 5.0], [5.0, 0.0, 1.0]) == 0.0

    @pytest.mark.parametrize("p", [1, 2])
    def test_point_masses(self, p):
        assert wasserstein_1d(p, [0.0], [1.0]) == 1.0

    @pytest.mark.parametrize("p", [1, 2])
    def test_two_atoms(self, p):
        a, b = [0.0, 2.0], [1.0, 3.0]
        assert wasserstein_1d(p, a, b) == pytest.approx(1.0)
        assert wasserstein_1d(p, a, b) == pytest.approx(brute_w(p, a, b))

    @given(st.integers(1, 6).flatmap(lambda k: st.tuples(
        arrays(float, k, elements=st.floats(-5, 5)), arrays(float, k, elements=st.floats(-5, 5)))),
        st.sampled_from([1, 2]))
    def test_brute_force(self, pair, p):
        a, b = pair
        assert wasserstein_1d(p, a, b) == pytest.approx(brute_w(p, a, b), abs=1e-12)

    def test_unequal_counts(self):
        # quantile functions: 0 on (0, 1) against 0 on (0, 1/2), 1 on (1/2, 1)
        assert wasserstein_1d(1, [0.0], [0.0, 1.0]) == pytest.approx(0.5)
        assert wasserstein_1d(2, [0.0], [0.0, 1.0]) == pytest.approx(math.sqrt(0.5))

    @given(atoms, atoms, atoms, st.sampled_from([1, 2]))
    def test_metric_axioms(self, a, b, c, p):
        ab, bc, ac = wasserstein_1d(p, a, b), wasserstein_1d(p, b, c), wasserstein_1d(p, a, c)
        assert ab == pytest.approx(wasserstein_1d(p, b, a), abs=1e-12)
        assert ac <= ab + bc + 1e-12

    @given(arrays(float, (4, 3), elements=st.floats(-5, 5)), arrays(float, (4, 3), elements=st.floats(-5, 5)))
    def test_coupling_upper_bound(self, X, Y):
        for x, y in zip(X, Y):
            w2 = wasserstein_1d(2, EmpiricalMeasure(x), EmpiricalMeasure(y))
            assert w2**2 <= np.mean((x - y) ** 2) + 1e-12

    def test_errors(self):
        with pytest.raises(ValueError):
            wasserstein_1d(3, [0.0], [1.0])
        with pytest.raises(ValueError):
            wasserstein_1d(1, [], [1.0])


class TestChaosGap:
    def test_zero_data(self):
        sol = small_solve("zero", K=20)
        mfg = mfg_for(lambda lam, x, m: 0 * x, lambda lam, x, m: 0 * x)
        gap = chaos_gap(sol, mfg, cfg=SimConfig(paths=128, seed=2))
        assert gap.gap == 0.0 and gap.N == 2

    def test_linear_data(self):
        sol = small_solve("linear", K=20)
        mfg = mfg_for(lambda lam, x, m: 0 * x, lambda lam, x, m: x + 0 * x)
        gap = chaos_gap(sol, mfg, cfg=SimConfig(paths=128, seed=2))
        assert gap.gap <= 1e-6

    def test_common_noise_rejected(self):
        sol = small_solve("zero", K=10, beta=0.5)
        mfg = mfg_for(lambda lam, x, m: 0 * x, lambda lam, x, m: 0 * x, K=10)
        with pytest.raises(ValueError):
            chaos_gap(sol, mfg, cfg=SimConfig(paths=8))
