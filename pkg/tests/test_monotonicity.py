from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nash_lab.grid import Field, TensorGrid
from nash_lab.model import catalog_costs, quadratic_raw_costs
from nash_lab.monotonicity import (
    PairSampler,
    block_margin_of,
    block_matrices,
    d_operator,
    derivative_scaling,
    l_operator,
    propagation_thresholds,
    scaling_report,
    semimonotonicity_scan,
    swap_coordinate,
    time_holder_check,
)

coords = st.floats(-3, 3, allow_nan=False)


def own_quadratic(As):
    """``D_i h^i`` for ``h^i = x·A_i x / 2`` evaluated one term at a time."""
    def own(X):
        out = np.zeros_like(X)
        for m in range(X.shape[0]):
            for i, A in enumerate(As):
                S = 0.5 * (A + A.T)
                out[m, i] = sum(S[i, k] * X[m, k] for k in range(X.shape[1]))
        return out
    return own


def values_quadratic(As):
    def vals(X):
        return np.stack([0.5 * np.einsum("mj,jk,mk->m", X, A, X) for A in As], axis=-1)
    return vals


class TestOperators:
    def test_d_same_point(self):
        own = own_quadratic([np.eye(2)] * 2)
        assert d_operator(own, [0.3, 1.0], [0.3, 1.0]) == 0.0

    def test_d_decoupled_quadratic(self):
        As = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
        assert d_operator(own_quadratic(As), [1.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0)

    @given(st.integers(0, 2**32 - 1))
    def test_d_matches_defining_sum(self, seed):
        rng = np.random.default_rng(seed)
        N = 3
        As = [rng.normal(size=(N, N)) for _ in range(N)]
        As = [A + A.T for A in As]
        x, y = rng.normal(size=N), rng.normal(size=N)
        fam = quadratic_raw_costs(As)
        idx = np.arange(N)
        got = d_operator(lambda X: fam.f_grad_values(X)[:, idx, idx], x, y)
        # D_i h^i(x) = Σ_k A_i[i, k] x^k
        want = sum((As[i][i] @ x - As[i][i] @ y) * (x[i] - y[i]) for i in range(N))
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_l_separable_is_zero(self):
        vals = lambda X: np.sin(X) + X**3  # noqa: E731
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
        np.testing.assert_allclose(l_operator(vals, x, y), 0.0, atol=1e-14)
        assert l_operator(vals, x[0], x[0]) == 0.0

    def test_l_bilinear_example(self):
        vals = lambda X: np.stack([X[:, 0] * X[:, 1] / 2, X[:, 1] * X[:, 0] / 2], axis=-1)  # noqa: E731
        assert l_operator(vals, [1.0, 1.0], [0.0, 0.0]) == pytest.approx(1.0)

    @given(arrays(float, 3, elements=coords), arrays(float, 3, elements=coords))
    def test_l_equals_d_for_quadratic_with_diag(self, x, y):
        # for h^i = x·A_i x / 2 the four-point L is D minus the own-diagonal part
        rng = np.random.default_rng(7)
        As = [A + A.T for A in rng.normal(size=(3, 3, 3))]
        fam = quadratic_raw_costs(As)
        idx = np.arange(3)
        d = d_operator(lambda X: fam.f_grad_values(X)[:, idx, idx], x, y)
        ell = l_operator(fam.f_values, x, y)
        diag = sum(As[i][i, i] * (x[i] - y[i]) ** 2 for i in range(3))
        assert ell == pytest.approx(d - diag, abs=1e-9 * (1 + abs(d)))

    def test_swap(self):
        out = swap_coordinate(np.array([1.0, 2.0, 3.0]), np.array([7.0, 8.0, 9.0]), 1)
        assert out.tolist() == [1.0, 8.0, 3.0]


class TestScanCosts:
    def sampler(self):
        return PairSampler(count=500, seed=3)

    def test_convex_decoupled(self):
        fam = quadratic_raw_costs([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])
        rep = semimonotonicity_scan(fam, self.sampler(), which="f")
        assert rep.minimum("block_margin") == pytest.approx(1.0)
        assert rep.minimum("d_margin") == pytest.approx(1.0)
        assert rep.minimum("diag_margin") == pytest.approx(1.0)

    def test_concave_decoupled(self):
        fam = quadratic_raw_costs([np.diag([-1.0, 0.0]), np.diag([0.0, -1.0])])
        rep = semimonotonicity_scan(fam, self.sampler(), which="f")
        assert rep.minimum("block_margin") == pytest.approx(-1.0)

    def test_hand_built_block(self):
        N, eps = 3, 0.5
        As = []
        for i in range(N):
            A = np.zeros((N, N))
            A[i, i] = 1.0
            for j in range(N):
                if j != i:
                    A[i, j] = A[j, i] = eps / N
            As.append(A)
        rep = semimonotonicity_scan(quadratic_raw_costs(As), self.sampler(), "block", which="f")
        M = np.eye(N) + (eps / N) * (np.ones((N, N)) - np.eye(N))
        assert rep.minimum("block_margin") == pytest.approx(np.linalg.eigvalsh(M)[0], abs=1e-12)
        assert math.isnan(rep.minimum("d_margin"))

    @pytest.mark.parametrize("name", ["quadratic", "convex-quadratic-coupled", "sine-coupled"])
    def test_drift_osl_equals_d_for_quadratic_h(self, name):
        rep = semimonotonicity_scan(catalog_costs(name, 3), self.sampler(), ("D", "drift_osl"))
        assert rep.minimum("drift_osl_margin") == pytest.approx(rep.minimum("d_margin"), abs=1e-12)

    def test_block_bounds_d(self):
        # D / |x-y|^2 is a Rayleigh quotient of averaged blocks, so it stays above the block minimum
        rep = semimonotonicity_scan(catalog_costs("sine-coupled", 3), self.sampler())
        assert rep.minimum("d_margin") >= rep.minimum("block_margin") - 1e-9

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            semimonotonicity_scan(catalog_costs("zero", 2), mode="E")
        with pytest.raises(ValueError):
            semimonotonicity_scan(catalog_costs("zero", 2), which="h")

    def test_json(self, tmp_path):
        rep = semimonotonicity_scan(catalog_costs("quadratic", 2), self.sampler(), "block")
        rep.to_json(tmp_path / "scan.json")
        assert '"d_margin": null' in (tmp_path / "scan.json").read_text()


class TestScanSolution:
    def test_zero_solution(self, zero_solution):
        rep = semimonotonicity_scan(zero_solution, PairSampler(count=200))
        for name in ("block_margin", "diag_margin", "d_margin", "l_margin", "drift_osl_margin"):
            assert rep.minimum(name) == 0.0
        assert len(rep.times) == len(zero_solution.times)

    def test_coupled_margins_consistent(self, coupled_solution):
        rep = semimonotonicity_scan(coupled_solution, PairSampler(count=300), levels=[0, 30, 60])
        np.testing.assert_allclose(rep.drift_osl_margin, rep.d_margin, atol=1e-12)
        assert np.all(rep.block_margin > -0.5)


class TestThresholds:
    def test_closed_forms(self):
        th = propagation_thresholds(1.0)
        assert th["M_g"] == pytest.approx(1 / (12 * math.e))
        assert th["M_f"] == pytest.approx(1 / (12 * math.e))
        assert th["M"] == 0.5
        th2 = propagation_thresholds(2.0)
        assert th2["M_f"] == pytest.approx(th["M_f"] / 4)
        assert th2["kappa_g"] == pytest.approx(th2["M_g"])

    def test_positive_horizon(self):
        with pytest.raises(ValueError):
            propagation_thresholds(0.0)


class TestScaling:
    def test_zero(self, zero_solution):
        rep = derivative_scaling(zero_solution)
        assert all(v == 0 for k, v in rep.as_dict().items() if k not in ("N", "c1_weighted_per_player"))

    def test_linear(self, linear_solution):
        rep = derivative_scaling(linear_solution)
        assert rep.skew_first <= 1e-10 and rep.diag_second <= 1e-8
        assert rep.diag_first == pytest.approx(1.0, abs=1e-8)

    def test_sweep_needs_two(self, zero_solution):
        with pytest.raises(ValueError):
            scaling_report({2: zero_solution})
        sweep = scaling_report({2: zero_solution, 3: zero_solution})
        assert sweep.ratios["skew_first"] == 1.0


class TestHolder:
    def test_constant_field(self):
        g = TensorGrid(1, 9)
        f = Field(g, np.linspace(0, 1, 5), np.ones((5, 9)))
        assert time_holder_check(f, 1.0, 1.0).ratio == 0.0

    def test_zero_field(self, zero_solution):
        assert time_holder_check(zero_solution.fields[0], 0.0, 0.0).ratio == 0.0

    def test_linear_solution(self, linear_solution):
        # |u(tau) - u(s)| = |tau - s| / 2, dominated once c2 >= 1/2
        res = time_holder_check(linear_solution.fields[0], 1.0, 0.5)
        assert res.passed and res.ratio <= 1.0

    def test_repeated_times_skipped(self):
        g = TensorGrid(1, 9)
        f = Field(g, np.array([0.0, 0.0, 1.0]), np.stack([np.zeros(9), np.ones(9), np.ones(9)]))
        res = time_holder_check(f, 1.0, 0.0)
        assert np.isfinite(res.ratio)


class TestSampler:
    def test_deterministic(self):
        a = PairSampler(count=50, seed=5).sample(3)
        b = PairSampler(count=50, seed=5).sample(3)
        np.testing.assert_array_equal(a[0], b[0])
        c = PairSampler(count=50, seed=6).sample(3)
        assert not np.array_equal(a[0], c[0])

    def test_box(self):
        x, y = PairSampler(count=100, half_width=0.5).sample(2)
        assert x.shape == (100, 2) and np.all(np.abs(x) <= 0.5) and np.all(np.abs(y) <= 0.5)

    def test_validation(self):
        with pytest.raises(ValueError):
            PairSampler(count=0)


def test_block_matrices_layout():
    hess = np.zeros((2, 2, 2))
    hess[0, 0, 1] = 3.0  # D_01 h^0
    hess[1, 1, 0] = 5.0  # D_10 h^1
    B = block_matrices(hess)
    assert B[0, 1] == 3.0 and B[1, 0] == 5.0
    assert block_margin_of(B) == pytest.approx(-4.0)
