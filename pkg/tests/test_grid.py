from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nash_lab.grid import (
    Field,
    TensorGrid,
    diff,
    diff_array,
    diffusion_apply,
    diffusion_array,
    dual_weighted_norm,
    interpolate,
    load_field,
    save_field,
    weighted_norm,
)

finite = st.floats(-10, 10, allow_nan=False)


def field_of(grid, fun, times=(0.0,)):
    pts = [np.broadcast_to(grid.axis_coords(j), grid.shape) for j in range(grid.N)]
    vals = np.stack([fun(t, *pts) * np.ones(grid.shape) for t in times])
    return Field(grid, np.array(times), vals)


class TestTensorGrid:
    def test_nodes_symmetric(self):
        g = TensorGrid(2, 9, 3.0)
        np.testing.assert_array_equal(g.nodes, -g.nodes[::-1])
        assert g.nodes[4] == 0.0
        assert g.h == pytest.approx(0.75)

    def test_defaults(self):
        assert TensorGrid(3).n == 33
        assert TensorGrid(4).n == 17
        assert TensorGrid(5).n == 9

    @pytest.mark.parametrize("n", [4, 8, 3])
    def test_rejects_bad_node_count(self, n):
        with pytest.raises(ValueError):
            TensorGrid(2, n)

    def test_memory_cap(self):
        with pytest.raises(MemoryError):
            TensorGrid(5, 33)

    def test_window(self):
        g = TensorGrid(1, 33, 3.0)
        sl = g.window_slices(0.5)[0]
        sub = g.nodes[sl]
        assert sub[0] == pytest.approx(-1.5) and sub[-1] == pytest.approx(1.5)

    def test_refined(self):
        g = TensorGrid(2, 17, 3.0).refined()
        assert g.n == 33 and g.h == pytest.approx(3.0 / 16)


class TestWeightedNorm:
    def test_zero(self):
        assert weighted_norm(np.zeros(3), 0) == 0.0

    def test_examples(self):
        assert weighted_norm([3.0, 4.0, 0.0, 0.0], 0) == pytest.approx(math.sqrt(13))
        assert weighted_norm([1.0, 1.0], 1) == pytest.approx(math.sqrt(1.5))

    def test_index_range(self):
        with pytest.raises(IndexError):
            weighted_norm([1.0, 2.0], 2)

    @given(arrays(float, st.integers(1, 6), elements=finite), st.data())
    def test_norm_equivalence(self, x, data):
        i = data.draw(st.integers(0, len(x) - 1))
        w = weighted_norm(x, i)
        e = np.linalg.norm(x)
        assert w <= e + 1e-12
        assert e <= math.sqrt(len(x)) * w + 1e-12

    @given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
    def test_dual_pairing(self, x, w):
        # |<w, x>| <= dual(w) * norm(x) (Cauchy-Schwarz in the weighted inner product)
        assert abs(np.dot(w, x)) <= dual_weighted_norm(w, 1) * weighted_norm(x, 1) + 1e-9


class TestDifferences:
    def test_constant_field(self):
        g = TensorGrid(2, 9)
        f = field_of(g, lambda t, x, y: 3.0)
        for alpha in [(1, 0), (0, 2), (1, 1), (2, 1), (0, 3)]:
            assert np.max(np.abs(diff(f, 0, alpha).values)) == 0.0

    def test_bilinear_mixed(self):
        g = TensorGrid(2, 17)
        f = field_of(g, lambda t, x, y: x * y)
        d = diff(f, 0, (1, 1)).values[0]
        np.testing.assert_allclose(d, 1.0, atol=1e-10)

    def test_second_derivative_order(self):
        errs = []
        for n in (33, 65):
            g = TensorGrid(2, n)
            f = field_of(g, lambda t, x, y: np.sin(x))
            d = diff(f, 0, (2, 0)).values[0]
            exact = -np.sin(np.broadcast_to(g.axis_coords(0), g.shape))
            errs.append(np.max(np.abs(d - exact)[1:-1, 1:-1]))
        assert 3.5 <= errs[0] / errs[1] <= 4.5

    def test_third_order(self):
        g = TensorGrid(1, 129)
        u = g.nodes ** 3
        np.testing.assert_allclose(diff_array(u, (3,), g.h)[3:-3], 6.0, atol=1e-8)

    def test_order_limit(self):
        g = TensorGrid(2, 9)
        with pytest.raises(ValueError):
            diff_array(np.zeros(g.shape), (2, 2), g.h)

    def test_parity(self):
        g = TensorGrid(2, 17)
        u = np.cos(np.broadcast_to(g.axis_coords(0), g.shape)) + \
            np.broadcast_to(g.axis_coords(1), g.shape) ** 2
        d1 = diff_array(u, (1, 0), g.h)
        d2 = diff_array(u, (2, 0), g.h)
        np.testing.assert_allclose(d1, -d1[::-1, :], atol=1e-13)
        np.testing.assert_allclose(d2, d2[::-1, :], atol=1e-13)


class TestDiffusion:
    def test_laplacian_of_quadratic(self):
        g = TensorGrid(3, 9)
        f = field_of(g, lambda t, x, y, z: x**2 + y**2 + z**2)
        np.testing.assert_allclose(diffusion_apply(f, 0, 1.0, 0.0).values, 6.0, atol=1e-10)

    def test_common_noise_term(self):
        g = TensorGrid(2, 9)
        f = field_of(g, lambda t, x, y: (x + y) ** 2)
        np.testing.assert_allclose(diffusion_apply(f, 0, 0.0, 1.0).values, 8.0, atol=1e-10)

    def test_constant(self):
        g = TensorGrid(2, 9)
        assert np.all(diffusion_array(np.full(g.shape, 2.0), g.h, 1.0, 0.5) == 0.0)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
    def test_linearity(self, a, b, seed):
        g = TensorGrid(2, 9)
        rng = np.random.default_rng(seed)
        u, v = rng.normal(size=g.shape), rng.normal(size=g.shape)
        lhs = diffusion_array(a * u + b * v, g.h, 0.7, 0.3)
        rhs = a * diffusion_array(u, g.h, 0.7, 0.3) + b * diffusion_array(v, g.h, 0.7, 0.3)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.max(np.abs(lhs))))


class TestInterpolation:
    def test_at_node(self):
        g = TensorGrid(2, 9)
        f = field_of(g, lambda t, x, y: np.sin(x) * y + t, times=(0.0, 0.5, 1.0))
        val, out = interpolate(f, 0.5, np.array([[g.nodes[2], g.nodes[5]]]))
        assert val[0] == f.values[1, 2, 5] and not out[0]

    def test_linear_midpoint(self):
        g = TensorGrid(2, 9)
        f = field_of(g, lambda t, x, y: x)
        x = 0.5 * (g.nodes[3] + g.nodes[4])
        val, _ = interpolate(f, 0.0, np.array([[x, 0.1]]))
        assert val[0] == pytest.approx(x, abs=1e-14)

    def test_bilinear_cell_centre(self):
        g = TensorGrid(2, 9)
        f = field_of(g, lambda t, x, y: x * y)
        cx = 0.5 * (g.nodes[1] + g.nodes[2])
        cy = 0.5 * (g.nodes[6] + g.nodes[7])
        val, _ = interpolate(f, 0.0, np.array([[cx, cy]]))
        assert val[0] == pytest.approx(cx * cy, abs=1e-14)

    def test_linear_in_time(self):
        g = TensorGrid(1, 9)
        f = field_of(g, lambda t, x: t + 0 * x, times=(0.0, 1.0))
        val, _ = interpolate(f, 0.25, np.array([[0.3]]))
        assert val[0] == pytest.approx(0.25)

    def test_clamped_flag(self):
        g = TensorGrid(2, 9)
        f = field_of(g, lambda t, x, y: x)
        val, out = interpolate(f, 0.0, np.array([[5.0, 0.0], [0.0, 0.0]]))
        assert out.tolist() == [True, False]
        assert val[0] == pytest.approx(3.0)

    @given(arrays(float, (5, 2), elements=st.floats(-3, 3)))
    def test_multilinear_exact(self, pts):
        g = TensorGrid(2, 9)
        f = field_of(g, lambda t, x, y: 1.0 + 2 * x - y + 0.5 * x * y)
        val, _ = interpolate(f, 0.0, pts)
        exact = 1.0 + 2 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 0] * pts[:, 1]
        np.testing.assert_allclose(val, exact, atol=1e-12)


def test_field_round_trip(tmp_path):
    g = TensorGrid(2, 9, 2.0)
    f = field_of(g, lambda t, x, y: np.sin(x + t) * y, times=(0.0, 0.3, 1.0))
    f.meta["player"] = 1
    save_field(tmp_path / "u.nlf", f)
    h = load_field(tmp_path / "u.nlf")
    assert h.grid == g and h.meta == {"player": 1}
    np.testing.assert_array_equal(h.values, f.values)
    np.testing.assert_array_equal(h.times, f.times)


def test_load_rejects_other_files(tmp_path):
    (tmp_path / "x.nlf").write_bytes(b"not a field")
    with pytest.raises(ValueError):
        load_field(tmp_path / "x.nlf")


def test_field_shape_checked():
    with pytest.raises(ValueError):
        Field(TensorGrid(1, 9), np.array([0.0]), np.zeros((1, 8)))
