from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp

from nash_lab.model import catalog_costs
from nash_lab.oracle import (
    LQMFGCoefficients,
    LQSpec,
    RiccatiBlowUp,
    lq_mfg_moments,
    lq_spec_from_costs,
    nash_pde_residual,
    riccati_nash,
    riccati_rhs,
)


def sym_matrix(name, N):
    M = np.empty((N, N), dtype=object)
    for j in range(N):
        for k in range(j, N):
            M[j, k] = M[k, j] = sp.Symbol(f"{name}_{j}{k}")
    return M


def sym_vector(name, N):
    return np.array([sp.Symbol(f"{name}_{j}") for j in range(N)], dtype=object)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_symbolic_substitution(N):
    """The ansatz with coefficient derivatives from riccati_rhs solves the Nash PDE identically."""
    sigma, beta = sp.symbols("sigma beta")
    x = sp.symbols(f"x0:{N}")
    X = np.array(x, dtype=object)
    P = np.array([sym_matrix(f"P{i}", N) for i in range(N)])
    Q = np.array([sym_matrix(f"Q{i}", N) for i in range(N)])
    q = np.array([sym_vector(f"q{i}", N) for i in range(N)])
    l = np.array([sym_vector(f"l{i}", N) for i in range(N)])
    r = sym_vector("r", N)
    k = sym_vector("k", N)
    dP, dq, dr = riccati_rhs(P, q, Q, l, k, sigma, beta)
    u = [sp.Rational(1, 2) * X @ P[i] @ X + q[i] @ X + r[i] for i in range(N)]
    for i in range(N):
        dt_u = sp.Rational(1, 2) * X @ dP[i] @ X + dq[i] @ X + dr[i]
        lap = sum(sp.diff(u[i], x[j], 2) for j in range(N))
        common = sum(sp.diff(u[i], x[j], x[m]) for j in range(N) for m in range(N))
        ham = sp.Rational(1, 2) * sp.diff(u[i], x[i]) ** 2
        transport = sum(sp.diff(u[j], x[j]) * sp.diff(u[i], x[j]) for j in range(N) if j != i)
        f = sp.Rational(1, 2) * X @ Q[i] @ X + l[i] @ X + k[i]
        residual = -dt_u - sigma * lap - beta * common + ham + transport - f
        assert sp.expand(residual) == 0


def test_zero_costs():
    N = 2
    sol = riccati_nash(LQSpec(np.zeros((N, N, N)), np.zeros((N, N, N))), steps=50)
    assert np.all(sol.P == 0) and np.all(sol.q == 0) and np.all(sol.r == 0)


def test_scalar_case():
    spec = LQSpec(np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
    sol = riccati_nash(spec, steps=2000)
    # a' = a^2 with a(1) = 1 gives a(t) = 1/(2 - t); r' = -sigma a gives r(0) = ln 2
    assert sol.P[0, 0, 0, 0] == pytest.approx(0.5, abs=1e-10)
    assert sol.r[0, 0] == pytest.approx(math.log(2), abs=1e-10)
    t = sol.times
    np.testing.assert_allclose(sol.P[:, 0, 0, 0], 1 / (2 - t), atol=1e-10)


def test_terminal_values_exact():
    spec = lq_spec_from_costs(catalog_costs("convex-quadratic-coupled", 3))
    sol = riccati_nash(spec, steps=100)
    np.testing.assert_array_equal(sol.P[-1], spec.G)
    np.testing.assert_array_equal(sol.q[-1], spec.m)
    np.testing.assert_array_equal(sol.P, np.transpose(sol.P, (0, 1, 3, 2)))


def test_decoupled_two_players():
    Q = np.zeros((2, 2, 2))
    G = np.zeros((2, 2, 2))
    G[0, 0, 0] = G[1, 1, 1] = 1.0
    two = riccati_nash(LQSpec(Q, G), steps=1000)
    one = riccati_nash(LQSpec(np.zeros((1, 1, 1)), np.ones((1, 1, 1))), steps=1000)
    for i in range(2):
        np.testing.assert_allclose(two.P[:, i, i, i], one.P[:, 0, 0, 0], atol=1e-12)
        off = two.P[:, i].copy()
        off[:, i, i] = 0.0
        assert np.all(off == 0)
        np.testing.assert_allclose(two.r[:, i], one.r[:, 0], atol=1e-12)


def test_blow_up():
    # a' = a^2 + 4 from a(T) = 0 is -2 tan(2 (T - t)), singular at T - t = pi/4
    spec = LQSpec(-4.0 * np.ones((1, 1, 1)), np.zeros((1, 1, 1)))
    with pytest.raises(RiccatiBlowUp) as info:
        riccati_nash(spec, steps=4000)
    assert info.value.t == pytest.approx(1.0 - math.pi / 4, abs=1e-2)


@pytest.mark.parametrize("name", ["quadratic", "convex-quadratic-coupled", "linear"])
def test_pde_residual_random_samples(name):
    spec = lq_spec_from_costs(catalog_costs(name, 3), sigma=1.0, beta=0.3)
    sol = riccati_nash(spec, steps=2000)
    rng = np.random.default_rng(0)
    for t in rng.uniform(0, 1, size=5):
        X = rng.uniform(-2, 2, size=(20, 3))
        assert np.max(np.abs(nash_pde_residual(sol, t, X))) <= 1e-8


def test_gradient_and_value_consistent():
    sol = riccati_nash(lq_spec_from_costs(catalog_costs("convex-quadratic-coupled", 2)), steps=200)
    X = np.array([[0.3, -0.4]])
    e = 1e-6
    for k in range(2):
        d = np.zeros(2)
        d[k] = e
        fd = (sol.value(0.37, X + d) - sol.value(0.37, X - d)) / (2 * e)
        np.testing.assert_allclose(sol.gradient(0.37, X)[0, :, k], fd[0], atol=1e-7)


def test_non_lq_rejected():
    with pytest.raises(ValueError):
        lq_spec_from_costs(catalog_costs("sine-coupled", 2))
    with pytest.raises(ValueError):
        LQSpec(np.array([[[0.0, 1.0], [0.0, 0.0]]] * 2), np.zeros((2, 2, 2)))


class TestMoments:
    def test_zero_costs(self):
        mo = lq_mfg_moments(LQMFGCoefficients(sigma=1.0), 0.4, 0.25, steps=100)
        np.testing.assert_allclose(mo.mean, 0.4, atol=1e-14)
        np.testing.assert_allclose(mo.var, 0.25 + 2 * mo.times, atol=1e-12)

    def test_injected_drift(self):
        mo = lq_mfg_moments(LQMFGCoefficients(sigma=1.0), 1.0, 0.25, injected_drift=1.0)
        np.testing.assert_allclose(mo.mean, np.exp(-mo.times))

    def test_linear_terminal(self):
        # G = x: q = 1, P = 0, so the mean drifts with unit speed to the left
        mo = lq_mfg_moments(LQMFGCoefficients(c_g=1.0), 0.0, 0.25, steps=100)
        np.testing.assert_allclose(mo.mean, -mo.times, atol=1e-12)
        np.testing.assert_allclose(mo.value(0, 0.0), -0.5, atol=1e-12)

    def test_fixed_point_consistency(self):
        coef = LQMFGCoefficients(a_f=1.0, eps_f=0.5, a_g=1.0, eps_g=0.5)
        mo = lq_mfg_moments(coef, 0.5, 0.25, steps=2000)
        # terminal condition of the linear part closes on the terminal mean
        assert mo.q[-1] == pytest.approx(0.5 * mo.mean[-1], abs=1e-12)

    def test_steps_validated(self):
        with pytest.raises(ValueError):
            lq_mfg_moments(LQMFGCoefficients(), 0.0, 1.0, steps=0)
