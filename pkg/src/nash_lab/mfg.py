"""Finite-label mean field game on the real line.

Each label ``λ`` carries a value function and a density::

    -∂_t u^λ - σ ∂_xx u^λ + |∂_x u^λ|^2 / 2 = F(λ, x, μ_t),   u^λ(T) = G(λ, x, μ_T)
     ∂_t m^λ - σ ∂_xx m^λ - ∂_x(∂_x u^λ m^λ) = 0,            m^λ(0) = m0^λ

coupled through the mixture ``μ_t = Σ_j θ_j m^{λ_j}_t``.  The pair is solved
by damped Picard iteration on ``μ``.

Densities live on nodes of a uniform grid with trapezoid control volumes
(half cells at the ends) and no-flux boundaries.  The Fokker–Planck flux
through each interface is central when the cell Péclet number allows it and
donor-cell otherwise, which keeps the implicit matrix an M-matrix: the
scheme conserves the trapezoid mass and never produces negative densities.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .grid import Field, TensorGrid, load_field, save_field

logger = logging.getLogger(__name__)

__all__ = [
    "MFGError",
    "MFGNonConvergence",
    "GridMeasure",
    "MFGProblem",
    "MFGSolution",
    "gaussian_density",
    "trapezoid_weights",
    "density_w1",
    "solve_hjb_1d",
    "solve_fp_1d",
    "picard_mfg",
    "RepresentationCheck",
    "representation_check",
    "load_mfg",
]

MASS_ABORT = 1e-8


class MFGError(RuntimeError):
    """Non-finite values or a mass defect in a 1-d solve."""


class MFGNonConvergence(MFGError):
    def __init__(self, iterations: int, history: list[float]):
        last = history[-1] if history else math.nan
        super().__init__(f"MFG Picard did not converge in {iterations} iterations (last change {last:.3e})")
        self.iterations = iterations
        self.history = list(history)


# ---------------------------------------------------------------- grid helpers


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def gaussian_density(x: np.ndarray, mean: float, var: float) -> np.ndarray:
    """Gaussian sampled on ``x`` and rescaled to unit trapezoid mass."""
    m = np.exp(-0.5 * (x - mean) ** 2 / var)
    return m / np.dot(trapezoid_weights(x), m)


def density_w1(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """``W_1`` between two grid densities as ``∫ |F_a - F_b| dx``.

    In one dimension this equals the quantile-function formula used for
    atomic measures; CDFs are piecewise linear between nodes.
    """
    h = np.diff(x)
    Fa = np.concatenate([[0.0], np.cumsum(0.5 * (a[1:] + a[:-1]) * h)])
    Fb = np.concatenate([[0.0], np.cumsum(0.5 * (b[1:] + b[:-1]) * h)])
    return float(np.dot(trapezoid_weights(x), np.abs(Fa - Fb)))


@dataclass
class GridMeasure:
    """Density on a 1-d grid; ``integrate`` matches :class:`EmpiricalMeasure`."""

    x: np.ndarray
    density: np.ndarray

    def integrate(self, phi: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(trapezoid_weights(self.x), phi(self.x) * self.density))

    def mean(self) -> float:
        return self.integrate(lambda y: y)


# ---------------------------------------------------------------- problem


@dataclass
class MFGProblem:
    """Labels ``λ_j`` with weights ``θ_j``, costs ``F``/``G`` and initial densities.

    ``F(λ, x, m)`` and ``G(λ, x, m)`` receive a measure exposing
    ``integrate(phi)``.  ``m0`` holds one density per label on the grid
    ``[-L, L]`` with ``n`` nodes.
    """

    F: Callable
    G: Callable
    m0: Sequence[np.ndarray]
    labels: Sequence[float] = (0.0,)
    weights: Sequence[float] | None = None
    sigma: float = 1.0
    T: float = 1.0
    n: int = 201
    L: float = 6.0
    time_steps: int = 400

    def __post_init__(self):
        self.labels = tuple(float(v) for v in self.labels)
        k = len(self.labels)
        if k == 0:
            raise ValueError("need at least one label")
        if self.weights is None:
            self.weights = (1.0 / k,) * k
        self.weights = tuple(float(v) for v in self.weights)
        if len(self.weights) != k or any(w < 0 for w in self.weights):
            raise ValueError("need one nonnegative weight per label")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("label weights must sum to 1")
        if self.sigma < 0 or self.T <= 0 or self.time_steps < 1:
            raise ValueError("need sigma >= 0, T > 0 and time_steps >= 1")
        self.m0 = [np.asarray(m, dtype=float) for m in self.m0]
        if len(self.m0) != k:
            raise ValueError("need one initial density per label")
        w = trapezoid_weights(self.x)
        for m in self.m0:
            if m.shape != (self.n,):
                raise ValueError(f"initial density must have {self.n} nodes")
            if np.any(m < 0):
                raise ValueError("initial densities must be nonnegative")
            if abs(np.dot(w, m) - 1.0) > 1e-12:
                raise ValueError("initial densities must have unit mass")

    @property
    def grid(self) -> TensorGrid:
        return TensorGrid(1, self.n, self.L, memory_cap=max(5_000_000, self.n))

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.time_steps + 1)

    def refined(self) -> "MFGProblem":
        """Same problem with ``h`` and ``Δt`` halved; densities are re-sampled linearly and renormalised."""
        n2 = 2 * self.n - 1
        x2 = np.linspace(-self.L, self.L, n2)
        x2[n2 // 2] = 0.0
        m0 = []
        for m in self.m0:
            v = np.interp(x2, self.x, m)
            m0.append(v / np.dot(trapezoid_weights(x2), v))
        return MFGProblem(self.F, self.G, m0, self.labels, self.weights, self.sigma,
                          self.T, n2, self.L, 2 * self.time_steps)

    def swapped(self, order: Sequence[int]) -> "MFGProblem":
        """The same game with labels listed in another order."""
        order = list(order)
        return MFGProblem(self.F, self.G, [self.m0[j] for j in order],
                          [self.labels[j] for j in order], [self.weights[j] for j in order],
                          self.sigma, self.T, self.n, self.L, self.time_steps)


# ---------------------------------------------------------------- 1-d operators


def _d1(u: np.ndarray, h: float) -> np.ndarray:
    return np.gradient(u, h, edge_order=2)


def _d2(u: np.ndarray, h: float) -> np.ndarray:
    # quadratic closure at the ends (second difference copied from the neighbour)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h)
    out[0], out[-1] = out[1], out[-2]
    return out


def _hjb_matrix(n: int, coef: float) -> np.ndarray:
    """Banded ``I - coef h^2 D_xx`` with identity rows at the ends."""
    ab = np.zeros((3, n))
    ab[0, 2:] = -coef
    ab[1, :] = 1.0 + 2.0 * coef
    ab[2, :-2] = -coef
    ab[1, 0] = ab[1, -1] = 1.0
    return ab


def solve_hjb_1d(F_along_flow: np.ndarray, G_terminal: np.ndarray, sigma: float,
                 x: np.ndarray, times: np.ndarray, *, picard_tol: float = 1e-12,
                 picard_max_iters: int = 50) -> np.ndarray:
    """Backward Crank–Nicolson solve of ``-u_t - σ u_xx + u_x^2/2 = F``.

    ``F_along_flow`` has shape ``(levels, n)`` (the running cost with the
    flow of measures frozen), ``G_terminal`` shape ``(n,)``.  Diffusion is
    implicit, the Hamiltonian is iterated to a fixed point within each step.
    Returns ``u`` of shape ``(levels, n)``.
    """
    x = np.asarray(x, dtype=float)
    K = len(times) - 1
    h = x[1] - x[0]
    u = np.empty((K + 1, len(x)))
    u[-1] = G_terminal
    for k in range(K - 1, -1, -1):
        dt = times[k + 1] - times[k]
        un = u[k + 1]
        coef = 0.5 * dt * sigma / (h * h)
        ab = _hjb_matrix(len(x), coef)
        Nn = F_along_flow[k + 1] - 0.5 * _d1(un, h) ** 2
        base = dt * (sigma * _d2(un, h) + 0.5 * Nn + 0.5 * F_along_flow[k])
        V = un
        for _ in range(picard_max_iters):
            rhs = base - 0.5 * dt * 0.5 * _d1(V, h) ** 2
            if V is not un:
                # boundary rows of the matrix are the identity; their closure is explicit
                d = _d2(V - un, h)
                rhs[0] += 0.5 * dt * sigma * d[0]
                rhs[-1] += 0.5 * dt * sigma * d[-1]
            V_new = un + solve_banded((1, 1), ab, rhs)
            if not np.all(np.isfinite(V_new)):
                raise MFGError(f"non-finite HJB values at step {k}")
            change = float(np.max(np.abs(V_new - V)))
            V = V_new
            if change <= picard_tol * max(1.0, float(np.max(np.abs(V)))):
                break
        u[k] = V
    return u


def _fp_operator(v: np.ndarray, sigma: float, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tridiagonal ``A`` with ``w * dm/dt = A m`` (lower, diag, upper; lengths n-1, n, n-1).

    Interface ``i+1/2`` carries the flux ``J = a_i m_i + b_i m_{i+1}``: the
    diffusive part ``σ (m_i - m_{i+1}) / h`` plus the advective part, central
    ``(v_i m_i + v_{i+1} m_{i+1}) / 2`` when ``max|v| h <= 2σ`` and donor-cell
    ``v_i^+ m_i + v_{i+1}^- m_{i+1}`` otherwise.
    """
    vl, vr = v[:-1], v[1:]
    central = np.maximum(np.abs(vl), np.abs(vr)) * h <= 2.0 * sigma
    a = np.where(central, 0.5 * vl, np.maximum(vl, 0.0)) + sigma / h
    b = np.where(central, 0.5 * vr, np.minimum(vr, 0.0)) - sigma / h
    n = len(v)
    diag = np.zeros(n)
    # node i loses J_{i+1/2} and gains J_{i-1/2}
    diag[:-1] -= a
    diag[1:] += b
    upper = -b  # coefficient of m_{i+1} in row i
    lower = a   # coefficient of m_i in row i+1
    return lower, diag, upper


def solve_fp_1d(drift_field: np.ndarray, sigma: float, m0: np.ndarray, x: np.ndarray,
                times: np.ndarray) -> np.ndarray:
    """Forward solve of ``m_t = σ m_xx + ∂_x(∂_x u m)``.

    ``drift_field`` is ``∂_x u`` per time level, shape ``(levels, n)``;
    particles move with velocity ``-∂_x u``.  Each step is split into
    Crank–Nicolson substeps (velocity interpolated linearly in time) short
    enough for the explicit half to keep every coefficient nonnegative; the
    implicit half is an M-matrix, so densities stay nonnegative.  Raises
    :class:`MFGError` when the mass moves by more than ``1e-8`` in one step.
    """
    x = np.asarray(x, dtype=float)
    h = x[1] - x[0]
    w = trapezoid_weights(x)
    K = len(times) - 1
    m = np.empty((K + 1, len(x)))
    m[0] = m0
    mass = float(np.dot(w, m0))
    v = -np.asarray(drift_field, dtype=float)
    cur = np.array(m0, dtype=float)
    for k in range(K):
        dt = times[k + 1] - times[k]
        vmax = float(max(np.max(np.abs(v[k])), np.max(np.abs(v[k + 1]))))
        nsub = max(1, math.ceil(0.5 * dt * (2.0 * sigma / h**2 + 2.0 * vmax / h) - 1e-12))
        sub = dt / nsub
        op0 = _fp_operator(v[k], sigma, h)
        for s in range(1, nsub + 1):
            a = s / nsub
            op1 = _fp_operator((1.0 - a) * v[k] + a * v[k + 1], sigma, h) if s < nsub else \
                _fp_operator(v[k + 1], sigma, h)
            cur = _cn_substep(cur, op0, op1, w, sub)
            op0 = op1
        if not np.all(np.isfinite(cur)):
            raise MFGError(f"non-finite density at step {k}")
        new_mass = float(np.dot(w, cur))
        if abs(new_mass - mass) > MASS_ABORT:
            raise MFGError(f"mass defect {abs(new_mass - mass):.3e} at step {k}")
        m[k + 1] = cur
        mass = new_mass
    return m


def _cn_substep(m, op0, op1, w, dt):
    lo0, di0, up0 = op0
    lo1, di1, up1 = op1
    # fall back to implicit Euler if the explicit half would go negative
    theta = 0.5 if np.all(w + 0.5 * dt * di0 >= 0.0) else 1.0
    rhs = w * m
    if theta < 1.0:
        e = (1.0 - theta) * dt
        rhs = rhs + e * di0 * m
        rhs[:-1] += e * up0 * m[1:]
        rhs[1:] += e * lo0 * m[:-1]
    ab = np.zeros((3, len(m)))
    ab[0, 1:] = -theta * dt * up1
    ab[1, :] = w - theta * dt * di1
    ab[2, :-1] = -theta * dt * lo1
    return solve_banded((1, 1), ab, rhs)


# ---------------------------------------------------------------- solution


@dataclass
class MFGSolution:
    problem: MFGProblem
    u: np.ndarray      # (labels, levels, n)
    m: np.ndarray      # (labels, levels, n)
    mu: np.ndarray     # (levels, n)
    picard_history: list[float] = field(default_factory=list)
    converged: bool = True

    @property
    def x(self) -> np.ndarray:
        return self.problem.x

    @property
    def times(self) -> np.ndarray:
        return self.problem.times

    @property
    def m0(self) -> list[np.ndarray]:
        return self.problem.m0

    @property
    def iterations(self) -> int:
        return len(self.picard_history)

    def label_index(self, lam: float) -> int:
        labs = np.asarray(self.problem.labels)
        j = int(np.argmin(np.abs(labs - lam)))
        if abs(labs[j] - lam) > 1e-12:
            raise KeyError(f"label {lam} is not part of the MFG problem")
        return j

    def gradient(self, l: int) -> np.ndarray:
        cache = self.__dict__.setdefault("_grad_cache", {})
        if l not in cache:
            h = self.x[1] - self.x[0]
            cache[l] = np.stack([_d1(row, h) for row in self.u[l]])
        return cache[l]

    def _eval(self, arr: np.ndarray, t: float, x) -> np.ndarray:
        times = self.times
        t = float(np.clip(t, times[0], times[-1]))
        k = min(int(np.searchsorted(times, t, side="right")) - 1, len(times) - 2)
        w = (t - times[k]) / (times[k + 1] - times[k])
        xs = np.clip(np.asarray(x, dtype=float), self.x[0], self.x[-1])
        v0 = np.interp(xs, self.x, arr[k])
        v1 = np.interp(xs, self.x, arr[k + 1])
        return (1.0 - w) * v0 + w * v1

    def value(self, l: int, t: float, x) -> np.ndarray:
        return self._eval(self.u[l], t, x)

    def drift(self, l: int, t: float, x) -> np.ndarray:
        """``∂_x u^l(t, x)``; the optimal velocity is its negative."""
        return self._eval(self.gradient(l), t, x)

    def mixture_mean(self) -> np.ndarray:
        return self.mu @ (trapezoid_weights(self.x) * self.x)

    def save(self, directory: str | Path) -> None:
        """Field containers per label (``u_<l>.nlf``, ``m_<l>.nlf``) plus ``manifest.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        grid = self.problem.grid
        for l in range(len(self.problem.labels)):
            save_field(d / f"u_{l}.nlf", Field(grid, self.times, self.u[l]))
            save_field(d / f"m_{l}.nlf", Field(grid, self.times, self.m[l]))
        save_field(d / "mu.nlf", Field(grid, self.times, self.mu))
        p = self.problem
        manifest = {
            "labels": list(p.labels), "weights": list(p.weights), "sigma": p.sigma,
            "T": p.T, "n": p.n, "L": p.L, "time_steps": p.time_steps,
            "picard_history": [float(v) for v in self.picard_history],
            "converged": self.converged,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def load_mfg(directory: str | Path, F: Callable, G: Callable) -> MFGSolution:
    """Inverse of :meth:`MFGSolution.save`; the cost callables are not serialised."""
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    k = len(man["labels"])
    u = np.stack([load_field(d / f"u_{l}.nlf").values for l in range(k)])
    m = np.stack([load_field(d / f"m_{l}.nlf").values for l in range(k)])
    mu = load_field(d / "mu.nlf").values
    prob = MFGProblem(F, G, [m[l, 0] for l in range(k)], man["labels"], man["weights"],
                      man["sigma"], man["T"], man["n"], man["L"], man["time_steps"])
    return MFGSolution(prob, u, m, mu, man["picard_history"], man["converged"])


# ---------------------------------------------------------------- Picard


def _costs_along(problem: MFGProblem, lam: float, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = problem.x
    F = np.stack([np.broadcast_to(problem.F(lam, x, GridMeasure(x, row)), x.shape) for row in mu])
    G = np.broadcast_to(problem.G(lam, x, GridMeasure(x, mu[-1])), x.shape)
    return F, np.array(G, dtype=float)


def _mixture(problem: MFGProblem, m: np.ndarray) -> np.ndarray:
    return np.tensordot(np.asarray(problem.weights), m, axes=(0, 0))


def picard_mfg(problem: MFGProblem, damping: float = 0.5, tol: float = 1e-7,
               max_iters: int = 200, raise_on_failure: bool = True) -> MFGSolution:
    """Damped Picard iteration on the mixture flow.

    Starts from the heat flow of the initial densities.  Each sweep solves
    every label's HJB given ``μ``, then every label's Fokker–Planck equation
    with the new drifts, and relaxes ``μ <- (1-θ) μ + θ Σ_j θ_j m^j``.  The
    recorded change is ``max_t W_1`` between successive mixtures (before
    relaxation).
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    x, times = problem.x, problem.times
    nl = len(problem.labels)
    zero = np.zeros((len(times), len(x)))
    m = np.stack([solve_fp_1d(zero, problem.sigma, problem.m0[l], x, times) for l in range(nl)])
    mu = _mixture(problem, m)
    u = np.zeros_like(m)
    history: list[float] = []
    for it in range(1, max_iters + 1):
        for l, lam in enumerate(problem.labels):
            F, G = _costs_along(problem, lam, mu)
            u[l] = solve_hjb_1d(F, G, problem.sigma, x, times)
            grad = np.stack([_d1(row, x[1] - x[0]) for row in u[l]])
            m[l] = solve_fp_1d(grad, problem.sigma, problem.m0[l], x, times)
        mu_new = _mixture(problem, m)
        change = max(density_w1(x, a, b) for a, b in zip(mu_new, mu))
        history.append(change)
        logger.debug("MFG Picard iteration %d: change %.3e", it, change)
        if change <= tol:
            return MFGSolution(problem, u, m, mu_new, history, True)
        mu = (1.0 - damping) * mu + damping * mu_new
    if raise_on_failure:
        raise MFGNonConvergence(max_iters, history)
    return MFGSolution(problem, u, m, mu, history, False)


# ---------------------------------------------------------------- representation formula


@dataclass
class RepresentationCheck:
    """Both sides of the representation identity at time ``tau``."""

    tau: float
    lhs: float
    rhs: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    def as_dict(self) -> dict:
        return {"tau": self.tau, "lhs": self.lhs, "rhs": self.rhs, "gap": self.gap}


def representation_check(mfg: MFGSolution, problem: MFGProblem | None = None,
                         tau: float = 0.0, m_bar0: np.ndarray | None = None) -> RepresentationCheck:
    """Compare ``∫ u(τ) dm̄_τ`` with the cost of following the frozen feedback.

    ``m̄`` starts from ``m_bar0`` at the grid time nearest ``tau`` and moves
    with velocity ``-∂_x u``; the right side is
    ``∫_τ^T ∫ (|∂_x u|^2/2 + F(x, μ_t)) dm̄_t dt + ∫ G(x, μ_T) dm̄_T``
    with trapezoid quadrature in space and time.
    """
    problem = problem or mfg.problem
    if len(problem.labels) != 1:
        raise ValueError("representation_check needs a single-label problem")
    x, times = problem.x, problem.times
    k0 = int(np.argmin(np.abs(times - tau)))
    m_bar0 = problem.m0[0] if m_bar0 is None else np.asarray(m_bar0, dtype=float)
    w = trapezoid_weights(x)
    grad = mfg.gradient(0)[k0:]
    sub_t = times[k0:]
    mbar = solve_fp_1d(grad, problem.sigma, m_bar0, x, sub_t)
    F, G = _costs_along(problem, problem.labels[0], mfg.mu)
    running = np.einsum("kn,kn,n->k", 0.5 * grad**2 + F[k0:], mbar, w)
    rhs = float(np.dot(trapezoid_weights(sub_t), running)) if len(sub_t) > 1 else 0.0
    rhs += float(np.dot(w, G * mbar[-1]))
    lhs = float(np.dot(w, mfg.u[0, k0] * m_bar0))
    return RepresentationCheck(float(times[k0]), lhs, rhs)
