"""Backward solver for the Nash system of N coupled parabolic equations.

For each player i the value function solves, backwards from ``u^i(T) = g^i``::

    -∂_t u^i - σ Σ_j ∂_jj u^i - β Σ_jk ∂_jk u^i + H^i(x^i, D_i u^i)
        + Σ_{j≠i} D_pH^j(x^j, D_j u^j) D_j u^i = f^i

Time stepping is Crank–Nicolson in delta form.  The σ-diffusion is factored
per axis (one tridiagonal solve per axis, approximate factorisation keeps
second order), while the Hamiltonian, the transport coupling and the β cross
diffusion are explicit inside a per-step Picard loop: every sweep freezes the
drifts ``b^j = D_pH^j(x^j, D_j v^j)`` of the current iterate ``v`` and solves
a linear parabolic step, which is the fixed-point map of the classical
short-time existence argument restarted at every Δt.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_banded

from .grid import Field, TensorGrid, d1, diffusion_array
from .model import NashProblem

logger = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "SolverError",
    "PicardNonConvergence",
    "NashSolution",
    "solve_nash",
    "pde_residual",
    "sample_costs",
]


class SolverError(RuntimeError):
    """Raised when a solve produces non-finite values or cannot proceed."""


class PicardNonConvergence(SolverError):
    def __init__(self, step: int, residual: float, iterations: int):
        super().__init__(
            f"Picard iteration did not converge at step {step} "
            f"after {iterations} iterations (last residual {residual:.3e})"
        )
        self.step = step
        self.residual = residual
        self.iterations = iterations


@dataclass
class SolverConfig:
    """Time stepping and fixed-point controls.

    ``boundary`` selects the ghost-node closure of the implicit diffusion:
    ``"quadratic"`` (second derivative copied from the neighbouring node, the
    default) or ``"linear"`` (second derivative zero at the boundary).  The
    linear closure leaves an O(1) boundary error that leaks into the window
    and does not shrink under refinement unless the data are affine.
    ``store_every`` keeps every k-th time level; ``None`` picks the smallest
    divisor of ``time_steps`` that fits ``storage_budget`` floats.
    """

    time_steps: int = 200
    picard_tol: float = 1e-9
    picard_max_iters: int = 50
    damping: float = 1.0
    boundary: str = "quadratic"
    store_every: int | None = None
    cfl: float = 0.5
    storage_budget: int = 25_000_000
    stall_window: int = 5

    def __post_init__(self):
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.boundary not in ("linear", "quadratic"):
            raise ValueError(f"unknown boundary closure {self.boundary!r}")

    def stride(self, N: int, grid: TensorGrid) -> int:
        if self.store_every is not None:
            if self.time_steps % self.store_every:
                raise ValueError("store_every must divide time_steps")
            return self.store_every
        per_level = N * grid.size
        K = self.time_steps
        for s in range(1, K + 1):
            if K % s == 0 and (K // s + 1) * per_level <= self.storage_budget:
                return s
        return K


def sample_costs(problem: NashProblem, grid: TensorGrid) -> tuple[np.ndarray, np.ndarray]:
    """``f^i``, ``g^i`` on every node, each of shape ``(N,) + grid.shape``."""
    pts = grid.points()
    f = problem.costs.f_values(pts).T.reshape((problem.N,) + grid.shape)
    g = problem.costs.g_values(pts).T.reshape((problem.N,) + grid.shape)
    return np.ascontiguousarray(f), np.ascontiguousarray(g)


# ---------------------------------------------------------------- operators


class _Operators:
    """Discrete operators of the scheme for one problem on one grid."""

    def __init__(self, problem: NashProblem, grid: TensorGrid, f: np.ndarray, boundary: str):
        self.problem = problem
        self.grid = grid
        self.N = problem.N
        self.h = grid.h
        self.f = f
        self.boundary = boundary
        self.x = [np.broadcast_to(grid.axis_coords(j), grid.shape) for j in range(self.N)]
        self.hams = problem.hamiltonians
        self._factors: dict[float, np.ndarray] = {}

    def grads(self, U):
        return [[d1(U[i], self.h, j) for j in range(self.N)] for i in range(self.N)]

    def own_grads(self, U):
        return [d1(U[j], self.h, j) for j in range(self.N)]

    def drifts(self, own):
        return [self.hams[j].dp(self.x[j], own[j]) for j in range(self.N)]

    def nonlinear(self, U, G=None):
        """``-H^i(x^i, D_i u^i) - Σ_{j≠i} b^j D_j u^i + f^i`` for every i."""
        G = self.grads(U) if G is None else G
        b = self.drifts([G[j][j] for j in range(self.N)])
        out = np.empty_like(U)
        for i in range(self.N):
            acc = self.f[i] - self.hams[i].h(self.x[i], G[i][i])
            for j in range(self.N):
                if j != i:
                    acc = acc - b[j] * G[i][j]
            out[i] = acc
        return out, b

    def d2_axis(self, u, axis):
        """Second difference with the solver's boundary closure."""
        u = np.moveaxis(u, axis, 0)
        out = np.empty_like(u)
        out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (self.h * self.h)
        if self.boundary == "linear":
            out[0] = 0.0
            out[-1] = 0.0
        else:
            out[0] = out[1]
            out[-1] = out[-2]
        return np.moveaxis(out, 0, axis)

    def laplacian(self, u):
        acc = np.zeros_like(u)
        for j in range(self.N):
            acc += self.d2_axis(u, j)
        return acc

    def boundary_part(self, u):
        """Boundary-node share of the closure (zero for the linear closure)."""
        if self.boundary == "linear":
            return None
        acc = np.zeros_like(u)
        inv_h2 = 1.0 / (self.h * self.h)
        for j in range(self.N):
            v = np.moveaxis(u, j, 0)
            a = np.moveaxis(acc, j, 0)
            a[0] += (v[0] - 2.0 * v[1] + v[2]) * inv_h2
            a[-1] += (v[-1] - 2.0 * v[-2] + v[-3]) * inv_h2
        return acc

    def cross_diffusion(self, u, Gi):
        """``Σ_jk ∂_jk u`` (full β operator, treated explicitly)."""
        acc = np.zeros_like(u)
        for j in range(self.N):
            acc += self.d2_axis(u, j)
            for k in range(self.N):
                if k != j:
                    acc += d1(Gi[j], self.h, k)
        return acc

    def _factor(self, coef: float) -> np.ndarray:
        """Inverse of ``I - coef h^2 D_jj`` with identity boundary rows.

        The matrix is tridiagonal and strictly diagonally dominant; with at
        most a few dozen nodes per axis a dense inverse applied by matmul is
        cheaper than repeated banded factorisations.
        """
        inv = self._factors.get(coef)
        if inv is None:
            n = self.grid.n
            ab = np.zeros((3, n))
            ab[0, 2:] = -coef
            ab[1, :] = 1.0 + 2.0 * coef
            ab[2, :-2] = -coef
            ab[1, 0] = ab[1, -1] = 1.0
            inv = solve_banded((1, 1), ab, np.eye(n))
            self._factors[coef] = inv
        return inv

    def adi_solve(self, rhs, coef: float):
        """Apply ``Π_j (I - coef h^2 D_jj)^{-1}`` to one player's array."""
        if coef == 0.0:
            return rhs
        inv = self._factor(coef)
        out = rhs
        # contracting the leading axis and appending the result cycles the
        # axes, so after N passes they are back in their original order
        for _ in range(self.N):
            out = np.tensordot(out, inv, axes=([0], [1]))
        return out


# ---------------------------------------------------------------- solution


@dataclass
class NashSolution:
    problem: NashProblem
    grid: TensorGrid
    config: SolverConfig
    fields: list[Field]
    f_grid: np.ndarray
    g_grid: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.problem.N

    @property
    def times(self) -> np.ndarray:
        return self.fields[0].times

    def values(self, k: int) -> np.ndarray:
        """All players' values at stored level ``k``, shape ``(N,) + grid.shape``."""
        return np.stack([fld.values[k] for fld in self.fields])

    def gradient(self, k: int, i: int, j: int) -> np.ndarray:
        return d1(self.fields[i].values[k], self.grid.h, j)

    def drift(self, k: int) -> np.ndarray:
        """``D_pH^j(x^j, D_j u^j)`` at stored level ``k``, shape ``(N,) + grid.shape``."""
        cache = self.__dict__.setdefault("_drift_cache", {})
        if k not in cache:
            out = np.empty((self.N,) + self.grid.shape)
            for j, ham in enumerate(self.problem.hamiltonians):
                x = np.broadcast_to(self.grid.axis_coords(j), self.grid.shape)
                out[j] = ham.dp(x, self.gradient(k, j, j))
            if len(cache) > 4:
                cache.pop(next(iter(cache)))
            cache[k] = out
        return cache[k]

    @cached_property
    def drift_fields(self) -> list[Field]:
        """Per-player drift fields over all stored levels."""
        levels = [self.drift(k) for k in range(len(self.times))]
        return [
            Field(self.grid, self.times, np.stack([lv[j] for lv in levels]))
            for j in range(self.N)
        ]


def solve_nash(problem: NashProblem, grid: TensorGrid | None = None,
               cfg: SolverConfig | None = None) -> NashSolution:
    """Solve the Nash system backwards on ``grid``; see module docstring."""
    cfg = cfg or SolverConfig()
    grid = grid or TensorGrid(problem.N)
    if grid.N != problem.N:
        raise ValueError(f"grid has {grid.N} axes but the problem has N={problem.N}")
    N, K = problem.N, cfg.time_steps
    sigma, beta = problem.sigma, problem.beta
    dt = problem.T / K
    f, g = sample_costs(problem, grid)
    ops = _Operators(problem, grid, f, cfg.boundary)
    stride = cfg.stride(N, grid)
    n_store = K // stride + 1
    store = np.empty((n_store, N) + grid.shape)
    store[-1] = g
    iters = np.zeros(K, dtype=int)
    resid = np.zeros(K)
    substeps = np.ones(K, dtype=int)
    damped = np.zeros(K, dtype=bool)

    U = g.copy()
    G = ops.grads(U)
    for step in range(K - 1, -1, -1):
        drifts = ops.drifts([G[j][j] for j in range(N)])
        bmax = max(float(np.max(np.abs(b))) for b in drifts)
        m = max(1, math.ceil(dt * bmax / (cfg.cfl * grid.h) - 1e-12))
        sub_dt = dt / m
        for _ in range(m):
            U, G, it, res, was_damped = _cn_step(U, G, sub_dt, ops, cfg, sigma, beta, step)
            iters[step] += it
            resid[step] = max(resid[step], res)
            damped[step] |= was_damped
        substeps[step] = m
        if step % stride == 0:
            store[step // stride] = U
    times = np.linspace(0.0, problem.T, K + 1)[::stride]
    fields = [Field(grid, times, store[:, i].copy()) for i in range(N)]
    diagnostics = {
        "picard_iterations": iters,
        "picard_residual": resid,
        "substeps": substeps,
        "damped": damped,
        "dt": dt,
        "stride": stride,
    }
    logger.info(
        "solved N=%d on n=%d with K=%d: max Picard iterations %d, max substeps %d",
        N, grid.n, K, int(iters.max(initial=0)), int(substeps.max(initial=1)),
    )
    return NashSolution(problem, grid, cfg, fields, f, g, diagnostics)


def _cn_step(u_next, G_next, dt, ops: _Operators, cfg: SolverConfig, sigma, beta, step):
    N = ops.N
    N_next, _ = ops.nonlinear(u_next, G_next)
    base = np.empty_like(u_next)
    for i in range(N):
        lap = sigma * ops.laplacian(u_next[i])
        base[i] = dt * (lap + 0.5 * N_next[i])
        if beta:
            base[i] += 0.5 * dt * beta * ops.cross_diffusion(u_next[i], G_next[i])
    coef = 0.5 * dt * sigma / (ops.h * ops.h)

    V = u_next
    G = G_next
    b_prev = [G[j][j] for j in range(N)]
    b_prev = ops.drifts(b_prev)
    history: list[float] = []
    theta = 1.0
    res = np.inf
    for it in range(1, cfg.picard_max_iters + 1):
        NV, _ = (N_next, None) if V is u_next else ops.nonlinear(V, G)
        V_new = np.empty_like(u_next)
        for i in range(N):
            rhs = base[i] + 0.5 * dt * NV[i]
            if beta:
                rhs = rhs + 0.5 * dt * beta * ops.cross_diffusion(V[i], G[i])
            if ops.boundary != "linear" and V is not u_next:
                rhs = rhs + 0.5 * dt * sigma * ops.boundary_part(V[i] - u_next[i])
            V_new[i] = u_next[i] + ops.adi_solve(rhs, coef)
        if theta < 1.0:
            V_new = (1.0 - theta) * V + theta * V_new
        if not np.all(np.isfinite(V_new)):
            raise SolverError(f"non-finite values at step {step} (Picard iteration {it})")
        G_new = ops.grads(V_new)
        b_new = ops.drifts([G_new[j][j] for j in range(N)])
        res = max(
            max(float(np.max(np.abs(bn - bp))) for bn, bp in zip(b_new, b_prev)),
            float(np.max(np.abs(V_new - V))),
        )
        V, G, b_prev = V_new, G_new, b_new
        history.append(res)
        if res <= cfg.picard_tol:
            return V, G, it, res, theta < 1.0
        w = cfg.stall_window
        if theta == 1.0 and len(history) >= w and not np.all(np.diff(history[-w:]) < 0):
            theta = cfg.damping if cfg.damping < 1.0 else 0.5
            logger.debug("step %d: Picard stalled, damping with theta=%g", step, theta)
    raise PicardNonConvergence(step, res, cfg.picard_max_iters)


# ---------------------------------------------------------------- diagnostics


def pde_residual(solution: NashSolution, problem: NashProblem | None = None,
                 window: float = 0.5) -> tuple[np.ndarray, float]:
    """Max PDE residual over interior-window nodes and interior stored levels.

    Time derivatives are central differences between neighbouring stored
    levels; spatial derivatives use the grid module's stencils.  Returns the
    per-player maxima and the overall maximum.
    """
    problem = problem or solution.problem
    grid = solution.grid
    N = problem.N
    times = solution.times
    win = grid.window_slices(window)
    per = np.zeros(N)
    if len(times) < 3:
        return per, 0.0
    x = [np.broadcast_to(grid.axis_coords(j), grid.shape) for j in range(N)]
    hams = problem.hamiltonians
    for k in range(1, len(times) - 1):
        U = solution.values(k)
        dt2 = times[k + 1] - times[k - 1]
        G = [[d1(U[i], grid.h, j) for j in range(N)] for i in range(N)]
        b = [hams[j].dp(x[j], G[j][j]) for j in range(N)]
        for i in range(N):
            dtu = (solution.fields[i].values[k + 1] - solution.fields[i].values[k - 1]) / dt2
            diffusion = diffusion_array(U[i], grid.h, problem.sigma, problem.beta)
            r = -dtu - diffusion + hams[i].h(x[i], G[i][i]) - solution.f_grid[i]
            for j in range(N):
                if j != i:
                    r = r + b[j] * G[i][j]
            per[i] = max(per[i], float(np.max(np.abs(r[win]))))
    return per, float(per.max())
