"""Closed-loop particle simulation, synchronous couplings and 1-d Wasserstein distances.

Player i follows::

    dX^i = -D_pH^i(X^i, D_i u^i(t, X)) dt + sqrt(2 σ) dB^i + sqrt(2 β) dW

discretised by Euler–Maruyama.  Gaussian increments come from a
counter-based generator keyed by ``(seed, step, stream)`` with the element
index ``path * width + player``, so the increment seen by a given path,
step and player does not depend on how many paths are simulated.  Two runs
with the same seed therefore share their Brownian paths exactly, which is
what synchronous couplings need.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .grid import interp_space, time_bracket
from .model import EmpiricalMeasure

__all__ = [
    "EmpiricalMeasure",
    "SimConfig",
    "Ensemble",
    "NashFeedback",
    "gaussian_block",
    "uniform_block",
    "simulate",
    "simulate_closed_loop",
    "CouplingResult",
    "synchronous_coupling",
    "wasserstein_1d",
    "ChaosGap",
    "chaos_gap",
]

# noise streams; initial samples use their own stream so they never alias increments
STREAM_IDIOSYNCRATIC = 0
STREAM_COMMON = 1
STREAM_INITIAL = 2

_U53 = 1.0 / 9007199254740992.0  # 2^-53


def uniform_block(seed: int, step: int, stream: int, count: int) -> np.ndarray:
    """``count`` uniforms in (0, 1) for one ``(seed, step, stream)`` counter block."""
    bg = np.random.Philox(key=int(seed) & (2**64 - 1), counter=[0, int(step), int(stream), 0])
    raw = bg.random_raw(count)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def gaussian_block(seed: int, step: int, stream: int, paths: int, width: int) -> np.ndarray:
    """Standard normals of shape ``(paths, width)``; entry ``[p, j]`` has index ``p*width + j``."""
    return ndtri(uniform_block(seed, step, stream, paths * width)).reshape(paths, width)


@dataclass
class SimConfig:
    """Euler–Maruyama controls.

    ``steps=None`` uses the time grid of the solution being simulated.
    ``sigma``/``beta`` override the problem's diffusion (``sigma=0`` gives
    the deterministic test mode).  With ``beta_shared`` the β increment is
    one common draw per path; otherwise each player draws its own.
    """

    steps: int | None = None
    paths: int = 4096
    seed: int = 0
    beta_shared: bool = True
    sigma: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class Ensemble:
    """Trajectories ``[path, time, player]`` with per-path exit flags."""

    times: np.ndarray
    paths: np.ndarray
    exit_flags: np.ndarray
    L: float = math.inf
    meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.paths.shape[0]

    @property
    def N(self) -> int:
        return self.paths.shape[2]

    def at(self, k: int) -> np.ndarray:
        return self.paths[:, k, :]

    def mean(self, exclude_exited: bool = False) -> np.ndarray:
        """Sample mean over paths, shape ``(times, N)``."""
        P = self.paths[~self.exit_flags] if exclude_exited else self.paths
        return P.mean(axis=0)

    def to_csv(self, path: str | Path) -> None:
        """One row per (path, time): ``path, t, x1, ..., xN``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "t"] + [f"x{j + 1}" for j in range(self.N)])
            for p in range(self.count):
                for k, t in enumerate(self.times):
                    w.writerow([p, repr(float(t))] + [repr(float(v)) for v in self.paths[p, k]])


class NashFeedback:
    """Closed-loop drift ``-D_pH^j(x^j, D_j u^j(t, x))`` read off a solved Nash system.

    Own gradients are formed per stored level on first use; evaluation is
    linear in time between stored levels and multilinear in space, with
    points outside the box clamped.
    """

    def __init__(self, solution):
        self.solution = solution
        self.grid = solution.grid
        self.N = solution.N
        self.hams = solution.problem.hamiltonians
        self._own: dict[int, np.ndarray] = {}

    def _own_grad(self, k: int) -> np.ndarray:
        if k not in self._own:
            sol = self.solution
            self._own[k] = np.stack(
                [sol.gradient(k, j, j) for j in range(self.N)], axis=-1
            )
        return self._own[k]

    def own_gradient(self, t: float, X: np.ndarray) -> np.ndarray:
        k0, k1, w = time_bracket(self.solution.times, t)
        p, _ = interp_space(self.grid, self._own_grad(k0), X)
        if k1 != k0 and w > 0.0:
            p1, _ = interp_space(self.grid, self._own_grad(k1), X)
            p = (1.0 - w) * p + w * p1
        return p

    def __call__(self, t: float, X: np.ndarray) -> np.ndarray:
        Xc = np.clip(X, -self.grid.L, self.grid.L)
        p = self.own_gradient(t, Xc)
        return -np.stack([self.hams[j].dp(Xc[:, j], p[:, j]) for j in range(self.N)], axis=-1)


def simulate(drift: Callable[[float, np.ndarray], np.ndarray], x0, T: float, steps: int,
             sigma: float, beta: float = 0.0, *, paths: int = 4096, seed: int = 0,
             beta_shared: bool = True, L: float = math.inf) -> Ensemble:
    """Euler–Maruyama for ``dX = drift(t, X) dt + sqrt(2σ) dB + sqrt(2β) dW``.

    ``x0`` is one configuration ``(N,)`` or one per path ``(paths, N)``.
    """
    x0 = np.asarray(x0, dtype=float)
    X = np.broadcast_to(x0, (paths, x0.shape[-1])).copy()
    N = X.shape[1]
    dt = T / steps
    out = np.empty((paths, steps + 1, N))
    out[:, 0] = X
    s_idio = math.sqrt(2.0 * sigma * dt) if sigma > 0 else 0.0
    s_comm = math.sqrt(2.0 * beta * dt) if beta > 0 else 0.0
    for k in range(steps):
        inc = drift(k * dt, X) * dt
        if s_idio:
            inc = inc + s_idio * gaussian_block(seed, k, STREAM_IDIOSYNCRATIC, paths, N)
        if s_comm:
            width = 1 if beta_shared else N
            inc = inc + s_comm * gaussian_block(seed, k, STREAM_COMMON, paths, width)
        X = X + inc
        out[:, k + 1] = X
    exited = np.any(np.abs(out) > L, axis=(1, 2))
    times = np.linspace(0.0, T, steps + 1)
    return Ensemble(times, out, exited, L, {"seed": int(seed), "sigma": sigma, "beta": beta})


def _steps_for(solution, cfg: SimConfig) -> int:
    if cfg.steps is not None:
        return cfg.steps
    return int(solution.config.time_steps)


def simulate_closed_loop(solution, x0, cfg: SimConfig | None = None) -> Ensemble:
    """Simulate the N players under the feedback of a solved Nash system."""
    cfg = cfg or SimConfig()
    prob = solution.problem
    x0 = np.asarray(x0, dtype=float)
    if np.any(np.abs(x0) > solution.grid.L):
        raise ValueError("x0 must lie inside the computational box")
    sigma = prob.sigma if cfg.sigma is None else cfg.sigma
    beta = prob.beta if cfg.beta is None else cfg.beta
    return simulate(
        NashFeedback(solution), x0, prob.T, _steps_for(solution, cfg), sigma, beta,
        paths=cfg.paths, seed=cfg.seed, beta_shared=cfg.beta_shared, L=solution.grid.L,
    )


# ---------------------------------------------------------------- coupling


@dataclass
class CouplingResult:
    """Monte Carlo ``E|X_t - Y_t|^2`` and its ratio to the Gronwall bound."""

    times: np.ndarray
    msd: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    ratio: np.ndarray
    ratio_se: np.ndarray
    M_hyp: float
    exited: int

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratio))

    @property
    def passed(self) -> bool:
        return bool(np.all(self.ratio <= 1.0 + 3.0 * self.ratio_se))

    def as_dict(self) -> dict:
        return {
            "times": self.times.tolist(), "msd": self.msd.tolist(),
            "stderr": self.stderr.tolist(), "bound": self.bound.tolist(),
            "ratio": self.ratio.tolist(), "M_hyp": self.M_hyp,
            "max_ratio": self.max_ratio, "passed": self.passed, "exited": self.exited,
        }


def synchronous_coupling(source, x0, y0, M_hyp: float, cfg: SimConfig | None = None, *,
                         T: float | None = None, sigma: float | None = None,
                         beta: float | None = None) -> CouplingResult:
    """Two copies from ``x0`` and ``y0`` driven by identical noise.

    ``source`` is a solved Nash system or a drift callable ``(t, X) -> (P, N)``;
    for a callable, ``T``, ``sigma`` and ``beta`` must be given (``cfg.steps``
    is then required too).
    """
    cfg = cfg or SimConfig()
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if callable(source) and not hasattr(source, "problem"):
        if T is None or cfg.steps is None:
            raise ValueError("a drift callable needs T and cfg.steps")
        drift, steps, L = source, cfg.steps, math.inf
        sig = sigma if sigma is not None else (cfg.sigma or 0.0)
        bet = beta if beta is not None else (cfg.beta or 0.0)
    else:
        prob = source.problem
        drift, steps, L, T = NashFeedback(source), _steps_for(source, cfg), source.grid.L, prob.T
        sig = prob.sigma if cfg.sigma is None else cfg.sigma
        bet = prob.beta if cfg.beta is None else cfg.beta
    kw = dict(paths=cfg.paths, seed=cfg.seed, beta_shared=cfg.beta_shared, L=L)
    ex = simulate(drift, x0, T, steps, sig, bet, **kw)
    ey = simulate(drift, y0, T, steps, sig, bet, **kw)
    sq = np.sum((ex.paths - ey.paths) ** 2, axis=2)  # (paths, times)
    msd = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(cfg.paths) if cfg.paths > 1 else np.zeros_like(msd)
    d0 = float(np.sum((x0 - y0) ** 2))
    bound = d0 * np.exp(2.0 * M_hyp * ex.times)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, msd / bound, 0.0)
        ratio_se = np.where(bound > 0, se / bound, 0.0)
    exited = int(np.sum(ex.exit_flags | ey.exit_flags))
    return CouplingResult(ex.times, msd, se, bound, ratio, ratio_se, float(M_hyp), exited)


# ---------------------------------------------------------------- Wasserstein


def _as_measure(m) -> EmpiricalMeasure:
    if isinstance(m, EmpiricalMeasure):
        return m
    return EmpiricalMeasure(np.asarray(m, dtype=float).reshape(-1))


def wasserstein_1d(p: int, mu, nu) -> float:
    """``W_p`` between two 1-d atomic measures via their quantile functions.

    ``W_p^p = ∫_0^1 |F_mu^{-1}(s) - F_nu^{-1}(s)|^p ds``; both quantile
    functions are step functions, so the integral is an exact finite sum over
    the merged breakpoints.  For equal atom counts and weights this is the
    sorted matching.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.count == 0 or nu.count == 0:
        raise ValueError("Wasserstein distance of an empty measure")
    if mu.atoms.ndim != 1 or nu.atoms.ndim != 1:
        raise ValueError("wasserstein_1d takes a single measure with scalar atoms on each side")
    xa, wa = _sorted(mu)
    xb, wb = _sorted(nu)
    if len(xa) == len(xb) and np.array_equal(wa, wb) and np.allclose(wa, wa[0]):
        cost = np.abs(xa - xb) ** p
        return float(np.mean(cost) ** (1.0 / p))
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    cuts = np.union1d(ca, cb)
    lo = np.concatenate([[0.0], cuts[:-1]])
    mid = 0.5 * (lo + cuts)
    ia = np.minimum(np.searchsorted(ca, mid), len(xa) - 1)
    ib = np.minimum(np.searchsorted(cb, mid), len(xb) - 1)
    cost = np.sum((cuts - lo) * np.abs(xa[ia] - xb[ib]) ** p)
    return float(cost ** (1.0 / p))


def _sorted(m: EmpiricalMeasure) -> tuple[np.ndarray, np.ndarray]:
    x = m.atoms
    w = np.broadcast_to(m._w(), x.shape)
    order = np.argsort(x, kind="stable")
    return x[order], w[order] / w.sum()


# ---------------------------------------------------------------- propagation of chaos


@dataclass
class ChaosGap:
    """``max_i E[sup_t |X~^i_t - X^i_t|^2]`` with and without exited paths."""

    gap: float
    gap_kept: float
    per_player: np.ndarray
    stderr: float
    exited: int
    N: int

    def as_dict(self) -> dict:
        return {
            "N": self.N, "gap": self.gap, "gap_kept": self.gap_kept,
            "per_player": self.per_player.tolist(), "stderr": self.stderr,
            "exited": self.exited,
        }


def sample_density(x: np.ndarray, m: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF samples of a grid density (piecewise linear CDF) at uniforms ``u``."""
    cell = 0.5 * (m[1:] + m[:-1]) * np.diff(x)
    cdf = np.concatenate([[0.0], np.cumsum(cell)])
    cdf /= cdf[-1]
    return np.interp(u, cdf, x)


def chaos_gap(solution_N, mfg, x0_law=None, cfg: SimConfig | None = None) -> ChaosGap:
    """Gap between N-player closed-loop paths and McKean–Vlasov paths.

    Both systems start from the same samples and use the same increments.
    The limit drift of a player with label index ``l`` is
    ``-∂_x u^l(t, x)`` read off the solved MFG.  ``x0_law`` maps an array of
    uniforms ``(paths, N)`` to initial positions; by default each player is
    drawn from its label's initial density.
    """
    cfg = cfg or SimConfig()
    prob = solution_N.problem
    if prob.beta != 0.0 or (cfg.beta or 0.0) != 0.0:
        raise ValueError("chaos_gap supports beta = 0 only")
    N = prob.N
    labels = list(prob.costs.labels) if prob.costs.labels is not None else [0.0] * N
    lab_idx = [mfg.label_index(lam) for lam in labels]
    u = uniform_block(cfg.seed, 0, STREAM_INITIAL, cfg.paths * N).reshape(cfg.paths, N)
    if x0_law is None:
        X0 = np.empty_like(u)
        for i, l in enumerate(lab_idx):
            X0[:, i] = sample_density(mfg.x, mfg.m0[l], u[:, i])
    else:
        X0 = np.asarray(x0_law(u), dtype=float)
    sigma = prob.sigma if cfg.sigma is None else cfg.sigma
    steps = _steps_for(solution_N, cfg)
    kw = dict(paths=cfg.paths, seed=cfg.seed, L=solution_N.grid.L)
    nash = simulate(NashFeedback(solution_N), X0, prob.T, steps, sigma, 0.0, **kw)

    def mv_drift(t, X):
        return -np.stack([mfg.drift(l, t, X[:, i]) for i, l in enumerate(lab_idx)], axis=-1)

    mv = simulate(mv_drift, X0, prob.T, steps, sigma, 0.0, **kw)
    sup = np.max((nash.paths - mv.paths) ** 2, axis=1)  # (paths, N)
    per = sup.mean(axis=0)
    i_star = int(np.argmax(per))
    keep = ~(nash.exit_flags | mv.exit_flags)
    gap_kept = float(np.max(sup[keep].mean(axis=0))) if keep.any() else math.nan
    se = float(sup[:, i_star].std(ddof=1) / math.sqrt(cfg.paths)) if cfg.paths > 1 else 0.0
    return ChaosGap(float(per[i_star]), gap_kept, per, se, int((~keep).sum()), N)
