"""Monotonicity calculus, semimonotonicity margins and derivative-scaling diagnostics.

For a vector function ``h = (h^1, ..., h^N)`` of ``x in R^N`` (one scalar
state per player) the two four-point quantities are::

    D[h](x, y) = Σ_i (D_i h^i(x) - D_i h^i(y)) (x^i - y^i)
    L[h](x, y) = Σ_i (h^i(x) - h^i(x^{-i}, y^i) - h^i(y^{-i}, x^i) + h^i(y))

``h`` is M-D-semimonotone when ``D[h] >= -M |x-y|^2`` for all pairs, which
for C^2 data is the block condition ``sym(D_ij h^i) >= -M I``.  Margins
reported here are sampled minima, not certified bounds.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .grid import Field, TensorGrid, d1, d2, dual_weighted_norm, interp_space
from .model import CostFamily, HamiltonianSpec

__all__ = [
    "MODES",
    "d_operator",
    "l_operator",
    "swap_coordinate",
    "block_matrices",
    "block_margin_of",
    "diag_margin_of",
    "PairSampler",
    "SemimonotonicityReport",
    "semimonotonicity_scan",
    "propagation_thresholds",
    "DerivativeScalingReport",
    "ScalingSweep",
    "scaling_report",
    "HolderResult",
    "time_holder_check",
]

MODES = ("D", "L", "diag", "block", "drift_osl")


# ---------------------------------------------------------------- operators


def swap_coordinate(x: np.ndarray, y: np.ndarray, i: int) -> np.ndarray:
    """The configuration ``(x^{-i}, y^i)``: ``x`` with coordinate ``i`` from ``y``."""
    out = np.array(x, dtype=float, copy=True)
    out[..., i] = np.asarray(y, dtype=float)[..., i]
    return out


def d_operator(own_grad: Callable[[np.ndarray], np.ndarray], x, y) -> np.ndarray | float:
    """``D[h](x, y)`` for batched pairs.

    ``own_grad`` maps configurations ``(M, N)`` to ``(M, N)`` with entry
    ``[m, i] = D_i h^i(x_m)``.  ``x`` and ``y`` are ``(N,)`` or ``(M, N)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = x.ndim == 1
    X, Y = np.atleast_2d(x), np.atleast_2d(y)
    out = np.sum((own_grad(X) - own_grad(Y)) * (X - Y), axis=-1)
    return float(out[0]) if single else out


def l_operator(values: Callable[[np.ndarray], np.ndarray], x, y) -> np.ndarray | float:
    """``L[h](x, y)`` for batched pairs; ``values`` maps ``(M, N)`` to ``h^i`` values ``(M, N)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = x.ndim == 1
    X, Y = np.atleast_2d(x), np.atleast_2d(y)
    N = X.shape[1]
    hx, hy = values(X), values(Y)
    out = np.zeros(X.shape[0])
    for i in range(N):
        hxy = values(swap_coordinate(X, Y, i))[:, i]
        hyx = values(swap_coordinate(Y, X, i))[:, i]
        out += hx[:, i] - hxy - hyx + hy[:, i]
    return float(out[0]) if single else out


def block_matrices(hess: np.ndarray) -> np.ndarray:
    """``[..., i, j] = D_ij h^i`` from Hessians ``[..., i, j, k] = D_jk h^i``."""
    N = hess.shape[-1]
    idx = np.arange(N)
    return hess[..., idx, idx, :]


def block_margin_of(blocks: np.ndarray) -> float:
    """Min eigenvalue of the symmetrised block matrices (last two axes)."""
    sym = 0.5 * (blocks + np.swapaxes(blocks, -1, -2))
    return float(np.min(np.linalg.eigvalsh(sym)))


def diag_margin_of(blocks: np.ndarray) -> float:
    """Min over players of ``D_ii h^i`` (``d = 1`` makes each block a scalar)."""
    return float(np.min(np.diagonal(blocks, axis1=-2, axis2=-1)))


def propagation_thresholds(T: float, gamma: float = 0.0) -> dict[str, float]:
    """Closed-form defaults for the data and propagated margins.

    ``M_g*``, ``M_f*`` bound the admissible D-semimonotonicity of ``g`` and
    ``f``; ``M*`` is the margin that then holds for all times.  The ``kappa``
    entries are the L-case counterparts given a diagonal bound ``gamma``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    e = math.e
    return {
        "M_g": 1.0 / (12.0 * e * T),
        "M_f": 1.0 / (12.0 * e * T * T),
        "M": 1.0 / (2.0 * T),
        "kappa_g": 1.0 / (12.0 * T * math.exp(2.0 * gamma * T + 1.0)),
        "kappa_f": 1.0 / (12.0 * T * T * math.exp(2.0 * gamma * T + 1.0)),
        "kappa": 1.0 / (2.0 * T),
    }


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class PairSampler:
    """Uniform pairs in the box ``[-half_width, half_width]^N``.

    Pairs closer than ``min_separation`` are rejected and redrawn.  The
    stream depends only on ``seed`` and ``N``.
    """

    count: int = 2000
    seed: int = 42
    half_width: float = 1.5
    min_separation: float = 1e-6

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    @classmethod
    def for_grid(cls, grid: TensorGrid, frac: float = 0.5, **kw) -> "PairSampler":
        return cls(half_width=frac * grid.L, **kw)

    def sample(self, N: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.seed, N])
        a = self.half_width
        xs, ys, have = [], [], 0
        while have < self.count:
            x = rng.uniform(-a, a, size=(self.count, N))
            y = rng.uniform(-a, a, size=(self.count, N))
            keep = np.linalg.norm(x - y, axis=1) >= self.min_separation
            xs.append(x[keep])
            ys.append(y[keep])
            have += int(keep.sum())
        return np.concatenate(xs)[: self.count], np.concatenate(ys)[: self.count]


# ---------------------------------------------------------------- reports


@dataclass
class SemimonotonicityReport:
    """Per-time margins; modes that were not requested hold NaN."""

    times: np.ndarray
    d_margin: np.ndarray
    l_margin: np.ndarray
    diag_margin: np.ndarray
    block_margin: np.ndarray
    drift_osl_margin: np.ndarray
    source: str = ""
    pairs: int = 0

    def minimum(self, name: str) -> float:
        vals = np.asarray(getattr(self, name))
        return float(np.nanmin(vals)) if np.any(np.isfinite(vals)) else math.nan

    def records(self) -> list[dict]:
        keys = ("d_margin", "l_margin", "diag_margin", "block_margin", "drift_osl_margin")
        out = []
        for k, t in enumerate(self.times):
            rec = {"t": float(t)}
            for key in keys:
                v = float(getattr(self, key)[k])
                rec[key] = None if math.isnan(v) else v
            out.append(rec)
        return out

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(
            {"source": self.source, "pairs": self.pairs, "levels": self.records()},
            sort_keys=True, indent=1,
        )
        if path is not None:
            Path(path).write_text(text)
        return text


def _modes(mode) -> tuple[str, ...]:
    if mode is None or mode == "all":
        return MODES
    modes = (mode,) if isinstance(mode, str) else tuple(mode)
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}; expected one of {MODES}")
    return modes


def _pair_margin(values: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.min(values / np.sum((x - y) ** 2, axis=-1)))


def _quadratic_hams(N: int) -> list[HamiltonianSpec]:
    return [HamiltonianSpec() for _ in range(N)]


def semimonotonicity_scan(obj, sampler: PairSampler | None = None, mode="all", *,
                          which: str = "g", hamiltonians=None, window: float = 0.5,
                          levels: Iterable[int] | None = None,
                          nodes: np.ndarray | None = None) -> SemimonotonicityReport:
    """Margins of a Nash solution (per stored level) or a cost family (once).

    For a :class:`CostFamily`, ``which`` picks ``"f"`` or ``"g"``; block and
    diagonal margins use the analytic Hessians at ``nodes`` (defaults to the
    sampled pair endpoints) and the drift margin uses ``D_pH^i(x^i, D_i h^i)``.
    For a solution, block/diag margins use grid second differences over the
    interior window and pair modes interpolate the stored fields.
    """
    modes = _modes(mode)
    if isinstance(obj, CostFamily):
        return _scan_costs(obj, sampler or PairSampler(), modes, which, hamiltonians, nodes)
    return _scan_solution(obj, sampler, modes, window, levels)


def _scan_costs(costs: CostFamily, sampler, modes, which, hamiltonians, nodes):
    if which not in ("f", "g"):
        raise ValueError("which must be 'f' or 'g'")
    N = costs.N
    x, y = sampler.sample(N)
    if len(x) == 0:
        raise ValueError("empty sample set")
    vals = costs.f_values if which == "f" else costs.g_values
    grad = costs.f_grad_values if which == "f" else costs.g_grad_values
    hess = costs.f_hess_values if which == "f" else costs.g_hess_values
    hams = list(hamiltonians) if hamiltonians is not None else _quadratic_hams(N)
    idx = np.arange(N)

    def own(X):
        return grad(X)[:, idx, idx]

    out = {m: math.nan for m in MODES}
    if "D" in modes:
        out["D"] = _pair_margin(d_operator(own, x, y), x, y)
    if "L" in modes:
        out["L"] = _pair_margin(l_operator(vals, x, y), x, y)
    if "block" in modes or "diag" in modes:
        pts = np.concatenate([x, y]) if nodes is None else np.atleast_2d(nodes)
        blocks = block_matrices(hess(pts))
        if "block" in modes:
            out["block"] = block_margin_of(blocks)
        if "diag" in modes:
            out["diag"] = diag_margin_of(blocks)
    if "drift_osl" in modes:
        def drift(X):
            G = own(X)
            return np.stack([hams[i].dp(X[:, i], G[:, i]) for i in range(N)], axis=-1)
        out["drift_osl"] = _pair_margin(d_operator(drift, x, y), x, y)
    one = lambda m: np.array([out[m]])  # noqa: E731
    return SemimonotonicityReport(
        times=np.array([0.0]), d_margin=one("D"), l_margin=one("L"),
        diag_margin=one("diag"), block_margin=one("block"),
        drift_osl_margin=one("drift_osl"), source=f"costs:{costs.name}:{which}",
        pairs=len(x),
    )


def _solution_blocks(U: np.ndarray, h: float, win) -> np.ndarray:
    """``[node, i, j] = D_ij u^i`` on the window, from one stored level."""
    N = U.shape[0]
    size = U[0][win].size
    blocks = np.empty((size, N, N))
    for i in range(N):
        gi = d1(U[i], h, i)
        for j in range(N):
            dij = d2(U[i], h, i) if j == i else d1(gi, h, j)
            blocks[:, i, j] = dij[win].ravel()
    return blocks


def _scan_solution(sol, sampler, modes, window, levels):
    grid: TensorGrid = sol.grid
    N, h = sol.N, grid.h
    hams = sol.problem.hamiltonians
    win = grid.window_slices(window)
    ks = list(range(len(sol.times))) if levels is None else list(levels)
    res = {m: np.full(len(ks), math.nan) for m in MODES}
    need_pairs = any(m in modes for m in ("D", "L", "drift_osl"))
    if need_pairs:
        sampler = sampler or PairSampler.for_grid(grid, window)
        x, y = sampler.sample(N)
        if len(x) == 0:
            raise ValueError("empty sample set")
    idx = np.arange(N)
    for pos, k in enumerate(ks):
        U = sol.values(k)
        if "block" in modes or "diag" in modes:
            blocks = _solution_blocks(U, h, win)
            if "block" in modes:
                res["block"][pos] = block_margin_of(blocks)
            if "diag" in modes:
                res["diag"][pos] = diag_margin_of(blocks)
        if not need_pairs:
            continue
        own = np.stack([d1(U[i], h, i) for i in range(N)], axis=-1)

        def own_at(X, own=own):
            return interp_space(grid, own, X)[0]

        if "D" in modes:
            res["D"][pos] = _pair_margin(d_operator(own_at, x, y), x, y)
        if "L" in modes:
            stacked = np.moveaxis(U, 0, -1)

            def vals_at(X, stacked=stacked):
                return interp_space(grid, stacked, X)[0]

            res["L"][pos] = _pair_margin(l_operator(vals_at, x, y), x, y)
        if "drift_osl" in modes:
            def drift_at(X, own_at=own_at):
                G = own_at(X)
                return np.stack([hams[i].dp(X[:, i], G[:, i]) for i in range(N)], axis=-1)

            res["drift_osl"][pos] = _pair_margin(d_operator(drift_at, x, y), x, y)
    return SemimonotonicityReport(
        times=np.asarray(sol.times)[ks], d_margin=res["D"], l_margin=res["L"],
        diag_margin=res["diag"], block_margin=res["block"],
        drift_osl_margin=res["drift_osl"], source=f"solution:N={N}",
        pairs=len(x) if need_pairs else 0,
    )


# ---------------------------------------------------------------- scaling


SCALING_KEYS = (
    "c1_weighted", "skew_first", "transversal_second", "horizontal_second",
    "transversal_third", "diag_first", "diag_second",
)


@dataclass
class DerivativeScalingReport:
    """Derivative sizes of one solve, each multiplied by its predicted N-power.

    ``c1_weighted_per_player[i]`` is the weighted-Lipschitz constant of
    ``u^i``; ``c1_weighted`` is their maximum.  Sup-norms run over the
    interior window and all stored levels.
    """

    N: int
    c1_weighted_per_player: np.ndarray
    skew_first: float
    transversal_second: float
    horizontal_second: float
    transversal_third: float
    diag_first: float
    diag_second: float

    @property
    def c1_weighted(self) -> float:
        return float(np.max(self.c1_weighted_per_player))

    def as_dict(self) -> dict:
        d = {k: float(getattr(self, k)) for k in SCALING_KEYS}
        d["N"] = self.N
        d["c1_weighted_per_player"] = [float(v) for v in self.c1_weighted_per_player]
        return d


@dataclass
class ScalingSweep:
    reports: dict[int, DerivativeScalingReport]
    ratios: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "reports": {str(N): r.as_dict() for N, r in sorted(self.reports.items())},
            "ratios": dict(sorted(self.ratios.items())),
        }


def _spread(values: list[float], floor: float = 1e-10) -> float:
    """``max / min`` of nonnegative values.

    Values below ``floor`` count as zero (an exactly quadratic solution has
    third differences at roundoff level): 1 when all vanish, inf if only some do.
    """
    values = [0.0 if v < floor else v for v in values]
    hi, lo = max(values), min(values)
    if hi == 0.0:
        return 1.0
    return math.inf if lo == 0.0 else hi / lo


def derivative_scaling(sol, window: float = 0.5) -> DerivativeScalingReport:
    grid: TensorGrid = sol.grid
    N, h = sol.N, grid.h
    win = grid.window_slices(window)
    c1 = np.zeros(N)
    skew1 = diag1 = diag2 = 0.0
    trans2 = np.zeros(N)
    horiz2 = np.zeros((N, N))
    trans3 = np.zeros((N, N))
    for k in range(len(sol.times)):
        U = sol.values(k)
        G = [[d1(U[i], h, j) for j in range(N)] for i in range(N)]
        # H[i][j][k] = D_jk u^i; only the entries the quantities use are formed
        H = [[[None] * N for _ in range(N)] for _ in range(N)]
        for i in range(N):
            for j in range(N):
                for l in range(j, N):
                    v = d2(U[i], h, j) if l == j else d1(G[i][j], h, l)
                    H[i][j][l] = H[i][l][j] = v
        for i in range(N):
            grad_i = np.stack([G[i][j][win] for j in range(N)], axis=-1)
            c1[i] = max(c1[i], float(np.max(dual_weighted_norm(grad_i, i))))
            diag1 = max(diag1, float(np.max(np.abs(G[i][i][win]))))
            diag2 = max(diag2, float(np.max(np.abs(H[i][i][i][win]))))
            if N > 1:
                s = sum(H[j][i][j][win] ** 2 for j in range(N) if j != i)
                trans2[i] = max(trans2[i], float(np.max(s)))
            for j in range(N):
                if j == i:
                    continue
                skew1 = max(skew1, float(np.max(np.abs(G[i][j][win]))))
                hsum = sum(H[i][j][l][win] ** 2 for l in range(N))
                horiz2[i, j] = max(horiz2[i, j], float(np.max(hsum)))
                # D^3_{ijk} u^j = D_i of D_jk u^j
                tsum = sum(d1(H[j][j][l], h, i)[win] ** 2 for l in range(N))
                trans3[i, j] = max(trans3[i, j], float(np.max(tsum)))
    return DerivativeScalingReport(
        N=N,
        c1_weighted_per_player=c1,
        skew_first=N * skew1,
        transversal_second=N * float(trans2.max(initial=0.0)),
        horizontal_second=N * float(horiz2.sum(axis=1).max(initial=0.0)),
        transversal_third=float(trans3.sum()),
        diag_first=diag1,
        diag_second=diag2,
    )


def scaling_report(solutions: Mapping[int, object], window: float = 0.5) -> ScalingSweep:
    """Normalised derivative sizes per N and their max/min spread across the sweep."""
    if len(solutions) < 2:
        raise ValueError("scaling_report needs a sweep over at least two values of N")
    reports = {int(N): derivative_scaling(sol, window) for N, sol in sorted(solutions.items())}
    ratios = {
        key: _spread([float(getattr(r, key)) for r in reports.values()])
        for key in SCALING_KEYS
    }
    return ScalingSweep(reports, ratios)


# ---------------------------------------------------------------- time regularity


@dataclass
class HolderResult:
    ratio: float
    worst_pair: tuple[float, float]
    c1: float
    c2: float

    @property
    def passed(self) -> bool:
        return self.ratio <= 1.05


def time_holder_check(fld: Field, c1: float, c2: float, sigma: float = 1.0,
                      beta: float = 0.0, d: int = 1, window: float = 0.5) -> HolderResult:
    """Worst ratio of ``|u(tau,z) - u(s,z)|`` to the time-regularity bound.

    The bound is ``(c1 + 4 (sigma + beta) d c2) |tau - s|^{1/3} + c2 |tau - s|``;
    all pairs of stored levels and all interior-window nodes are tested.
    """
    win = (slice(None),) + fld.grid.window_slices(window)
    vals = fld.values[win].reshape(len(fld.times), -1)
    a = c1 + 4.0 * (sigma + beta) * d * c2
    worst, pair = 0.0, (math.nan, math.nan)
    for p in range(len(fld.times)):
        dt = np.abs(fld.times[p + 1:] - fld.times[p])
        if dt.size == 0:
            continue
        diff = np.max(np.abs(vals[p + 1:] - vals[p]), axis=1)
        bound = a * np.cbrt(dt) + c2 * dt
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where((diff > 0) & (dt > 0), diff / bound, 0.0)
        q = int(np.argmax(r))
        if r[q] > worst:
            worst, pair = float(r[q]), (float(fld.times[p]), float(fld.times[p + 1 + q]))
    return HolderResult(worst, pair, float(c1), float(c2))
