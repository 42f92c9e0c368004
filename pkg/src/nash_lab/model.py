"""Game specifications: Hamiltonians, cost families, problems and validators.

Configurations are arrays of shape ``(M, N)``: M sample points, one scalar
state per player (d = 1).  Vector-valued cost callables return one value per
player, shape ``(M, N)``; gradients have shape ``(M, N, N)`` indexed
``[m, i, k] = D_k h^i`` and Hessians ``(M, N, N, N)`` indexed
``[m, i, j, k] = D_jk h^i``.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "FD_STEP",
    "EmpiricalMeasure",
    "HamiltonianSpec",
    "MomentCoupledCost",
    "CostFamily",
    "NashProblem",
    "LatticeSpec",
    "AssumptionReport",
    "project_mf_costs",
    "validate_assumptions",
    "catalog_hamiltonian",
    "catalog_costs",
    "quadratic_raw_costs",
    "HAMILTONIAN_CATALOG",
    "COST_CATALOG",
]

FD_STEP = 1e-4


class UnsupportedModeError(ValueError):
    """Operation requested on a cost family of the wrong kind."""


# ---------------------------------------------------------------- measures


@dataclass
class EmpiricalMeasure:
    """Atomic measure on the real line.

    ``atoms`` has shape ``(..., K)``; leading axes index independent measures
    evaluated in one batch.  ``weights`` broadcasts against ``atoms`` and
    defaults to uniform ``1/K``.  A measure with ``K = 0`` integrates to 0.
    """

    atoms: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=float)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)

    @property
    def count(self) -> int:
        return self.atoms.shape[-1]

    def _w(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        K = self.count
        return np.full(self.atoms.shape[-1:], 1.0 / K) if K else np.zeros(0)

    def integrate(self, phi: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """``∫ phi dm`` for every measure in the batch."""
        if self.count == 0:
            return np.zeros(self.atoms.shape[:-1])
        return np.sum(self._w() * phi(self.atoms), axis=-1)

    def mean(self) -> np.ndarray:
        return self.integrate(lambda y: y)

    def variance(self) -> np.ndarray:
        mu = self.mean()
        return self.integrate(lambda y: (y - mu[..., None]) ** 2)


# ---------------------------------------------------------------- Hamiltonians


def _quad_h(x, p):
    return 0.5 * np.asarray(p) ** 2


def _quad_dp(x, p):
    return np.asarray(p, dtype=float)


def _zero_like(x, p):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(p)).shape)


def _one_like(x, p):
    return np.ones(np.broadcast(np.asarray(x), np.asarray(p)).shape)


@dataclass(frozen=True)
class HamiltonianSpec:
    """Hamiltonian ``H(x, p)`` for one player with d = 1.

    ``kind`` is ``"quadratic"`` (``H = p^2/2``) or ``"separable"`` with
    user callbacks.  Callbacks are vectorised over broadcastable arrays.
    """

    kind: str = "quadratic"
    h_eval: Callable | None = None
    dp_eval: Callable | None = None
    dx_eval: Callable | None = None
    dpp_eval: Callable | None = None
    dpx_eval: Callable | None = None
    C_H: float = 1.0
    lambda_H: float = 1.0
    Lambda_H: float = 1.0
    inf_H: float | None = None
    name: str = "quadratic"

    def __post_init__(self):
        if self.kind not in ("quadratic", "separable"):
            raise ValueError(f"unknown Hamiltonian kind {self.kind!r}")
        if self.kind == "separable" and (self.h_eval is None or self.dp_eval is None):
            raise ValueError("separable Hamiltonians need h_eval and dp_eval")

    @property
    def is_quadratic(self) -> bool:
        return self.kind == "quadratic"

    def h(self, x, p):
        return _quad_h(x, p) if self.is_quadratic else self.h_eval(x, p)

    def dp(self, x, p):
        return _quad_dp(x, p) if self.is_quadratic else self.dp_eval(x, p)

    def dx(self, x, p):
        if self.is_quadratic or self.dx_eval is None:
            if not self.is_quadratic:
                return _fd_scalar(lambda s: self.h_eval(s, p), x)
            return _zero_like(x, p)
        return self.dx_eval(x, p)

    def dpp(self, x, p):
        if self.is_quadratic:
            return _one_like(x, p)
        if self.dpp_eval is None:
            return _fd_scalar(lambda s: self.dp_eval(x, s), p)
        return self.dpp_eval(x, p)

    def dpx(self, x, p):
        if self.is_quadratic:
            return _zero_like(x, p)
        if self.dpx_eval is None:
            return _fd_scalar(lambda s: self.dp_eval(s, p), x)
        return self.dpx_eval(x, p)

    def infimum(self) -> float:
        """Lower bound of H used by the sup-norm estimate."""
        if self.is_quadratic:
            return 0.0
        if self.inf_H is not None:
            return self.inf_H
        p = np.linspace(-20, 20, 4001)
        x = np.linspace(-3, 3, 61)[:, None]
        return float(np.min(self.h(x, p)))


def _fd_scalar(fun, s, step: float = FD_STEP):
    s = np.asarray(s, dtype=float)
    return (fun(s + step) - fun(s - step)) / (2 * step)


def soft_quadratic_hamiltonian(c: float = 0.5) -> HamiltonianSpec:
    """``H = p^2/2 + c (sqrt(1 + p^2) - 1)``: separable, strongly convex."""
    if c < 0:
        raise ValueError("c must be nonnegative")

    def h(x, p):
        p = np.asarray(p, dtype=float)
        return 0.5 * p * p + c * (np.sqrt(1.0 + p * p) - 1.0) + 0.0 * np.asarray(x)

    def dp(x, p):
        p = np.asarray(p, dtype=float)
        return p + c * p / np.sqrt(1.0 + p * p) + 0.0 * np.asarray(x)

    def dpp(x, p):
        p = np.asarray(p, dtype=float)
        return 1.0 + c / (1.0 + p * p) ** 1.5 + 0.0 * np.asarray(x)

    return HamiltonianSpec(
        kind="separable",
        h_eval=h,
        dp_eval=dp,
        dx_eval=_zero_like,
        dpp_eval=dpp,
        dpx_eval=_zero_like,
        C_H=1.0 + c,
        lambda_H=1.0 / (1.0 + c),
        Lambda_H=1.0,
        inf_H=0.0,
        name="soft-quadratic",
    )


def catalog_hamiltonian(name: str = "quadratic", **params) -> HamiltonianSpec:
    if name == "quadratic":
        return HamiltonianSpec(**params) if params else HamiltonianSpec()
    if name == "soft-quadratic":
        return soft_quadratic_hamiltonian(**params)
    raise KeyError(f"unknown Hamiltonian {name!r}; known: {sorted(HAMILTONIAN_CATALOG)}")


HAMILTONIAN_CATALOG = ("quadratic", "soft-quadratic")


# ---------------------------------------------------------------- MF costs

_COUPLINGS = {
    # name: (B, B', B'', phi, phi', phi'')
    "linear": (
        lambda x: x,
        lambda x: np.ones_like(x),
        lambda x: np.zeros_like(x),
        lambda y: y,
        lambda y: np.ones_like(y),
        lambda y: np.zeros_like(y),
    ),
    "sine": (np.sin, np.cos, lambda x: -np.sin(x), np.sin, np.cos, lambda y: -np.sin(y)),
}


@dataclass(frozen=True)
class MomentCoupledCost:
    """``F(lam, x, m) = a/2 (x - shift*lam)^2 + c x + eps B(x) ∫ phi dm``.

    ``coupling`` selects ``(B, phi)``: ``"linear"`` gives ``(x, y)`` (mean
    field through the first moment), ``"sine"`` gives ``(sin x, sin y)``.
    Analytic derivatives of the N-player projection are provided.
    """

    a: float = 0.0
    c: float = 0.0
    eps: float = 0.0
    shift: float = 0.0
    coupling: str = "linear"

    def __post_init__(self):
        if self.coupling not in _COUPLINGS:
            raise ValueError(f"unknown coupling {self.coupling!r}")

    def _parts(self):
        return _COUPLINGS[self.coupling]

    def __call__(self, lam, x, m: EmpiricalMeasure):
        B, _, _, phi, _, _ = self._parts()
        x = np.asarray(x, dtype=float)
        lam = np.asarray(lam, dtype=float)
        val = 0.5 * self.a * (x - self.shift * lam) ** 2 + self.c * x
        if self.eps != 0.0:
            val = val + self.eps * B(x) * m.integrate(phi)
        return val

    def dx(self, lam, x, m: EmpiricalMeasure):
        _, dB, _, phi, _, _ = self._parts()
        x = np.asarray(x, dtype=float)
        val = self.a * (x - self.shift * np.asarray(lam)) + self.c
        if self.eps != 0.0:
            val = val + self.eps * dB(x) * m.integrate(phi)
        return val

    # -- N-player projection with analytic derivatives

    @staticmethod
    def _others_mean(fun, X):
        # (1/(N-1)) sum_{j != i} fun(x_j) for every i
        N = X.shape[1]
        vals = fun(X)
        return (vals.sum(axis=1, keepdims=True) - vals) / (N - 1)

    def projected(self, X, labels):
        B, _, _, phi, _, _ = self._parts()
        N = X.shape[1]
        lam = np.asarray(labels, dtype=float)[None, :]
        out = 0.5 * self.a * (X - self.shift * lam) ** 2 + self.c * X
        if self.eps != 0.0 and N > 1:
            mean_phi = self._others_mean(phi, X)
            out = out + self.eps * B(X) * mean_phi
        return out

    def projected_grad(self, X, labels):
        B, dB, _, phi, dphi, _ = self._parts()
        M, N = X.shape
        lam = np.asarray(labels, dtype=float)[None, :]
        G = np.zeros((M, N, N))
        own = self.a * (X - self.shift * lam) + self.c
        if self.eps != 0.0 and N > 1:
            mean_phi = self._others_mean(phi, X)
            own = own + self.eps * dB(X) * mean_phi
            cross = self.eps * B(X)[:, :, None] * dphi(X)[:, None, :] / (N - 1)
            G += cross
        idx = np.arange(N)
        G[:, idx, idx] = own
        return G

    def projected_hess(self, X, labels):
        B, dB, d2B, phi, dphi, d2phi = self._parts()
        M, N = X.shape
        Hs = np.zeros((M, N, N, N))
        idx = np.arange(N)
        own = np.full((M, N), self.a)
        if self.eps != 0.0 and N > 1:
            mean_phi = self._others_mean(phi, X)
            own = own + self.eps * d2B(X) * mean_phi
            mixed = self.eps * dB(X)[:, :, None] * dphi(X)[:, None, :] / (N - 1)
            other_diag = self.eps * B(X)[:, :, None] * d2phi(X)[:, None, :] / (N - 1)
            for i in range(N):
                for k in range(N):
                    if k == i:
                        continue
                    Hs[:, i, i, k] = mixed[:, i, k]
                    Hs[:, i, k, i] = mixed[:, i, k]
                    Hs[:, i, k, k] = other_diag[:, i, k]
        Hs[:, idx, idx, idx] = own
        return Hs


# ---------------------------------------------------------------- cost families


def _fd_jacobian(fun, X, step: float = FD_STEP):
    """Central-difference Jacobian of a vector function ``(M,N)->(M,...)``."""
    X = np.asarray(X, dtype=float)
    M, N = X.shape
    cols = []
    for k in range(N):
        e = np.zeros(N)
        e[k] = step
        cols.append((fun(X + e) - fun(X - e)) / (2 * step))
    return np.stack(cols, axis=-1)


@dataclass
class CostFamily:
    """Running and terminal costs ``f^i``, ``g^i`` of the N players.

    ``kind="raw"`` takes vector callables ``f(X)``, ``g(X)`` mapping
    ``(M, N)`` configurations to ``(M, N)`` per-player values, with optional
    ``*_grad``/``*_hess`` callbacks.  ``kind="symmetric_mf"`` takes
    ``F(lam, x, m)``, ``G(lam, x, m)`` and projects through the empirical
    measure of the other players.  Missing derivatives fall back to central
    differences with step :data:`FD_STEP`.
    """

    kind: str
    N: int
    f: Callable | None = None
    g: Callable | None = None
    f_grad: Callable | None = None
    f_hess: Callable | None = None
    g_grad: Callable | None = None
    g_hess: Callable | None = None
    F: Callable | None = None
    G: Callable | None = None
    labels: Sequence[float] | None = None
    L_f: float = 1.0
    L_g: float = 1.0
    L_Lambda: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("raw", "symmetric_mf"):
            raise ValueError(f"unknown cost family kind {self.kind!r}")
        if self.kind == "raw" and (self.f is None or self.g is None):
            raise ValueError("raw cost families need f and g")
        if self.kind == "symmetric_mf":
            if self.F is None or self.G is None:
                raise ValueError("symmetric families need F and G")
            if self.labels is None:
                self.labels = (0.0,) * self.N
            self.labels = tuple(float(v) for v in self.labels)
            if len(self.labels) != self.N:
                raise ValueError("need one label per player")
            if any(not 0.0 <= v <= 1.0 for v in self.labels):
                raise ValueError("labels must lie in [0, 1]")

    @property
    def symmetric_single_label(self) -> bool:
        return self.kind == "symmetric_mf" and len(set(self.labels)) == 1

    # -- values

    def _project(self, fun, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if hasattr(fun, "projected"):
            return fun.projected(X, self.labels)
        M, N = X.shape
        out = np.empty((M, N))
        for i in range(N):
            others = np.delete(X, i, axis=1)
            out[:, i] = fun(self.labels[i], X[:, i], EmpiricalMeasure(others))
        return out

    def f_values(self, X) -> np.ndarray:
        if self.kind == "raw":
            return np.asarray(self.f(np.atleast_2d(X)), dtype=float)
        return self._project(self.F, X)

    def g_values(self, X) -> np.ndarray:
        if self.kind == "raw":
            return np.asarray(self.g(np.atleast_2d(X)), dtype=float)
        return self._project(self.G, X)

    # -- derivatives

    def _grad(self, which: str, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "raw":
            cb = self.f_grad if which == "f" else self.g_grad
            if cb is not None:
                return np.asarray(cb(X), dtype=float)
        else:
            fun = self.F if which == "f" else self.G
            if hasattr(fun, "projected_grad"):
                return fun.projected_grad(X, self.labels)
        vals = self.f_values if which == "f" else self.g_values
        return _fd_jacobian(vals, X)

    def _hess(self, which: str, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "raw":
            cb = self.f_hess if which == "f" else self.g_hess
            if cb is not None:
                return np.asarray(cb(X), dtype=float)
        else:
            fun = self.F if which == "f" else self.G
            if hasattr(fun, "projected_hess"):
                return fun.projected_hess(X, self.labels)
        return _fd_jacobian(lambda Y: self._grad(which, Y), X)

    def f_grad_values(self, X):
        return self._grad("f", X)

    def g_grad_values(self, X):
        return self._grad("g", X)

    def f_hess_values(self, X):
        return self._hess("f", X)

    def g_hess_values(self, X):
        return self._hess("g", X)

    def g_third_values(self, X):
        """Third derivatives ``[m, i, j, k, l] = D_jkl g^i`` by differencing Hessians."""
        return _fd_jacobian(lambda Y: self._hess("g", Y), np.atleast_2d(X))


def project_mf_costs(family: CostFamily, config) -> tuple[np.ndarray, np.ndarray]:
    """Per-player ``(f^i, g^i)`` at one configuration of a symmetric family."""
    if family.kind != "symmetric_mf":
        raise UnsupportedModeError("project_mf_costs needs a symmetric_mf family")
    x = np.asarray(config, dtype=float).reshape(1, -1)
    if x.shape[1] != family.N:
        raise ValueError(f"config has {x.shape[1]} entries, expected N={family.N}")
    return family.f_values(x)[0], family.g_values(x)[0]


# ---------------------------------------------------------------- problem


@dataclass
class NashProblem:
    """N-player game with d = 1 states on the time horizon ``[0, T]``."""

    N: int
    costs: CostFamily
    T: float = 1.0
    sigma: float = 1.0
    beta: float = 0.0
    hamiltonians: Sequence[HamiltonianSpec] | None = None
    d: int = 1
    name: str = ""

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.d != 1:
            raise NotImplementedError("the grid solver supports d = 1 only")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive (uniform parabolicity)")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.hamiltonians is None:
            self.hamiltonians = tuple(HamiltonianSpec() for _ in range(self.N))
        self.hamiltonians = tuple(self.hamiltonians)
        if len(self.hamiltonians) != self.N:
            raise ValueError("need one Hamiltonian per player")
        if self.costs.N != self.N:
            raise ValueError("cost family and problem disagree on N")

    @property
    def all_quadratic(self) -> bool:
        return all(h.is_quadratic for h in self.hamiltonians)


# ---------------------------------------------------------------- catalog

COST_CATALOG = ("zero", "linear", "quadratic", "convex-quadratic-coupled", "sine-coupled")

_CATALOG_DEFAULTS = {
    "zero": dict(f=dict(), g=dict(), coupling="linear"),
    "linear": dict(f=dict(c=0.0), g=dict(c=1.0), coupling="linear"),
    "quadratic": dict(f=dict(a=1.0), g=dict(a=1.0), coupling="linear"),
    "convex-quadratic-coupled": dict(
        f=dict(a=1.0, eps=0.5), g=dict(a=1.0, eps=0.5), coupling="linear"
    ),
    "sine-coupled": dict(f=dict(a=0.5, eps=0.5), g=dict(a=0.5, eps=0.5), coupling="sine"),
}


def catalog_mf_pair(name: str, **params) -> tuple[MomentCoupledCost, MomentCoupledCost]:
    """``(F, G)`` for a catalog entry.

    Parameters use prefixes ``f_`` and ``g_`` followed by ``a``, ``c``,
    ``eps`` or ``shift`` (for example ``g_eps=0.3``).
    """
    if name not in _CATALOG_DEFAULTS:
        raise KeyError(f"unknown cost family {name!r}; known: {list(COST_CATALOG)}")
    base = _CATALOG_DEFAULTS[name]
    fp, gp = dict(base["f"]), dict(base["g"])
    for key, val in params.items():
        prefix, _, attr = key.partition("_")
        if prefix not in ("f", "g") or attr not in ("a", "c", "eps", "shift"):
            raise KeyError(f"unknown catalog parameter {key!r}")
        (fp if prefix == "f" else gp)[attr] = float(val)
    return (
        MomentCoupledCost(coupling=base["coupling"], **fp),
        MomentCoupledCost(coupling=base["coupling"], **gp),
    )


def catalog_costs(
    name: str,
    N: int,
    labels: Sequence[float] | None = None,
    L_f: float | None = None,
    L_g: float | None = None,
    L_Lambda: float = 1.0,
    **params,
) -> CostFamily:
    """Symmetric cost family from the built-in catalog."""
    F, G = catalog_mf_pair(name, **params)
    lf = L_f if L_f is not None else _lipschitz_guess(F)
    lg = L_g if L_g is not None else _lipschitz_guess(G)
    return CostFamily(
        kind="symmetric_mf", N=N, F=F, G=G, labels=labels, L_f=lf, L_g=lg,
        L_Lambda=L_Lambda, name=name,
    )


def _lipschitz_guess(F: MomentCoupledCost, L: float = 3.0) -> float:
    # derivative bound on [-L, L] with measures supported there
    scale = L if F.coupling == "linear" else 1.0
    return max(1.0, abs(F.a) * L + abs(F.c) + 2 * abs(F.eps) * scale + abs(F.a))


def quadratic_raw_costs(A_f: Sequence[np.ndarray], A_g: Sequence[np.ndarray] | None = None,
                        name: str = "raw-quadratic") -> CostFamily:
    """Raw family ``f^i = x·A_i x / 2`` (same form for ``g``) with exact derivatives."""
    A_f = [np.asarray(A, dtype=float) for A in A_f]
    A_g = A_f if A_g is None else [np.asarray(A, dtype=float) for A in A_g]
    N = len(A_f)

    def make(As):
        Asym = np.stack([0.5 * (A + A.T) for A in As])  # (N, N, N)

        def val(X):
            X = np.atleast_2d(X)
            return 0.5 * np.einsum("mj,ijk,mk->mi", X, Asym, X)

        def grad(X):
            X = np.atleast_2d(X)
            return np.einsum("ijk,mk->mij", Asym, X)

        def hess(X):
            X = np.atleast_2d(X)
            return np.broadcast_to(Asym, (X.shape[0],) + Asym.shape).copy()

        return val, grad, hess

    fv, fg, fh = make(A_f)
    gv, gg, gh = make(A_g)
    return CostFamily(kind="raw", N=N, f=fv, g=gv, f_grad=fg, f_hess=fh,
                      g_grad=gg, g_hess=gh, name=name)


# ---------------------------------------------------------------- validation


@dataclass
class LatticeSpec:
    """Sampling lattice for assumption checks: ``points`` per axis on ``[-L, L]``."""

    points: int = 5
    L: float = 3.0
    p_max: float = 5.0
    p_points: int = 21

    def configs(self, N: int) -> np.ndarray:
        if self.points < 1 or N < 1:
            raise ValueError("sampling lattice is empty")
        axis = np.linspace(-self.L, self.L, self.points)
        return np.array(list(itertools.product(axis, repeat=N)), dtype=float)


@dataclass
class AssumptionCheck:
    name: str
    measured: float
    declared: float
    passed: bool
    worst_point: list[float] = field(default_factory=list)

    @property
    def margin(self) -> float:
        return self.declared - self.measured


@dataclass
class AssumptionReport:
    checks: list[AssumptionCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            c.name: {
                "measured": c.measured,
                "declared": c.declared,
                "margin": c.margin,
                "passed": c.passed,
                "worst_point": c.worst_point,
            }
            for c in self.checks
        }


def _upper(name, values, points, bound, tol=1e-9) -> AssumptionCheck:
    values = np.asarray(values, dtype=float)
    k = int(np.argmax(values))
    m = float(values[k])
    return AssumptionCheck(name, m, float(bound), m <= bound + tol, [float(v) for v in np.atleast_1d(points[k])])


def validate_assumptions(problem: NashProblem, lattice: LatticeSpec | None = None) -> AssumptionReport:
    """Sampled checks of the mean-field derivative scaling and Hamiltonian bounds.

    The report is advisory: violations raise a warning, never an error.
    """
    lattice = lattice or LatticeSpec()
    N = problem.N
    X = lattice.configs(N)
    if X.size == 0:
        raise ValueError("sampling lattice is empty")
    costs = problem.costs
    checks: list[AssumptionCheck] = []
    idx = np.arange(N)
    off = ~np.eye(N, dtype=bool)
    for which, L in (("f", costs.L_f), ("g", costs.L_g)):
        G = costs._grad(which, X)  # (M, i, k)
        H = costs._hess(which, X)  # (M, i, j, k)
        own1 = np.abs(G[:, idx, idx]).max(axis=1)
        own2 = np.abs(H[:, idx, idx, idx]).max(axis=1)
        checks.append(_upper(f"{which}.own_first", own1, X, L))
        checks.append(_upper(f"{which}.own_second", own2, X, L))
        if N > 1:
            skew1 = N * np.where(off, np.abs(G), 0.0).max(axis=(1, 2))
            # sum_{k != i} |D_ik h^k|^2, sup over i
            dik_hk = np.abs(H[:, idx[None, :], idx[:, None], idx[None, :]])  # [m, i, k] = D_ik h^k
            skew2 = N * np.where(off, dik_hk ** 2, 0.0).sum(axis=2).max(axis=1)
            checks.append(_upper(f"{which}.skew_first", skew1, X, L * L))
            checks.append(_upper(f"{which}.skew_second", skew2, X, L * L))
        if which == "g" and N > 1:
            # |D(D_k g^i)|^2 summed over i, sup over k
            grad_dk = np.sum(H ** 2, axis=2)  # [m, i, k] = |D(D_k g^i)|^2
            mixed = grad_dk.sum(axis=1).max(axis=1)
            skew_mixed = N * np.where(off, grad_dk, 0.0).sum(axis=2).max(axis=1)
            checks.append(_upper("g.second_mixed", mixed, X, L * L))
            checks.append(_upper("g.skew_second_mixed", skew_mixed, X, L * L))
            T3 = costs.g_third_values(X)  # [m, i, j, k, l] = D_jkl g^i
            # sum_{i != k} |D(D_ki g^i)|^2
            third = np.zeros(X.shape[0])
            for i in range(N):
                for k in range(N):
                    if k != i:
                        third += np.sum(T3[:, i, k, i, :] ** 2, axis=-1)
            checks.append(_upper("g.third", third, X, L * L))
    # Hamiltonians on an (x, p) lattice
    xs = np.linspace(-lattice.L, lattice.L, lattice.points)
    ps = np.linspace(-lattice.p_max, lattice.p_max, lattice.p_points)
    xx, pp = np.meshgrid(xs, ps, indexing="ij")
    pts = np.stack([xx.ravel(), pp.ravel()], axis=-1)
    for i, ham in enumerate(problem.hamiltonians):
        x, p = pts[:, 0], pts[:, 1]
        growth = np.abs(ham.dp(x, p)) / (1.0 + np.abs(p))
        checks.append(_upper(f"H{i}.dp_growth", growth, pts, ham.C_H))
        second = np.maximum(np.abs(ham.dpp(x, p)), np.abs(ham.dpx(x, p)))
        checks.append(_upper(f"H{i}.second", second, pts, ham.C_H))
        checks.append(_upper(f"H{i}.dx", np.abs(ham.dx(x, p)), pts, ham.C_H))
        conv = ham.dpp(x, p)
        k = int(np.argmin(conv))
        checks.append(AssumptionCheck(
            f"H{i}.strong_convexity", float(-conv[k]), -ham.Lambda_H,
            bool(conv[k] >= ham.Lambda_H - 1e-9), [float(v) for v in pts[k]],
        ))
        # joint monotonicity (H1) on pairs of lattice points
        a, b = np.triu_indices(len(pts), k=1)
        xa, pa, xb, pb = x[a], p[a], x[b], p[b]
        ddp = ham.dp(xa, pa) - ham.dp(xb, pb)
        ddx = ham.dx(xa, pa) - ham.dx(xb, pb)
        lhs = -ddx * (xa - xb) + ddp * (pa - pb)
        slack = lhs - ham.lambda_H * ddp ** 2
        k = int(np.argmin(slack))
        checks.append(AssumptionCheck(
            f"H{i}.joint_monotone", float(-slack[k]), 0.0, bool(slack[k] >= -1e-9),
            [float(xa[k]), float(pa[k]), float(xb[k]), float(pb[k])],
        ))
    report = AssumptionReport(checks)
    for c in report.checks:
        if not c.passed:
            warnings.warn(
                f"assumption check {c.name} violated: measured {c.measured:.4g} "
                f"vs declared {c.declared:.4g} at {c.worst_point}",
                stacklevel=2,
            )
    return report
