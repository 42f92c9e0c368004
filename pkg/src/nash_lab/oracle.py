"""Reference solutions for linear-quadratic games.

Nash system with quadratic Hamiltonians and quadratic costs
----------------------------------------------------------
With running cost ``f^i = x·Q_i x/2 + l_i·x + k_i``, terminal cost
``g^i = x·G_i x/2 + m_i·x + c_i`` and ``H^i = |p|^2/2`` the ansatz
``u^i = x·P_i x/2 + q_i·x + r_i`` closes.  Writing ``B`` for the matrix whose
``j``-th row is the ``j``-th row of ``P_j`` (so the feedback drift vector is
``D_pH^j = (B x + c)_j`` with ``c_j = q_j[j]``) and ``E_i = e_i e_i^T``::

    P_i' = B^T P_i + P_i B - P_i E_i P_i - Q_i
    q_i' = B^T q_i + P_i c - q_i[i] P_i e_i - l_i
    r_i' = -tr((sigma I + beta J) P_i) + q_i[i]^2/2 + sum_{j != i} c_j q_i[j] - k_i

backwards from ``(G_i, m_i, c_i)`` at ``t = T``.  The right-hand sides are
written with plain array operations so the test-suite can push symbolic
arrays through them and check the substitution into the PDE exactly.

LQ mean field game
------------------
For ``F = a_f x^2/2 + c_f x + eps_f x mean(m)``, ``G = a_g x^2/2 + c_g x +
eps_g x mean(m)`` the value is ``u = P x^2/2 + q x + r`` with::

    P' = P^2 - a_f,               P(T) = a_g
    q' = P q - c_f - eps_f mean,  q(T) = c_g + eps_g mean(T)
    mean' = -(P mean + q),        mean(0) = mean_0
    var'  = -2 P var + 2 sigma

and the forward-backward pair ``(mean, q)`` is a linear two-point problem
solved by shooting on ``q(0)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "RiccatiBlowUp",
    "LQSpec",
    "RiccatiSolution",
    "riccati_rhs",
    "riccati_nash",
    "lq_spec_from_costs",
    "nash_pde_residual",
    "LQMFGCoefficients",
    "MomentTrajectories",
    "lq_mfg_moments",
]

BLOWUP = 1e8


class RiccatiBlowUp(RuntimeError):
    def __init__(self, t: float, norm: float):
        super().__init__(f"Riccati solution blew up near t={t:.6g} (norm {norm:.3g})")
        self.t = t
        self.norm = norm


@dataclass
class LQSpec:
    """Quadratic data for an N-player game with d = 1 and ``H = p^2/2``.

    ``Q``, ``G`` have shape ``(N, N, N)`` (one symmetric matrix per player);
    ``l``, ``m`` shape ``(N, N)``; ``k``, ``c`` shape ``(N,)``.
    """

    Q: np.ndarray
    G: np.ndarray
    sigma: float = 1.0
    beta: float = 0.0
    T: float = 1.0
    l: np.ndarray | None = None
    m: np.ndarray | None = None
    k: np.ndarray | None = None
    c: np.ndarray | None = None

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.G = np.asarray(self.G, dtype=float)
        N = self.N
        if self.Q.shape != (N, N, N) or self.G.shape != (N, N, N):
            raise ValueError("Q and G must have shape (N, N, N)")
        for A in (self.Q, self.G):
            if not np.allclose(A, np.transpose(A, (0, 2, 1)), atol=1e-14):
                raise ValueError("coefficient matrices must be symmetric")
        self.l = np.zeros((N, N)) if self.l is None else np.asarray(self.l, dtype=float)
        self.m = np.zeros((N, N)) if self.m is None else np.asarray(self.m, dtype=float)
        self.k = np.zeros(N) if self.k is None else np.asarray(self.k, dtype=float)
        self.c = np.zeros(N) if self.c is None else np.asarray(self.c, dtype=float)

    @property
    def N(self) -> int:
        return self.Q.shape[0]

    def f_values(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return 0.5 * np.einsum("mj,ijk,mk->mi", X, self.Q, X) + X @ self.l.T + self.k

    def g_values(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return 0.5 * np.einsum("mj,ijk,mk->mi", X, self.G, X) + X @ self.m.T + self.c


def riccati_rhs(P, q, Q, l, k, sigma, beta):
    """Time derivatives ``(P', q', r')`` of the coefficient ODE system.

    Works for float arrays and for object arrays of symbols.
    """
    N = P.shape[0]
    idx = np.arange(N)
    B = P[idx, idx, :]  # row j of P_j
    cvec = q[idx, idx]
    dP = np.empty_like(P)
    dq = np.empty_like(q)
    dr = np.empty(N, dtype=P.dtype)
    for i in range(N):
        Pi = P[i]
        dP[i] = B.T @ Pi + Pi @ B - np.outer(Pi[:, i], Pi[i, :]) - Q[i]
        dq[i] = B.T @ q[i] + Pi @ cvec - q[i][i] * Pi[:, i] - l[i]
        cross = (cvec * q[i]).sum() - cvec[i] * q[i][i]
        dr[i] = -(sigma * np.trace(Pi) + beta * Pi.sum()) + q[i][i] * q[i][i] / 2 + cross - k[i]
    return dP, dq, dr


@dataclass
class RiccatiSolution:
    """Coefficients on a uniform time grid, ``u^i = x·P_i x/2 + q_i·x + r_i``."""

    times: np.ndarray
    P: np.ndarray  # (K+1, N, N, N)
    q: np.ndarray  # (K+1, N, N)
    r: np.ndarray  # (K+1, N)
    spec: LQSpec | None = field(default=None, repr=False)

    def _coeffs(self, t: float):
        t = float(np.clip(t, self.times[0], self.times[-1]))
        k = int(np.searchsorted(self.times, t))
        if k < len(self.times) and abs(self.times[k] - t) < 1e-12 * max(1.0, abs(t)):
            return self.P[k], self.q[k], self.r[k]
        k = min(max(k, 1), len(self.times) - 1)
        t0, t1 = self.times[k - 1], self.times[k]
        if abs(t - t0) < 1e-12 * max(1.0, abs(t)):
            return self.P[k - 1], self.q[k - 1], self.r[k - 1]
        # cubic Hermite in time using the ODE derivatives
        s = self.spec
        y0 = (self.P[k - 1], self.q[k - 1], self.r[k - 1])
        y1 = (self.P[k], self.q[k], self.r[k])
        d0 = riccati_rhs(*y0[:2], s.Q, s.l, s.k, s.sigma, s.beta)
        d1 = riccati_rhs(*y1[:2], s.Q, s.l, s.k, s.sigma, s.beta)
        hstep = t1 - t0
        tau = (t - t0) / hstep
        h00 = 2 * tau**3 - 3 * tau**2 + 1
        h10 = tau**3 - 2 * tau**2 + tau
        h01 = -2 * tau**3 + 3 * tau**2
        h11 = tau**3 - tau**2
        return tuple(
            h00 * a + h10 * hstep * da + h01 * b + h11 * hstep * db
            for a, b, da, db in zip(y0, y1, d0, d1)
        )

    def coefficients(self, t: float):
        return self._coeffs(t)

    def value(self, t: float, X) -> np.ndarray:
        """``u^i(t, x)`` for configurations ``X`` of shape (M, N); returns (M, N)."""
        P, q, r = self._coeffs(t)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return 0.5 * np.einsum("mj,ijk,mk->mi", X, P, X) + X @ q.T + r

    def gradient(self, t: float, X) -> np.ndarray:
        """``[m, i, k] = D_k u^i(t, x_m)``."""
        P, q, _ = self._coeffs(t)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.einsum("ijk,mk->mij", P, X) + q[None]

    def block_margin(self, t: float) -> float:
        """Min eigenvalue of the symmetrised block matrix ``(D_ij u^i)``."""
        P, _, _ = self._coeffs(t)
        N = P.shape[0]
        A = P[np.arange(N), np.arange(N), :]  # row i holds D_ij u^i
        return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])

    def to_json(self, path: str | Path | None = None) -> str:
        payload = {
            "times": self.times.tolist(),
            "P": self.P.tolist(),
            "q": self.q.tolist(),
            "r": self.r.tolist(),
        }
        text = json.dumps(payload, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text


def riccati_nash(spec: LQSpec, steps: int = 2000) -> RiccatiSolution:
    """Integrate the coefficient ODEs backwards from ``T`` with classical RK4."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    N = spec.N
    dt = spec.T / steps
    P = np.empty((steps + 1, N, N, N))
    q = np.empty((steps + 1, N, N))
    r = np.empty((steps + 1, N))
    P[-1], q[-1], r[-1] = spec.G, spec.m, spec.c

    def rhs(y):
        return riccati_rhs(y[0], y[1], spec.Q, spec.l, spec.k, spec.sigma, spec.beta)

    def axpy(y, a, d):
        return tuple(yy + a * dd for yy, dd in zip(y, d))

    y = (P[-1].copy(), q[-1].copy(), r[-1].copy())
    for n in range(steps, 0, -1):
        k1 = rhs(y)
        k2 = rhs(axpy(y, -0.5 * dt, k1))
        k3 = rhs(axpy(y, -0.5 * dt, k2))
        k4 = rhs(axpy(y, -dt, k3))
        y = tuple(
            yy - dt / 6.0 * (a + 2 * b + 2 * c + d)
            for yy, a, b, c, d in zip(y, k1, k2, k3, k4)
        )
        norm = max(float(np.max(np.abs(part))) for part in y)
        if not np.isfinite(norm) or norm > BLOWUP:
            raise RiccatiBlowUp((n - 1) * dt, norm)
        P[n - 1] = 0.5 * (y[0] + np.transpose(y[0], (0, 2, 1)))
        q[n - 1], r[n - 1] = y[1], y[2]
        y = (P[n - 1], y[1], y[2])
    times = np.linspace(0.0, spec.T, steps + 1)
    return RiccatiSolution(times, P, q, r, spec)


def nash_pde_residual(sol: RiccatiSolution, t: float, X) -> np.ndarray:
    """Residual of the Nash PDE for the quadratic ansatz, assembled term by term.

    ``∂_t u^i`` comes from the coefficient derivatives, the spatial terms from
    the explicit gradients and Hessians of the ansatz.  Returns (M, N).
    """
    s = sol.spec
    P, q, r = sol.coefficients(t)
    dP, dq, dr = riccati_rhs(P, q, s.Q, s.l, s.k, s.sigma, s.beta)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    M, N = X.shape
    out = np.empty((M, N))
    grads = np.einsum("ijk,mk->mij", P, X) + q[None]  # [m, i, k] = D_k u^i
    fvals = s.f_values(X)
    for i in range(N):
        dt_u = 0.5 * np.einsum("mj,jk,mk->m", X, dP[i], X) + X @ dq[i] + dr[i]
        diffusion = s.sigma * np.trace(P[i]) + s.beta * P[i].sum()
        ham = 0.5 * grads[:, i, i] ** 2
        transport = np.zeros(M)
        for j in range(N):
            if j != i:
                transport += grads[:, j, j] * grads[:, i, j]
        out[:, i] = -dt_u - diffusion + ham + transport - fvals[:, i]
    return out


def lq_spec_from_costs(costs, sigma: float = 1.0, beta: float = 0.0, T: float = 1.0) -> LQSpec:
    """LQ data of a symmetric family built from linear-coupling moment costs."""
    from .model import MomentCoupledCost

    F, G = costs.F, costs.G
    for fun in (F, G):
        if not isinstance(fun, MomentCoupledCost) or (fun.coupling != "linear" and fun.eps != 0.0):
            raise ValueError("only linear-coupling moment costs have an LQ form")
    N = costs.N
    lam = np.asarray(costs.labels, dtype=float)

    def blocks(fun):
        A = np.zeros((N, N, N))
        lin = np.zeros((N, N))
        const = np.zeros(N)
        for i in range(N):
            A[i, i, i] = fun.a
            if N > 1:
                for j in range(N):
                    if j != i:
                        A[i, i, j] = A[i, j, i] = fun.eps / (N - 1)
            lin[i, i] = fun.c - fun.a * fun.shift * lam[i]
            const[i] = 0.5 * fun.a * (fun.shift * lam[i]) ** 2
        return A, lin, const

    Q, l, k = blocks(F)
    Gm, m, c = blocks(G)
    return LQSpec(Q=Q, G=Gm, sigma=sigma, beta=beta, T=T, l=l, m=m, k=k, c=c)


# ---------------------------------------------------------------- LQ MFG


@dataclass
class LQMFGCoefficients:
    a_f: float = 0.0
    c_f: float = 0.0
    eps_f: float = 0.0
    k_f: float = 0.0
    a_g: float = 0.0
    c_g: float = 0.0
    eps_g: float = 0.0
    k_g: float = 0.0
    sigma: float = 1.0
    T: float = 1.0

    @classmethod
    def from_costs(cls, F, G, sigma: float = 1.0, T: float = 1.0, lam: float = 0.0):
        def parts(fun):
            if fun.coupling != "linear" and fun.eps != 0.0:
                raise ValueError("only linear-coupling moment costs have an LQ form")
            s = fun.shift * lam
            return fun.a, fun.c - fun.a * s, fun.eps, 0.5 * fun.a * s * s

        a_f, c_f, e_f, k_f = parts(F)
        a_g, c_g, e_g, k_g = parts(G)
        return cls(a_f, c_f, e_f, k_f, a_g, c_g, e_g, k_g, sigma, T)


@dataclass
class MomentTrajectories:
    times: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    P: np.ndarray
    q: np.ndarray
    r: np.ndarray

    def value(self, k: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 0.5 * self.P[k] * x * x + self.q[k] * x + self.r[k]

    def to_json(self, path: str | Path | None = None) -> str:
        payload = {key: getattr(self, key).tolist() for key in ("times", "mean", "var", "P", "q", "r")}
        text = json.dumps(payload, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text


def _rk4_forward(f, y0, ts):
    ys = np.empty((len(ts),) + np.shape(y0))
    ys[0] = y0
    y = np.asarray(y0, dtype=float)
    for n in range(len(ts) - 1):
        h = ts[n + 1] - ts[n]
        k1 = f(n, 0.0, y)
        k2 = f(n, 0.5, y + 0.5 * h * k1)
        k3 = f(n, 0.5, y + 0.5 * h * k2)
        k4 = f(n, 1.0, y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[n + 1] = y
    return ys


def lq_mfg_moments(
    coef: LQMFGCoefficients,
    mean0: float,
    var0: float,
    steps: int = 2000,
    injected_drift: float | None = None,
) -> MomentTrajectories:
    """Moments of the LQ MFG flow plus the value coefficients ``(P, q, r)``.

    With ``injected_drift = kappa`` the drift ``-kappa x`` replaces the
    equilibrium feedback and the value coefficients are returned as zeros.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    T, sigma = coef.T, coef.sigma
    ts = np.linspace(0.0, T, steps + 1)
    if injected_drift is not None:
        kappa = float(injected_drift)
        mean = mean0 * np.exp(-kappa * ts)
        if kappa == 0.0:
            var = var0 + 2 * sigma * ts
        else:
            var = var0 * np.exp(-2 * kappa * ts) + sigma / kappa * (1 - np.exp(-2 * kappa * ts))
        zeros = np.zeros_like(ts)
        return MomentTrajectories(ts, mean, var, zeros, zeros.copy(), zeros.copy())

    # P on the half-step grid, backwards
    fine = np.linspace(0.0, T, 2 * steps + 1)
    Pf = np.empty_like(fine)
    Pf[-1] = coef.a_g
    p = coef.a_g
    for n in range(2 * steps, 0, -1):
        h = fine[n] - fine[n - 1]
        g = lambda v: v * v - coef.a_f  # noqa: E731
        k1 = g(p)
        k2 = g(p - 0.5 * h * k1)
        k3 = g(p - 0.5 * h * k2)
        k4 = g(p - h * k3)
        p = p - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(p) or abs(p) > BLOWUP:
            raise RiccatiBlowUp(fine[n - 1], abs(p))
        Pf[n - 1] = p

    def Pat(n, frac):
        return Pf[2 * n + int(round(2 * frac))]

    def rhs_affine(n, frac, z, with_source):
        Pv = Pat(n, frac)
        mean, qv = z
        src = np.array([0.0, -coef.c_f]) if with_source else 0.0
        return np.array([-(Pv * mean + qv), Pv * qv - coef.eps_f * mean]) + src

    # z(t) = z_p(t) + s * z_h(t); z_p from (mean0, 0), z_h from (0, 1) without source
    zp = _rk4_forward(lambda n, fr, z: rhs_affine(n, fr, z, True), np.array([mean0, 0.0]), ts)
    zh = _rk4_forward(lambda n, fr, z: rhs_affine(n, fr, z, False), np.array([0.0, 1.0]), ts)
    # q(T) - eps_g mean(T) = c_g
    denom = zh[-1, 1] - coef.eps_g * zh[-1, 0]
    if abs(denom) < 1e-14:
        raise RiccatiBlowUp(T, np.inf)
    s = (coef.c_g - (zp[-1, 1] - coef.eps_g * zp[-1, 0])) / denom
    z = zp + s * zh
    mean, qv = z[:, 0], z[:, 1]
    P = Pf[::2]

    var = _rk4_forward(
        lambda n, fr, v: np.array([-2 * Pat(n, fr) * v[0] + 2 * sigma]), np.array([var0]), ts
    )[:, 0]

    # r' = q^2/2 - sigma P - eps_f... constant parts of F only
    qf = np.interp(fine, ts, qv)
    r = np.empty_like(ts)
    r[-1] = coef.k_g
    rv = coef.k_g
    for n in range(steps, 0, -1):
        h = ts[n] - ts[n - 1]
        vals = [0.5 * qf[2 * n - j] ** 2 - sigma * Pf[2 * n - j] - coef.k_f for j in (0, 1, 2)]
        rv = rv - h / 6.0 * (vals[0] + 4 * vals[1] + vals[2])
        r[n - 1] = rv
    return MomentTrajectories(ts, mean, var, P, qv, r)
