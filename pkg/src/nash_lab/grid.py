"""Tensor grids on [-L, L]^N, finite-difference operators and interpolation.

Every axis carries one player's (scalar) state.  Arrays holding a single time
slice have shape ``(n,) * N``; time-dependent fields stack slices along a
leading axis.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

__all__ = [
    "TensorGrid",
    "Field",
    "default_nodes",
    "weighted_norm",
    "dual_weighted_norm",
    "d1",
    "d2",
    "diff_array",
    "diff",
    "diffusion_array",
    "diffusion_apply",
    "interp_space",
    "interpolate",
    "save_field",
    "load_field",
]

_DEFAULT_NODES = {1: 33, 2: 33, 3: 33, 4: 17, 5: 9}
_MAGIC = b"NLFIELD1"


def default_nodes(N: int) -> int:
    """Default nodes per axis for an N-player grid."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return _DEFAULT_NODES.get(N, 9)


@dataclass(frozen=True)
class TensorGrid:
    """Uniform grid with ``n`` nodes per axis on ``[-L, L]^N``."""

    N: int
    n: int | None = None
    L: float = 3.0
    memory_cap: int = 5_000_000

    def __post_init__(self):
        if self.n is None:
            object.__setattr__(self, "n", default_nodes(self.N))
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.n < 5 or self.n % 2 == 0:
            raise ValueError(f"n must be odd and >= 5, got {self.n}")
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.n ** self.N > self.memory_cap:
            raise MemoryError(
                f"grid has {self.n}^{self.N} = {self.n ** self.N} nodes, "
                f"cap is {self.memory_cap}"
            )

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        x = np.linspace(-self.L, self.L, self.n)
        x[self.n // 2] = 0.0
        return x

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.N

    @property
    def size(self) -> int:
        return self.n ** self.N

    def axis_coords(self, j: int) -> np.ndarray:
        """Coordinate of axis ``j`` shaped to broadcast against a slice."""
        shape = [1] * self.N
        shape[j] = self.n
        return self.nodes.reshape(shape)

    def points(self) -> np.ndarray:
        """All nodes as an array of shape ``(n^N, N)`` in row-major order."""
        mesh = np.meshgrid(*([self.nodes] * self.N), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def window_slices(self, frac: float = 0.5) -> tuple[slice, ...]:
        """Index slices of the interior window ``[-frac L, frac L]^N``."""
        x = self.nodes
        idx = np.nonzero(np.abs(x) <= frac * self.L + 1e-12 * self.L)[0]
        sl = slice(int(idx[0]), int(idx[-1]) + 1)
        return (sl,) * self.N

    def window_points(self, frac: float = 0.5) -> np.ndarray:
        sub = self.nodes[self.window_slices(frac)[0]]
        mesh = np.meshgrid(*([sub] * self.N), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def refined(self) -> "TensorGrid":
        """Same box with the spacing halved."""
        return TensorGrid(self.N, 2 * self.n - 1, self.L, self.memory_cap)

    def to_dict(self) -> dict:
        return {"N": self.N, "n": self.n, "L": self.L}


@dataclass
class Field:
    """Scalar function on a tensor grid at a sequence of time levels."""

    grid: TensorGrid
    times: np.ndarray
    values: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.times),) + self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{(len(self.times),) + self.grid.shape}"
            )

    def at(self, k: int) -> np.ndarray:
        return self.values[k]

    @classmethod
    def static(cls, grid: TensorGrid, values: np.ndarray, t: float = 0.0) -> "Field":
        return cls(grid, np.array([t]), np.asarray(values)[None])


# ---------------------------------------------------------------- norms


def weighted_norm(x, i: int) -> np.ndarray | float:
    """``sqrt(|x^i|^2 + (1/N) sum_{j != i} |x^j|^2)`` over the last axis.

    ``i`` is a zero-based player index.
    """
    x = np.asarray(x, dtype=float)
    N = x.shape[-1]
    if not 0 <= i < N:
        raise IndexError(f"player index {i} out of range for N={N}")
    sq = x * x
    others = sq.sum(axis=-1) - sq[..., i]
    return np.sqrt(sq[..., i] + others / N)


def dual_weighted_norm(w, i: int) -> np.ndarray | float:
    """Dual of :func:`weighted_norm`: ``sqrt(|w_i|^2 + N sum_{j != i} |w_j|^2)``.

    A function whose gradient has dual norm at most ``c`` is ``c``-Lipschitz
    for the ``i``-th weighted norm on convex sets.
    """
    w = np.asarray(w, dtype=float)
    N = w.shape[-1]
    if not 0 <= i < N:
        raise IndexError(f"player index {i} out of range for N={N}")
    sq = w * w
    others = sq.sum(axis=-1) - sq[..., i]
    return np.sqrt(sq[..., i] + N * others)


# ---------------------------------------------------------------- differences


def d1(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    """First derivative: central inside, one-sided 2nd order at the ends.

    Same stencil as ``np.gradient(u, h, axis=axis, edge_order=2)`` without its
    per-call overhead, which matters in the solver's inner loop.
    """
    u = np.moveaxis(u, axis, 0)
    out = np.empty_like(u)
    c = 0.5 / h
    np.subtract(u[2:], u[:-2], out=out[1:-1])
    out[1:-1] *= c
    out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) * c
    out[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) * c
    return np.moveaxis(out, 0, axis)


def d2(u: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Compact second derivative with one-sided 2nd-order end stencils."""
    u = np.moveaxis(u, axis, 0)
    out = np.empty_like(u)
    out[1:-1] = u[2:] - 2.0 * u[1:-1] + u[:-2]
    out[0] = 2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]
    out[-1] = 2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]
    out /= h * h
    return np.moveaxis(out, 0, axis)


def diff_array(u: np.ndarray, alpha: Sequence[int], h: float) -> np.ndarray:
    """``D^alpha u`` for a single slice, ``|alpha| <= 3``.

    Each axis of order 1 uses :func:`d1`, order 2 uses :func:`d2` and order 3
    differentiates the second-derivative field once more.
    """
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != u.ndim:
        raise ValueError(f"multi-index {alpha} does not match {u.ndim} axes")
    if any(a < 0 for a in alpha):
        raise ValueError("multi-index entries must be nonnegative")
    if sum(alpha) > 3:
        raise ValueError(f"derivative order {sum(alpha)} > 3 is unsupported")
    out = u
    for ax, a in enumerate(alpha):
        if a == 1:
            out = d1(out, h, ax)
        elif a == 2:
            out = d2(out, h, ax)
        elif a == 3:
            out = d1(d2(out, h, ax), h, ax)
    return out if out is not u else u.copy()


def diff(field: Field, t_idx: int, alpha: Sequence[int]) -> Field:
    """Derivative field ``D^alpha u`` at time level ``t_idx``."""
    vals = diff_array(field.values[t_idx], alpha, field.grid.h)
    return Field(field.grid, field.times[t_idx : t_idx + 1], vals[None])


def diffusion_array(u: np.ndarray, h: float, sigma: float, beta: float) -> np.ndarray:
    """``sigma sum_j d_jj u + beta sum_{j,k} d_jk u`` for a single slice."""
    out = np.zeros_like(u)
    N = u.ndim
    if sigma != 0.0:
        for j in range(N):
            out += sigma * d2(u, h, j)
    if beta != 0.0:
        firsts = [d1(u, h, j) for j in range(N)]
        for j in range(N):
            out += beta * d2(u, h, j)
            for k in range(N):
                if k != j:
                    out += beta * d1(firsts[j], h, k)
    return out


def diffusion_apply(field: Field, t_idx: int, sigma: float, beta: float) -> Field:
    """``tr((sigma I + beta J) D^2 u)`` at time level ``t_idx``."""
    vals = diffusion_array(field.values[t_idx], field.grid.h, sigma, beta)
    return Field(field.grid, field.times[t_idx : t_idx + 1], vals[None])


# ---------------------------------------------------------------- interpolation


def _clamp(grid: TensorGrid, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    clamped = np.clip(x, -grid.L, grid.L)
    outside = np.any(clamped != x, axis=-1)
    return clamped, outside


def interp_space(grid: TensorGrid, values: np.ndarray, x: np.ndarray):
    """Multilinear interpolation of one slice at points ``x`` of shape (..., N).

    ``values`` may carry trailing component axes beyond the N grid axes.
    Returns ``(interpolated, outside)`` where ``outside`` flags clamped points.
    """
    xc, outside = _clamp(grid, x)
    interp = RegularGridInterpolator(
        (grid.nodes,) * grid.N, values, method="linear", bounds_error=False, fill_value=None
    )
    flat = xc.reshape(-1, grid.N)
    out = interp(flat)
    return out.reshape(xc.shape[:-1] + values.shape[grid.N :]), outside


def time_bracket(times: np.ndarray, t: float) -> tuple[int, int, float]:
    """Indices ``(k0, k1)`` and weight ``w`` with ``t = (1-w) t_k0 + w t_k1``."""
    times = np.asarray(times)
    if len(times) == 1:
        return 0, 0, 0.0
    t = float(np.clip(t, times[0], times[-1]))
    k1 = int(np.searchsorted(times, t, side="left"))
    if k1 == 0:
        return 0, 0, 0.0
    k0 = k1 - 1
    if times[k1] == t:
        return k1, k1, 0.0
    w = (t - times[k0]) / (times[k1] - times[k0])
    return k0, k1, float(w)


def interpolate(field: Field, t: float, x) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``field`` at time ``t`` and points ``x`` (shape (..., N)).

    Linear in time, multilinear in space.  Points outside the box are clamped
    to it; the second return value flags them.
    """
    k0, k1, w = time_bracket(field.times, t)
    v0, outside = interp_space(field.grid, field.values[k0], x)
    if k1 == k0 or w == 0.0:
        return v0, outside
    v1, _ = interp_space(field.grid, field.values[k1], x)
    return (1.0 - w) * v0 + w * v1, outside


# ---------------------------------------------------------------- serialization


def save_field(path: str | Path, field: Field) -> None:
    """Write ``field`` as magic + header length + JSON header + little-endian f64."""
    header = {
        "grid": field.grid.to_dict(),
        "times": [float(t) for t in field.times],
        "shape": list(field.values.shape),
        "dtype": "<f8",
        "order": "C",
        "meta": field.meta,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    data = np.ascontiguousarray(field.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(data.tobytes(order="C"))


def load_field(path: str | Path) -> Field:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a field container")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    g = header["grid"]
    grid = TensorGrid(int(g["N"]), int(g["n"]), float(g["L"]))
    values = data.reshape(header["shape"]).astype(float)
    return Field(grid, np.array(header["times"]), values, header.get("meta", {}))
