"""Flat complex tori discretized on periodic grids.

Each complex direction ``j`` has real coordinates ``(x_j, y_j)`` in ``[0, 1)^2``
and complex coordinate ``z_j = x_j + tau_j * y_j``.  Array axes are ordered
``(x_1, y_1, x_2, y_2, ...)``.  The Riemannian metric is
``metric_scale * sum_j |dz_j|^2`` with ``metric_scale`` fixed by unit volume,
so ``g_{j kbar} = metric_scale / 2 * delta_jk`` and the Kahler form is
``omega = i g_{j kbar} dz^j ^ dz^kbar``.

Fields living in line-bundle twists carry an integer *charge* per complex
direction.  A charged field obeys ``f(x_j + 1) = exp(2 pi i q y_j) f(x_j)`` and
is differentiated with the reference connection ``A_{y_j} = -2 pi i q x_j``
(Landau gauge), which realizes constant curvature of degree ``q``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "LatticeTorus",
    "build_torus",
    "d_real",
    "d_holo",
    "d_antiholo",
    "laplacian",
    "integrate",
    "lambda_contract",
    "kahler_form",
]


@dataclass(frozen=True, eq=False)
class LatticeTorus:
    n: int
    tau: tuple[complex, ...]
    grid: tuple[int, ...]
    metric_scale: float
    spacing: tuple[float, ...]
    _coords: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid

    @property
    def npoints(self) -> int:
        return int(np.prod(self.grid))

    @property
    def cell_volume(self) -> float:
        return 1.0 / self.npoints

    @property
    def ginv(self) -> float:
        """Diagonal entry of the inverse metric ``g^{j jbar}``."""
        return 2.0 / self.metric_scale

    @property
    def coord_step(self) -> tuple[float, ...]:
        return tuple(1.0 / m for m in self.grid)

    def coord(self, axis: int) -> np.ndarray:
        """Coordinate values along ``axis``, shaped to broadcast over the grid."""
        return self._coords[axis]

    def volume(self) -> float:
        return float(integrate(self, np.ones(self.grid)).real)

    def min_spacing(self) -> float:
        return min(self.spacing)

    def displacement_length(self, offsets: np.ndarray) -> np.ndarray:
        """Flat-metric length of integer grid offsets, shape ``(..., 2n)``."""
        offsets = np.asarray(offsets, dtype=float)
        total = np.zeros(offsets.shape[:-1])
        for j in range(self.n):
            dx = offsets[..., 2 * j] / self.grid[2 * j]
            dy = offsets[..., 2 * j + 1] / self.grid[2 * j + 1]
            total = total + np.abs(dx + self.tau[j] * dy) ** 2
        return np.sqrt(self.metric_scale * total)


def build_torus(n: int, tau: Sequence[complex], grid: Sequence[int]) -> LatticeTorus:
    """Build a unit-volume flat torus of complex dimension ``n``."""
    if n not in (1, 2):
        raise ValueError(f"complex dimension must be 1 or 2, got {n}")
    tau = tuple(complex(t) for t in tau)
    grid = tuple(int(g) for g in grid)
    if len(tau) != n:
        raise ValueError(f"expected {n} moduli, got {len(tau)}")
    if len(grid) != 2 * n:
        raise ValueError(f"expected {2 * n} grid sizes, got {len(grid)}")
    for t in tau:
        if not t.imag > 0:
            raise ValueError(f"moduli need Im(tau) > 0, got {t}")
    for g in grid:
        if g < 8 or g % 2:
            raise ValueError(f"grid sizes must be even and >= 8, got {g}")

    im = np.array([t.imag for t in tau])
    scale = float(np.prod(im) ** (-1.0 / n))
    spacing = []
    for j in range(n):
        spacing.append(np.sqrt(scale) / grid[2 * j])
        spacing.append(np.sqrt(scale) * abs(tau[j]) / grid[2 * j + 1])

    coords = []
    for a, m in enumerate(grid):
        shape = [1] * (2 * n)
        shape[a] = m
        coords.append((np.arange(m) / m).reshape(shape))
    return LatticeTorus(n, tau, grid, scale, tuple(spacing), tuple(coords))


def _charge_along(torus: LatticeTorus, f: np.ndarray, charge, j: int):
    """Charge of direction ``j`` shaped to broadcast against ``f``."""
    if charge is None:
        return None
    q = np.asarray(charge)[j]
    if not np.any(q):
        return None
    extra = f.ndim - 2 * torus.n
    q = np.broadcast_to(q, f.shape[2 * torus.n:]) if extra else q
    return q.reshape((1,) * (2 * torus.n) + q.shape)


def _with_trailing(torus: LatticeTorus, arr: np.ndarray, f: np.ndarray) -> np.ndarray:
    return arr.reshape(arr.shape + (1,) * (f.ndim - 2 * torus.n))


def _shift(torus: LatticeTorus, f: np.ndarray, axis: int, step: int, q) -> np.ndarray:
    """Neighbour values ``f(x + step * e_axis)`` with the twist applied on wrap."""
    g = np.roll(f, -step, axis=axis)
    if q is None or axis % 2:
        return g
    g = g.astype(complex, copy=False)
    j = axis // 2
    y = _with_trailing(torus, torus.coord(2 * j + 1), f)
    sl = [slice(None)] * f.ndim
    sl[axis] = slice(-1, None) if step > 0 else slice(0, 1)
    sign = 1.0 if step > 0 else -1.0
    g[tuple(sl)] = g[tuple(sl)] * np.exp(sign * 2j * np.pi * q * y)
    return g


def d_real(torus: LatticeTorus, f: np.ndarray, axis: int, charge=None) -> np.ndarray:
    """Covariant central difference along one real axis."""
    f = np.asarray(f)
    _check_shape(torus, f)
    q = _charge_along(torus, f, charge, axis // 2)
    h = torus.coord_step[axis]
    out = (_shift(torus, f, axis, 1, q) - _shift(torus, f, axis, -1, q)) / (2 * h)
    if q is not None and axis % 2:
        x = _with_trailing(torus, torus.coord(axis - 1), f)
        out = out - 2j * np.pi * q * x * f
    return out


def d_holo(torus: LatticeTorus, f: np.ndarray, charge=None) -> np.ndarray:
    """(1,0) covariant derivative; returns components stacked on a new axis 0."""
    out = []
    for j in range(torus.n):
        t = torus.tau[j]
        dx = d_real(torus, f, 2 * j, charge)
        dy = d_real(torus, f, 2 * j + 1, charge)
        out.append((dy - np.conj(t) * dx) / (2j * t.imag))
    return np.stack(out)


def d_antiholo(torus: LatticeTorus, f: np.ndarray, charge=None) -> np.ndarray:
    """(0,1) covariant derivative; returns components stacked on a new axis 0."""
    out = []
    for j in range(torus.n):
        t = torus.tau[j]
        dx = d_real(torus, f, 2 * j, charge)
        dy = d_real(torus, f, 2 * j + 1, charge)
        out.append((t * dx - dy) / (2j * t.imag))
    return np.stack(out)


def laplacian(torus: LatticeTorus, f: np.ndarray, charge=None) -> np.ndarray:
    """``g^{j kbar} D_j D_kbar f`` built from the composed first-order stencils."""
    dbar = d_antiholo(torus, f, charge)
    out = np.zeros(np.shape(f), dtype=complex)
    for j in range(torus.n):
        out = out + torus.ginv * d_holo(torus, dbar[j], charge)[j]
    return out


def integrate(torus: LatticeTorus, f: np.ndarray) -> complex:
    """Midpoint rule over the grid; leading axes are the grid, trailing kept."""
    f = np.asarray(f)
    _check_shape(torus, f)
    axes = tuple(range(2 * torus.n))
    return np.sum(f, axis=axes) * torus.cell_volume


def lambda_contract(torus: LatticeTorus, form: np.ndarray) -> np.ndarray:
    """Contract a (1,1)-form with the Kahler form.

    ``form`` holds components ``F_{j kbar}`` on axes ``(0, 1)``.  The convention
    is ``Lambda(i a dz^j ^ dz^kbar) = g^{j kbar} a``, so ``Lambda(omega) = n``.
    """
    out = 0
    for j in range(torus.n):
        out = out + form[j, j]
    return -1j * torus.ginv * out


def kahler_form(torus: LatticeTorus, rank: int | None = None) -> np.ndarray:
    """Components ``i g_{j kbar}`` of omega, optionally times the identity."""
    n = torus.n
    g = np.zeros((n, n) + torus.grid, dtype=complex)
    for j in range(n):
        g[j, j] = 1j * torus.metric_scale / 2
    if rank is None:
        return g
    return g[..., None, None] * np.eye(rank)


def _check_shape(torus: LatticeTorus, f: np.ndarray) -> None:
    if f.shape[: 2 * torus.n] != torus.grid:
        raise ValueError(f"field shape {f.shape} does not match grid {torus.grid}")
