"""Pointwise linear algebra on grids of small matrices (last two axes)."""
from __future__ import annotations

import numpy as np


def dag(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched matrix product; unrolled for 2x2 blocks, where it beats ``@``."""
    if a.shape[-2:] != (2, 2) or b.shape[-2:] != (2, 2):
        return a @ b
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    a0, a1, a2, a3 = a[..., 0, 0], a[..., 0, 1], a[..., 1, 0], a[..., 1, 1]
    b0, b1, b2, b3 = b[..., 0, 0], b[..., 0, 1], b[..., 1, 0], b[..., 1, 1]
    out[..., 0, 0] = a0 * b0 + a1 * b2
    out[..., 0, 1] = a0 * b1 + a1 * b3
    out[..., 1, 0] = a2 * b0 + a3 * b2
    out[..., 1, 1] = a2 * b1 + a3 * b3
    return out


def herm(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + dag(m))


def det2(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def inv(m: np.ndarray) -> np.ndarray:
    """Batched inverse; closed form for 1x1 and 2x2 blocks."""
    r = m.shape[-1]
    if r == 1 or r == 2:
        d = m[..., 0, 0] if r == 1 else det2(m)
        if np.any(d == 0):
            raise np.linalg.LinAlgError("Singular matrix")
    if r == 1:
        return 1.0 / m
    if r == 2:
        out = np.empty_like(m, dtype=np.result_type(m, float))
        out[..., 0, 0] = m[..., 1, 1] / d
        out[..., 1, 1] = m[..., 0, 0] / d
        out[..., 0, 1] = -m[..., 0, 1] / d
        out[..., 1, 0] = -m[..., 1, 0] / d
        return out
    return np.linalg.inv(m)


def trace(m: np.ndarray) -> np.ndarray:
    return np.trace(m, axis1=-2, axis2=-1)


def eye_field(shape: tuple[int, ...], r: int) -> np.ndarray:
    return np.broadcast_to(np.eye(r, dtype=complex), shape + (r, r)).copy()


def adjoint(m: np.ndarray, metric: np.ndarray, metric_inv: np.ndarray | None = None) -> np.ndarray:
    """Adjoint of an endomorphism with respect to a Hermitian metric matrix."""
    if metric_inv is None:
        metric_inv = inv(metric)
    return mm(mm(metric_inv, dag(m)), metric)


def norm2(m: np.ndarray, metric: np.ndarray | None = None,
          metric_inv: np.ndarray | None = None) -> np.ndarray:
    """``Tr(m m^*)`` with ``*`` the adjoint for ``metric`` (identity if omitted)."""
    if metric is None:
        return np.real(np.sum(np.abs(m) ** 2, axis=(-2, -1)))
    return np.real(trace(mm(m, adjoint(m, metric, metric_inv))))


def hom_norm2(m: np.ndarray, target: np.ndarray, source_inv: np.ndarray) -> np.ndarray:
    """``Tr(m source^{-1} m^dag target)`` for ``m`` in Hom(source, target)."""
    return np.real(trace(m @ source_inv @ dag(m) @ target))


def sqrtm_psd(h: np.ndarray, floor: float = 1e-14) -> np.ndarray:
    """Positive square root of Hermitian positive matrices."""
    w, v = np.linalg.eigh(herm(h))
    if np.any(w <= 0):
        raise np.linalg.LinAlgError("matrix field not positive definite")
    w = np.maximum(w, floor)
    return (v * np.sqrt(w)[..., None, :]) @ dag(v)


def expm_herm(y: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(herm(y))
    return (v * np.exp(w)[..., None, :]) @ dag(v)


def min_eig(h: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the Hermitian part; closed form for r <= 2."""
    r = h.shape[-1]
    if r == 1:
        return np.real(h[..., 0, 0])
    if r == 2:
        a = np.real(h[..., 0, 0])
        d = np.real(h[..., 1, 1])
        b = 0.5 * (h[..., 0, 1] + np.conj(h[..., 1, 0]))
        return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + np.abs(b) ** 2)
    return np.linalg.eigvalsh(herm(h))[..., 0]


def expm_real_spectrum(x: np.ndarray) -> np.ndarray:
    """``exp(x)`` for matrices similar to Hermitian ones (real eigenvalues).

    Closed form for r <= 2 via ``x = a + B``, ``B^2 = lam^2``; ``None`` otherwise.
    """
    r = x.shape[-1]
    if r == 1:
        return np.exp(np.real(x))
    if r != 2:
        return None
    a = 0.5 * (x[..., 0, 0] + x[..., 1, 1])
    B = x - a[..., None, None] * np.eye(2)
    lam2 = np.maximum(np.real(-det2(B)), 0.0)
    lam = np.sqrt(lam2)
    # sinh(lam)/lam, with the series near zero
    small = lam < 1e-4
    shc = np.where(small, 1 + lam2 / 6, np.sinh(lam) / np.where(small, 1.0, lam))
    ea = np.exp(np.real(a))
    return (ea * np.cosh(lam))[..., None, None] * np.eye(2) + (ea * shc)[..., None, None] * B


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return mm(a, b) - mm(b, a)
