"""Holomorphic bundles on lattice tori.

A bundle of rank ``r`` is a sum of line-bundle twists (``degrees[k]`` gives the
per-direction degree of component ``k``) carrying the unitary reference
connection of constant curvature, plus a holomorphic structure
``dbar_A = dbar_ref + beta`` where ``beta`` is an End(E)-valued (0,1)-form, and a
fixed metric ``h0``.  All matrices are written in the reference unitary frame.

Curvature convention: forms ``F = F_{j kbar} dz^j ^ dz^kbar`` are stored with
components on the two leading axes.  The moment map is
``K = (i/2pi) Lambda F``, normalized so a constant-curvature line bundle of
degree ``d`` on a unit-volume curve has ``K == d``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import linalg as la
from .manifold import LatticeTorus, d_antiholo, d_holo, integrate

DEGREE_UNITS = 1.0 / (2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class BundleSpec:
    torus: LatticeTorus
    degrees: np.ndarray          # (r, n) integer degrees of the twist components
    beta: np.ndarray             # (n, *grid, r, r) holomorphic-structure deformation
    h0: np.ndarray               # (*grid, r, r) fixed metric
    blocks: tuple[int, ...] = ()
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.degrees.shape[0]

    @property
    def end_charge(self) -> np.ndarray:
        return hom_charge(self.degrees, self.degrees)

    @property
    def section_charge(self) -> np.ndarray:
        return hom_charge(self.degrees, np.zeros((1, self.torus.n), dtype=int))

    @property
    def degree(self) -> float:
        return topological_degree(self.torus, self.degrees)

    @property
    def h0_inv(self) -> np.ndarray:
        # cached per instance; dataclasses.replace builds a fresh one
        cached = self.__dict__.get("_h0_inv")
        if cached is None:
            cached = la.inv(self.h0)
            object.__setattr__(self, "_h0_inv", cached)
        return cached


@dataclass(frozen=True, eq=False)
class CurvatureField:
    values: np.ndarray           # (n, n, *grid, r, r)
    metric_used: np.ndarray      # (*grid, r, r)
    tag: str = "H"


def hom_charge(target: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Charge array ``(n, r_target, r_source)`` of Hom(source, target) entries."""
    target = np.atleast_2d(target)
    source = np.atleast_2d(source)
    return (target.T[:, :, None] - source.T[:, None, :]).astype(int)


def topological_degree(torus: LatticeTorus, degrees: np.ndarray) -> float:
    """Omega-degree of a sum of twists, in the units where ``K`` integrates to it."""
    degrees = np.atleast_2d(degrees)
    im = np.array([t.imag for t in torus.tau])
    return float(np.sum(degrees / (torus.metric_scale * im)))


def reference_curvature(torus: LatticeTorus, degrees: np.ndarray) -> np.ndarray:
    """Analytic curvature of the Landau-gauge reference connection."""
    n, r = torus.n, degrees.shape[0]
    F = np.zeros((n, n) + torus.grid + (r, r), dtype=complex)
    for j in range(n):
        diag = np.pi * degrees[:, j] / torus.tau[j].imag
        F[j, j] = np.diag(diag.astype(complex))
    return F


def twist_phase(torus: LatticeTorus, charge: np.ndarray, j: int, y) -> np.ndarray:
    """Transition factor across ``x_j -> x_j + 1`` for fields of given charge."""
    return np.exp(2j * np.pi * np.asarray(charge)[j] * y)


def cocycle_residual(b: BundleSpec, samples: int = 64) -> float:
    """Failure of the transition functions to commute around each 2-face."""
    y = np.linspace(0.0, 1.0, samples, endpoint=False)
    worst = 0.0
    q = b.degrees.T
    for j in range(b.torus.n):
        lhs = twist_phase(b.torus, q, j, y[:, None] + 1.0)
        rhs = twist_phase(b.torus, q, j, y[:, None])
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def flux_winding(torus: LatticeTorus, degrees: np.ndarray, samples: int = 256) -> np.ndarray:
    """Winding of each transition phase around the dual cycle, per component."""
    y = np.linspace(0.0, 1.0, samples + 1)
    out = np.zeros(degrees.shape[0])
    q = np.atleast_2d(degrees).T
    for j in range(torus.n):
        ph = twist_phase(torus, q, j, y[:, None])
        steps = np.angle(ph[1:] / ph[:-1])
        out += steps.sum(axis=0) / (2 * np.pi) / (torus.metric_scale * torus.tau[j].imag)
    return out


def _theta(w: np.ndarray, tau: complex, terms: int = 30) -> np.ndarray:
    m = np.arange(-terms, terms + 1)
    shape = (len(m),) + (1,) * np.ndim(w)
    m = m.reshape(shape)
    return np.sum(np.exp(1j * np.pi * m**2 * tau + 2j * np.pi * m * w), axis=0)


def theta_section(torus: LatticeTorus, j: int, power: int = 1) -> np.ndarray:
    """Holomorphic section of the degree-``power`` twist in direction ``j``.

    The degree-one section vanishes simply at ``x_j = y_j = 1/2``; higher powers
    are products and vanish there to that order.
    """
    t = torus.tau[j]
    x = torus.coord(2 * j)
    y = torus.coord(2 * j + 1)
    z = x + t * y
    f = np.exp(-1j * np.pi * x**2 / t) * _theta(z / t, -1.0 / t)
    f = np.broadcast_to(f, torus.grid)
    return f**power


def twisted_bump(torus: LatticeTorus, charge: Sequence[int], mode: int = 1) -> np.ndarray:
    """Smooth non-holomorphic field with the given charge vector."""
    out = np.ones(torus.grid, dtype=complex)
    for j, q in enumerate(charge):
        if q > 0:
            out = out * theta_section(torus, j, q)
        elif q < 0:
            out = out * np.conj(theta_section(torus, j, -q))
        x = torus.coord(2 * j)
        y = torus.coord(2 * j + 1)
        out = out * (1.0 + 0.5 * np.cos(2 * np.pi * mode * x) + 0.25 * np.sin(2 * np.pi * mode * y))
    return out


def perturbed_metric(torus: LatticeTorus, degrees: np.ndarray, amplitude: float) -> np.ndarray:
    """Smooth positive metric ``exp(amplitude * Phi)`` with Phi built from charge-zero entries."""
    r = degrees.shape[0]
    charge = hom_charge(degrees, degrees)
    phi = np.zeros(torus.grid + (r, r), dtype=complex)
    for j in range(torus.n):
        x = torus.coord(2 * j)
        y = torus.coord(2 * j + 1)
        for k in range(r):
            phi[..., k, k] += np.cos(2 * np.pi * (x + (k + 1) * y)) + 0.5 * np.sin(2 * np.pi * (k + 1) * x)
            for l in range(k + 1, r):
                if not np.any(charge[:, k, l]):
                    val = 0.5 * np.exp(2j * np.pi * (x - y))
                    phi[..., k, l] += val
                    phi[..., l, k] += np.conj(val)
    return la.expm_herm(amplitude * phi)


def make_line_bundle(torus: LatticeTorus, degree, name: str = "") -> BundleSpec:
    """Rank-one twist with its constant-curvature unitary metric."""
    d = np.zeros((1, torus.n), dtype=int)
    if np.ndim(degree) == 0:
        d[0, 0] = int(degree)
    else:
        d[0, :] = np.asarray(degree, dtype=int)
    beta = np.zeros((torus.n,) + torus.grid + (1, 1), dtype=complex)
    h0 = la.eye_field(torus.grid, 1)
    return BundleSpec(torus, d, beta, h0, blocks=(1,), name=name or f"L{d[0].tolist()}")


def _block(b1: BundleSpec, b2: BundleSpec, upper: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    r1, r2 = b1.rank, b2.rank
    n, grid = b1.torus.n, b1.torus.grid
    beta = np.zeros((n,) + grid + (r1 + r2, r1 + r2), dtype=complex)
    beta[..., :r1, :r1] = b1.beta
    beta[..., r1:, r1:] = b2.beta
    if upper is not None:
        beta[..., :r1, r1:] = upper
    h0 = np.zeros(grid + (r1 + r2, r1 + r2), dtype=complex)
    h0[..., :r1, :r1] = b1.h0
    h0[..., r1:, r1:] = b2.h0
    return beta, h0


def direct_sum(b1: BundleSpec, b2: BundleSpec) -> BundleSpec:
    if b1.torus is not b2.torus:
        raise ValueError("bundles live on different tori")
    beta, h0 = _block(b1, b2, None)
    degrees = np.vstack([b1.degrees, b2.degrees])
    return BundleSpec(b1.torus, degrees, beta, h0, blocks=(b1.rank, b2.rank),
                      name=f"{b1.name}+{b2.name}")


def hom_dbar_closedness(torus: LatticeTorus, sub: BundleSpec, quot: BundleSpec,
                        cls: np.ndarray) -> float:
    """Max norm of the (0,2) part of ``dbar_Hom(cls)`` for Hom(quot, sub)."""
    if torus.n == 1:
        return 0.0
    charge = hom_charge(sub.degrees, quot.degrees)
    d = [d_antiholo(torus, cls[m], charge) for m in range(torus.n)]
    res = (d[1][0] - d[0][1]
           + sub.beta[0] @ cls[1] - sub.beta[1] @ cls[0]
           + cls[0] @ quot.beta[1] - cls[1] @ quot.beta[0])
    return float(np.sqrt(np.max(la.norm2(res))))


def extension(sub: BundleSpec, quot: BundleSpec, cls: np.ndarray, tol: float = 1e-8) -> BundleSpec:
    """Extension ``0 -> sub -> E -> quot -> 0`` with the given class representative.

    ``cls`` is a Hom(quot, sub)-valued (0,1)-form of shape ``(n, *grid, s, q)``.
    """
    torus = sub.torus
    if quot.torus is not torus:
        raise ValueError("bundles live on different tori")
    expected = (torus.n,) + torus.grid + (sub.rank, quot.rank)
    if cls.shape != expected:
        raise ValueError(f"extension class has shape {cls.shape}, expected {expected}")
    res = hom_dbar_closedness(torus, sub, quot, cls)
    if res > tol:
        raise ValueError(f"extension class not dbar-closed (residual {res:.3e})")
    beta, h0 = _block(sub, quot, cls)
    degrees = np.vstack([sub.degrees, quot.degrees])
    return BundleSpec(torus, degrees, beta, h0, blocks=(sub.rank, quot.rank),
                      name=f"ext({sub.name},{quot.name})")


def extension_class(torus: LatticeTorus, sub: BundleSpec, quot: BundleSpec,
                    constant: Sequence[complex] = (), exact_amplitude: float = 0.0,
                    mode: int = 1) -> np.ndarray:
    """Class representative ``constant + amplitude * dbar(chi)`` for Hom(quot, sub).

    Constant forms are only admissible for untwisted (charge-zero) entries.
    """
    charge = hom_charge(sub.degrees, quot.degrees)
    s, q = sub.rank, quot.rank
    cls = np.zeros((torus.n,) + torus.grid + (s, q), dtype=complex)
    const = list(constant) + [0.0] * (torus.n - len(constant))
    for a in range(s):
        for c in range(q):
            qv = charge[:, a, c]
            if any(const) and np.any(qv):
                raise ValueError("constant extension class needs an untwisted Hom entry")
            if not np.any(qv):
                for j in range(torus.n):
                    cls[j, ..., a, c] += const[j]
            if exact_amplitude:
                chi = exact_amplitude * twisted_bump(torus, qv, mode)
                dchi = d_antiholo(torus, chi, qv)
                cls[..., a, c] += dchi
    return cls


def end_connection(torus: LatticeTorus, degrees: np.ndarray, beta: np.ndarray,
                   H: np.ndarray, Hinv: np.ndarray | None = None) -> np.ndarray:
    """(1,0) part ``alpha'`` of the Chern connection of ``(dbar_ref + beta, H)``.

    The full End-valued connection is ``D_ref + alpha' + beta``.
    """
    if Hinv is None:
        Hinv = la.inv(H)
    charge = hom_charge(degrees, degrees)
    dH = d_holo(torus, H, charge)
    return np.stack([la.mm(Hinv, dH[j] - la.mm(la.dag(beta[j]), H)) for j in range(torus.n)])


def chern_curvature_of(torus: LatticeTorus, degrees: np.ndarray, beta: np.ndarray,
                       H: np.ndarray, Hinv: np.ndarray | None = None) -> np.ndarray:
    """Chern curvature components ``F_{j kbar}`` of ``(dbar_ref + beta, H)``."""
    if Hinv is None:
        Hinv = la.inv(H)
    n = torus.n
    charge = hom_charge(degrees, degrees)
    alpha = end_connection(torus, degrees, beta, H, Hinv)
    F = reference_curvature(torus, degrees)
    dalpha = [d_antiholo(torus, alpha[j], charge) for j in range(n)]
    if not np.any(beta):
        for j in range(n):
            for k in range(n):
                F[j, k] -= dalpha[j][k]
        return F
    dbeta = [d_holo(torus, beta[k], charge) for k in range(n)]
    for j in range(n):
        for k in range(n):
            F[j, k] += dbeta[k][j] - dalpha[j][k] + la.commutator(alpha[j], beta[k])
    return F


def moment_map(torus: LatticeTorus, F: np.ndarray) -> np.ndarray:
    """``K = (i/2pi) Lambda F``."""
    return DEGREE_UNITS * torus.ginv * sum(F[j, j] for j in range(torus.n))


def curvature_norm2(torus: LatticeTorus, F: np.ndarray, H: np.ndarray | None = None,
                    Hinv: np.ndarray | None = None) -> np.ndarray:
    """Pointwise ``|F|^2`` summed over form components with the metric ``H``."""
    n = torus.n
    if H is not None and Hinv is None:
        Hinv = la.inv(H)
    return sum(torus.ginv**2 * la.norm2(F[j, k], H, Hinv) for j in range(n) for k in range(n))


def background_curvature(b: BundleSpec) -> CurvatureField:
    F = chern_curvature_of(b.torus, b.degrees, b.beta, b.h0)
    return CurvatureField(F, b.h0, tag="H0")


def integrability_check(b: BundleSpec) -> float:
    """Max norm of the discrete ``dbar_A^2`` commutator on End(E)."""
    torus = b.torus
    if torus.n == 1:
        return 0.0
    charge = b.end_charge
    d = [d_antiholo(torus, b.beta[m], charge) for m in range(torus.n)]
    res = d[1][0] - d[0][1] + la.commutator(b.beta[0], b.beta[1])
    return float(np.sqrt(np.max(la.norm2(res))))


def computed_degree(b: BundleSpec) -> float:
    """``integral Tr K_0`` from the discrete background curvature."""
    K0 = moment_map(b.torus, background_curvature(b).values)
    return float(integrate(b.torus, la.trace(K0)).real)


def gauge_transform_bundle(b: BundleSpec, u: np.ndarray) -> BundleSpec:
    """Change of frame ``s -> u^{-1} s`` applied to ``beta`` and ``h0``."""
    torus = b.torus
    uinv = la.inv(u)
    du = d_antiholo(torus, u, b.end_charge)
    beta = np.stack([uinv @ b.beta[k] @ u + uinv @ du[k] for k in range(torus.n)])
    h0 = la.herm(la.dag(u) @ b.h0 @ u)
    return replace(b, beta=beta, h0=h0)
