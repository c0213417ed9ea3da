"""Declared filtrations: induced metrics, second fundamental form, curvature
decomposition, slope bookkeeping and the barrier function.

A stage is given by a holomorphic inclusion ``B: S -> E`` (an ``r x s`` matrix
field whose entries are charged like Hom(S, E)) and, optionally, the holomorphic
quotient map ``p: E -> Q`` with ``p B = 0``.  ``S`` and ``Q`` are themselves sums
of twists with their own ``beta`` fields.  Points where ``B`` drops rank are
masked out of every inversion and integral.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import linalg as la
from .bundle import (DEGREE_UNITS, BundleSpec, chern_curvature_of, curvature_norm2,
                     end_connection, hom_charge, moment_map, theta_section, topological_degree)
from .manifold import LatticeTorus, d_antiholo, d_holo, integrate

RANK_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class SubsheafSpec:
    B: np.ndarray                 # (*grid, r, s) inclusion into E
    sub_degrees: np.ndarray       # (s, n)
    sub_beta: np.ndarray          # (n, *grid, s, s)
    expected_degree: float
    chain_position: int = 1
    p: np.ndarray | None = None   # (*grid, r - s, r) quotient map
    quot_degrees: np.ndarray | None = None
    quot_beta: np.ndarray | None = None

    @property
    def s(self) -> int:
        return self.B.shape[-1]


@dataclass(eq=False)
class InducedGeometry:
    J: np.ndarray
    M: np.ndarray | None
    pi: np.ndarray
    gamma: np.ndarray             # End(E)-valued, (n, *grid, r, r)
    gamma_qs: np.ndarray | None   # Hom(Q, S) in the S and Q frames, (n, *grid, s, q)
    FS: np.ndarray
    FQ: np.ndarray | None
    mask: np.ndarray              # True where the stage has full rank
    H: np.ndarray
    Hinv: np.ndarray
    Jinv: np.ndarray
    Minv: np.ndarray | None


def hom_dbar(torus: LatticeTorus, f: np.ndarray, target_deg, target_beta, source_deg,
             source_beta) -> np.ndarray:
    """``dbar`` of a Hom(source, target) field, components stacked on axis 0."""
    d = d_antiholo(torus, f, hom_charge(target_deg, source_deg))
    return np.stack([d[k] + target_beta[k] @ f - f @ source_beta[k] for k in range(torus.n)])


def hom_del(torus: LatticeTorus, f: np.ndarray, target_deg, target_alpha, source_deg,
            source_alpha) -> np.ndarray:
    """(1,0) Chern derivative of a Hom(source, target) field given both ``alpha'``."""
    d = d_holo(torus, f, hom_charge(target_deg, source_deg))
    return np.stack([d[j] + target_alpha[j] @ f - f @ source_alpha[j] for j in range(torus.n)])


def holomorphy_residual(b: BundleSpec, stage: SubsheafSpec) -> float:
    """Max norm of ``dbar B`` (and ``dbar p`` when declared)."""
    res = hom_dbar(b.torus, stage.B, b.degrees, b.beta, stage.sub_degrees, stage.sub_beta)
    worst = float(np.sqrt(np.max(sum(la.norm2(r) for r in res))))
    if stage.p is not None:
        rp = hom_dbar(b.torus, stage.p, stage.quot_degrees, stage.quot_beta, b.degrees, b.beta)
        worst = max(worst, float(np.sqrt(np.max(sum(la.norm2(r) for r in rp)))))
    return worst


def _zeros_beta(torus: LatticeTorus, r: int) -> np.ndarray:
    return np.zeros((torus.n,) + torus.grid + (r, r), dtype=complex)


def canonical_sub(b: BundleSpec) -> SubsheafSpec:
    """First block of a sum or extension, ``B = (1; 0)`` and ``p = (0 1)``."""
    if len(b.blocks) != 2:
        raise ValueError("canonical stage needs a two-block bundle")
    s, r = b.blocks[0], b.rank
    sl = (Ellipsis, slice(0, s), slice(0, s))
    ql = (Ellipsis, slice(s, r), slice(s, r))
    B = np.zeros(b.torus.grid + (r, s), dtype=complex)
    B[..., :s, :] = np.eye(s)
    p = np.zeros(b.torus.grid + (r - s, r), dtype=complex)
    p[..., :, s:] = np.eye(r - s)
    deg_s = b.degrees[:s]
    return SubsheafSpec(B, deg_s, b.beta[sl].copy(), topological_degree(b.torus, deg_s), 1,
                        p, b.degrees[s:], b.beta[ql].copy())


def coordinate_stage(b: BundleSpec, s: int, position: int = 1) -> SubsheafSpec:
    """Span of the first ``s`` frame vectors of a direct sum (no quotient map)."""
    r = b.rank
    B = np.zeros(b.torus.grid + (r, s), dtype=complex)
    B[..., :s, :] = np.eye(s)
    deg_s = b.degrees[:s]
    return SubsheafSpec(B, deg_s, b.beta[(Ellipsis, slice(0, s), slice(0, s))].copy(),
                        topological_degree(b.torus, deg_s), position)


def theta_pair_sub(b: BundleSpec) -> SubsheafSpec:
    """Trivial subsheaf of ``L(1,0) + L(0,1)`` on an n=2 torus cut out by two theta sections.

    ``B = (theta(z1); theta(z2))`` vanishes only where both sections do, a single
    grid point; the quotient is ``L(1,1)`` through ``p = (theta(z2), -theta(z1))``.
    """
    torus = b.torus
    if torus.n != 2 or b.degrees.tolist() != [[1, 0], [0, 1]]:
        raise ValueError("theta pair stage needs L(1,0) + L(0,1) on an n=2 torus")
    t1 = theta_section(torus, 0)
    t2 = theta_section(torus, 1)
    B = np.stack([t1, t2], axis=-1)[..., None]
    p = np.stack([t2, -t1], axis=-1)[..., None, :]
    deg_s = np.zeros((1, 2), dtype=int)
    return SubsheafSpec(B, deg_s, _zeros_beta(torus, 1), 0.0, 1, p,
                        np.array([[1, 1]]), _zeros_beta(torus, 1))


def gauge_stage(stage: SubsheafSpec, u: np.ndarray) -> SubsheafSpec:
    """Stage seen in the frame of ``gauge_transform_bundle(b, u)``."""
    p = None if stage.p is None else stage.p @ u
    return replace(stage, B=la.inv(u) @ stage.B, p=p)


def rank_mask(B: np.ndarray, H: np.ndarray, floor: float = RANK_FLOOR) -> np.ndarray:
    """True where the smallest singular value of ``B`` (in the metric H) is above the floor."""
    smin = np.sqrt(np.maximum(la.min_eig(la.dag(B) @ H @ B), 0.0))
    top = np.max(smin)
    return smin > floor * top if top > 0 else np.zeros(smin.shape, dtype=bool)


def _safe_inv(m: np.ndarray, mask: np.ndarray) -> np.ndarray:
    m = m.copy()
    m[~mask] = np.eye(m.shape[-1])
    return la.inv(m)


def induced_metrics(B: np.ndarray, H: np.ndarray, p: np.ndarray | None = None,
                    Hinv: np.ndarray | None = None, mask: np.ndarray | None = None):
    """``J = B^dag H B`` on S and ``M = (p H^{-1} p^dag)^{-1}`` on Q.

    Degenerate points keep their raw ``J``; ``M`` is set to the identity there.
    """
    if mask is None:
        mask = rank_mask(B, H)
    J = la.herm(la.dag(B) @ H @ B)
    M = None
    if p is not None:
        if Hinv is None:
            Hinv = la.inv(H)
        Minv = la.herm(p @ Hinv @ la.dag(p))
        M = la.herm(_safe_inv(Minv, mask))
        M[~mask] = np.eye(M.shape[-1])
    return J, M


def projection_and_gamma(b: BundleSpec, stage: SubsheafSpec, H: np.ndarray,
                         J: np.ndarray | None = None, mask: np.ndarray | None = None):
    """H-orthogonal projection onto S and ``gamma = -dbar(pi)`` (End(E)-valued)."""
    if mask is None:
        mask = rank_mask(stage.B, H)
    if J is None:
        J = la.herm(la.dag(stage.B) @ H @ stage.B)
    Jinv = _safe_inv(J, mask)
    pi = stage.B @ Jinv @ la.dag(stage.B) @ H
    pi[~mask] = 0
    dpi = hom_dbar(b.torus, pi, b.degrees, b.beta, b.degrees, b.beta)
    gamma = -dpi
    gamma[:, ~mask] = 0
    return pi, gamma


def geometry(b: BundleSpec, stage: SubsheafSpec, H: np.ndarray,
             mask: np.ndarray | None = None) -> InducedGeometry:
    """Everything induced on the stage by the metric ``H``."""
    torus = b.torus
    if mask is None:
        mask = rank_mask(stage.B, H)
    Hinv = la.inv(H)
    J, M = induced_metrics(stage.B, H, stage.p, Hinv, mask)
    Jm = J.copy()
    Jm[~mask] = np.eye(stage.s)
    Jinv = la.inv(Jm)
    pi, gamma = projection_and_gamma(b, stage, H, J, mask)
    FS = chern_curvature_of(torus, stage.sub_degrees, stage.sub_beta, Jm, Jinv)
    FS[:, :, ~mask] = 0
    FQ = gamma_qs = Minv = None
    if stage.p is not None:
        Minv = la.inv(M)
        FQ = chern_curvature_of(torus, stage.quot_degrees, stage.quot_beta, M, Minv)
        FQ[:, :, ~mask] = 0
        psplit = Hinv @ la.dag(stage.p) @ M
        gamma_qs = Jinv @ la.dag(stage.B) @ H @ gamma @ psplit
        gamma_qs[:, ~mask] = 0
    return InducedGeometry(J, M, pi, gamma, gamma_qs, FS, FQ, mask, H, Hinv, Jinv, Minv)


def gamma_norm2(torus: LatticeTorus, geo: InducedGeometry) -> np.ndarray:
    """Pointwise ``|gamma|^2 = g^{k kbar} |gamma_kbar|^2_H``."""
    return torus.ginv * sum(la.norm2(geo.gamma[k], geo.H, geo.Hinv) for k in range(torus.n))


def gamma_qs_norm2(torus: LatticeTorus, geo: InducedGeometry) -> np.ndarray:
    """Same norm computed on the Hom(Q, S) representation with J and M."""
    return torus.ginv * sum(la.hom_norm2(geo.gamma_qs[k], geo.J, geo.Minv)
                            for k in range(torus.n))


def restrict_sub(stage: SubsheafSpec, geo: InducedGeometry, X: np.ndarray) -> np.ndarray:
    """Compression ``X|_S = J^{-1} B^dag H X B`` in the S frame."""
    out = geo.Jinv @ la.dag(stage.B) @ geo.H @ X @ stage.B
    out[~geo.mask] = 0
    return out


def restrict_quot(stage: SubsheafSpec, geo: InducedGeometry, X: np.ndarray) -> np.ndarray:
    """Compression ``X|_Q = p X p^dag`` with ``p^dag = H^{-1} p^* M`` in the Q frame."""
    out = stage.p @ X @ geo.Hinv @ la.dag(stage.p) @ geo.M
    out[~geo.mask] = 0
    return out


@dataclass
class Decomposition:
    KS: np.ndarray
    KQ: np.ndarray | None
    PS: np.ndarray
    PQ: np.ndarray | None
    K_sub: np.ndarray
    K_quot: np.ndarray | None
    residual_S: float
    residual_Q: float | None

    @property
    def residual(self) -> float:
        return max(self.residual_S, self.residual_Q or 0.0)


def curvature_decompose(b: BundleSpec, stage: SubsheafSpec, geo: InducedGeometry,
                        K: np.ndarray) -> Decomposition:
    """Check ``K|_S = K^S + P_S`` and ``K|_Q = K^Q - P_Q`` pointwise.

    ``P_S`` and ``P_Q`` are the contracted ``gamma gamma^*`` and ``gamma^* gamma``
    terms (both positive), carried in the same degree units as ``K``.
    """
    torus = b.torus
    c = DEGREE_UNITS * torus.ginv
    KS = moment_map(torus, geo.FS)
    gg = sum(geo.gamma[k] @ la.adjoint(geo.gamma[k], geo.H, geo.Hinv) for k in range(torus.n))
    PS = c * restrict_sub(stage, geo, gg)
    K_sub = restrict_sub(stage, geo, K)
    res_S = float(np.max(np.abs(K_sub - KS - PS)))
    KQ = PQ = K_quot = None
    res_Q = None
    if geo.FQ is not None:
        KQ = moment_map(torus, geo.FQ)
        gsg = sum(la.adjoint(geo.gamma[k], geo.H, geo.Hinv) @ geo.gamma[k] for k in range(torus.n))
        PQ = c * restrict_quot(stage, geo, gsg)
        K_quot = restrict_quot(stage, geo, K)
        res_Q = float(np.max(np.abs(K_quot - KQ + PQ)))
    return Decomposition(KS, KQ, PS, PQ, K_sub, K_quot, res_S, res_Q)


def monotonicity_gap(dec: Decomposition, mask: np.ndarray) -> float:
    """Largest ``lambda_i(K^S) - lambda_i(K|_S)`` on the mask (should be <= 0 up to O(h^2))."""
    a = np.linalg.eigvalsh(la.herm(dec.KS[mask]))
    # K|_S is J-Hermitian, so compare spectra from the (real) eigenvalues
    b = np.sort(np.linalg.eigvals(dec.K_sub[mask]).real, axis=-1)
    return float(np.max(a - b)) if a.size else 0.0


def gamma_closedness_residual(b: BundleSpec, stage: SubsheafSpec, geo: InducedGeometry,
                              representation: str = "qs") -> float:
    """Max norm of ``nabla_kbar gamma_mbar - nabla_mbar gamma_kbar`` (n = 2 only).

    ``representation="qs"`` differentiates the Hom(Q, S) form with the S and Q
    structures; ``"end"`` uses the End(E)-valued form, for which the discrete
    operators commute exactly and the residual is pure roundoff.
    """
    torus = b.torus
    if torus.n == 1:
        return 0.0
    if representation == "qs":
        if geo.gamma_qs is None:
            raise ValueError("Hom(Q, S) representation needs a declared quotient map")
        args = (stage.sub_degrees, stage.sub_beta, stage.quot_degrees, stage.quot_beta)
        d = [hom_dbar(torus, geo.gamma_qs[m], *args) for m in range(torus.n)]
    else:
        d = [hom_dbar(torus, geo.gamma[m], b.degrees, b.beta, b.degrees, b.beta)
             for m in range(torus.n)]
    res = d[1][0] - d[0][1]
    res[~geo.mask] = 0
    return float(np.sqrt(np.max(la.norm2(res))))


def h_sub(J0: np.ndarray, Jt: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """``h^S = J(0)^{-1} J(t)``; masked points set to zero."""
    if mask is None:
        mask = np.ones(J0.shape[:-2], dtype=bool)
    out = _safe_inv(J0, mask) @ Jt
    out[~mask] = 0
    return out


def endo_l2(torus: LatticeTorus, h: np.ndarray, J0: np.ndarray | None = None) -> float:
    """``L^2`` norm of an endomorphism field, adjoints taken with respect to ``J0``."""
    if J0 is None:
        val = la.norm2(h)
    else:
        J0 = J0.copy()
        bad = la.min_eig(J0) <= 0
        J0[bad] = np.eye(J0.shape[-1])
        val = la.norm2(h, J0)
    return float(np.sqrt(integrate(torus, val).real))


def normalize_l2(torus: LatticeTorus, h: np.ndarray, J0: np.ndarray | None = None) -> np.ndarray:
    norm = endo_l2(torus, h, J0)
    if norm == 0:
        raise ValueError("cannot normalize a zero field")
    return h / norm


@dataclass
class StageSlope:
    position: int
    rank: int
    degree: float
    slope: float
    quotient_slope: float
    destabilizing: bool
    degree_mismatch: float


@dataclass
class StabilityReport:
    mu_E: float
    stages: list[StageSlope]
    ordered: bool
    violations: list[str] = field(default_factory=list)

    @property
    def destabilizing(self) -> bool:
        return any(s.destabilizing for s in self.stages)

    @property
    def semistable_boundary(self) -> bool:
        return not self.destabilizing and any(abs(s.slope - self.mu_E) < 1e-8 for s in self.stages)


def stability_report(b: BundleSpec, chain: Sequence[SubsheafSpec], K: np.ndarray | None = None,
                     tol: float = 1e-8) -> StabilityReport:
    """Slopes of the declared stages and their quotients, and slope ordering.

    Degrees are topological (from the declared twists); when ``K`` is given the
    computed ``integral Tr K|_S`` of each stage is not used here, but the declared
    ``expected_degree`` is compared against the twists.
    """
    if not chain:
        raise ValueError("empty filtration chain")
    torus = b.torus
    mu_E = b.degree / b.rank
    stages = []
    prev_rank, prev_deg = 0, 0.0
    qslopes = []
    for st in sorted(chain, key=lambda c: c.chain_position):
        deg = topological_degree(torus, st.sub_degrees)
        qslope = (deg - prev_deg) / (st.s - prev_rank) if st.s > prev_rank else np.nan
        qslopes.append(qslope)
        stages.append(StageSlope(st.chain_position, st.s, deg, deg / st.s, qslope,
                                 deg / st.s > mu_E + tol, abs(deg - st.expected_degree)))
        prev_rank, prev_deg = st.s, deg
    if b.rank > prev_rank:
        qslopes.append((b.degree - prev_deg) / (b.rank - prev_rank))
    violations = []
    for i in range(len(qslopes) - 1):
        if not qslopes[i] > qslopes[i + 1] - tol:
            violations.append(f"quotient {i + 1} slope {qslopes[i]:.6g} < quotient {i + 2} "
                              f"slope {qslopes[i + 1]:.6g}")
    for s in stages:
        if s.degree_mismatch > 1e-8:
            violations.append(f"stage {s.position} declared degree differs by {s.degree_mismatch:.3g}")
    return StabilityReport(mu_E, stages, not violations, violations)


@dataclass
class UYReport:
    status: str                   # "ok", "violated" or "skipped"
    lhs: float
    rhs: float


def uy_inequality_check(b: BundleSpec, stage: SubsheafSpec, geo: InducedGeometry,
                        K: np.ndarray, mu: float, tol: float = 1e-6) -> UYReport:
    """``(1/2pi) integral |gamma|^2 <= integral Tr((K - mu)|_S)`` for destabilizing S."""
    torus = b.torus
    deg = topological_degree(torus, stage.sub_degrees)
    if not deg / stage.s > mu + 1e-12:
        return UYReport("skipped: subsheaf does not destabilize", np.nan, np.nan)
    lhs = DEGREE_UNITS * float(integrate(torus, gamma_norm2(torus, geo)).real)
    shifted = K - mu * np.eye(b.rank)
    rhs = float(integrate(torus, la.trace(restrict_sub(stage, geo, shifted))).real)
    return UYReport("ok" if lhs <= rhs + tol else "violated", lhs, rhs)


@dataclass
class BarrierField:
    sigma: np.ndarray
    c: float
    factors: list[np.ndarray]


def sigma_build(b: BundleSpec, chain: Sequence[SubsheafSpec], H0: np.ndarray | None = None) -> BarrierField:
    """``sigma = c * prod_i det(J_i)`` from the metric at time zero, normalized to max 1."""
    if not chain:
        raise ValueError("empty filtration chain")
    if H0 is None:
        H0 = b.h0
    factors = []
    prod = np.ones(b.torus.grid)
    for st in chain:
        J = la.herm(la.dag(st.B) @ H0 @ st.B)
        det = np.abs(np.linalg.det(J).real)
        factors.append(det)
        prod = prod * det
    top = float(np.max(prod))
    if top <= 0:
        raise ValueError("barrier vanishes identically")
    return BarrierField(prod / top, 1.0 / top, factors)


def zalg_detect(chain: Sequence[SubsheafSpec], H0: np.ndarray | None = None,
                tol: float = 1e-6) -> list[tuple[int, ...]]:
    """Grid points where some stage's smallest singular value is below ``tol`` times its max."""
    if not chain:
        raise ValueError("empty filtration chain")
    bad = None
    for st in chain:
        H = np.eye(st.B.shape[-2]) if H0 is None else H0
        smin = np.sqrt(np.maximum(la.min_eig(la.dag(st.B) @ H @ st.B), 0.0))
        hit = smin < tol * np.max(smin)
        bad = hit if bad is None else bad | hit
    return [tuple(int(i) for i in idx) for idx in np.argwhere(bad)]


def stage_alpha(torus: LatticeTorus, stage: SubsheafSpec, geo: InducedGeometry):
    """``alpha'`` of the S and Q Chern connections (Q part is None without ``p``)."""
    Jm = geo.J.copy()
    Jm[~geo.mask] = np.eye(stage.s)
    aS = end_connection(torus, stage.sub_degrees, stage.sub_beta, Jm, geo.Jinv)
    aQ = None
    if geo.M is not None:
        aQ = end_connection(torus, stage.quot_degrees, stage.quot_beta, geo.M, geo.Minv)
    return aS, aQ


def curvature_norms(torus: LatticeTorus, geo: InducedGeometry):
    """Pointwise ``|F^S|^2`` and ``|F^Q|^2`` (the latter zero without a quotient)."""
    Jm = geo.J.copy()
    Jm[~geo.mask] = np.eye(geo.J.shape[-1])
    fs = curvature_norm2(torus, geo.FS, Jm, geo.Jinv)
    fq = np.zeros_like(fs) if geo.FQ is None else curvature_norm2(torus, geo.FQ, geo.M, geo.Minv)
    return fs, fq
