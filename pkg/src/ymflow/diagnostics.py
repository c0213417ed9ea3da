"""Monitors evaluated along a flow run.

Inequalities with an unspecified constant are treated by fitting the smallest
constant that makes the discrete inequality hold and reporting its stability.
The moment map carries a ``1/2pi``, so in the simulated flow time ``t`` the heat
operator is ``d/dt - DEGREE_UNITS * Delta``.  Residuals, tolerances and fitted
constants are all expressed in that time: an inequality stated as
``(d/ds - Delta) u <= C G + R`` for the unscaled time ``s`` is tested as
``(d/dt - DEGREE_UNITS Delta) u <= C' G + DEGREE_UNITS R`` with ``C' = DEGREE_UNITS C``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import filtration as ft
from . import linalg as la
from .bundle import DEGREE_UNITS, BundleSpec, curvature_norm2, end_connection
from .flow import FlowState, moment_norm2
from .manifold import LatticeTorus, d_antiholo, d_holo, integrate, laplacian

CSV_COLUMNS = [
    "t", "sup_K2", "norm_F_L2", "mu", "gamma_L2", "nablagamma_L2", "sigma_min",
    "trhS_max", "trhS_L2", "fitA_C", "fitA_k", "fitB_C", "fitB_k", "fitC_C", "fitC_k",
    "res_gamma", "res_nablagamma", "res_FS", "res_FQ", "s_sup", "c0_C", "c0_gamma", "moser_C",
]
INEQUALITIES = ("gamma", "nablagamma", "FS", "FQ")


def l2(torus: LatticeTorus, f2: np.ndarray) -> float:
    """``L^2`` norm from a pointwise squared norm."""
    return float(np.sqrt(max(integrate(torus, f2).real, 0.0)))


# ---------------------------------------------------------------------------
# per-state observables on a stage


@dataclass
class StageObservables:
    """Pointwise squared norms entering the evolution inequalities."""
    gamma2: np.ndarray
    dgamma2: np.ndarray
    ddgamma2: np.ndarray
    dbdgamma2: np.ndarray
    FS2: np.ndarray
    dFS2: np.ndarray
    FQ2: np.ndarray
    dFQ2: np.ndarray
    mask: np.ndarray


def _hom2(torus, fields, target, source_inv, order):
    return torus.ginv**order * sum(la.hom_norm2(f, target, source_inv) for f in fields)


def stage_observables(b: BundleSpec, stage: ft.SubsheafSpec, geo: ft.InducedGeometry) -> StageObservables:
    """Norms of ``gamma``, its first and second derivatives and the stage curvatures.

    ``gamma`` is differentiated as a Hom(Q, S)-valued form with the Chern
    connections of ``(S, J)`` and ``(Q, M)``.  ``nabla`` is the full covariant
    derivative (both types); ``ddgamma2`` and ``dbdgamma2`` are the (1,0) and
    (0,1) parts of the derivative of ``nabla gamma``.  Taking only the (1,0)
    part for ``nabla gamma`` leaves terms in ``(d/dt - Delta)|nabla gamma|^2``
    that are not controlled pointwise by the stated right-hand side.
    """
    torus = b.torus
    n = torus.n
    if geo.gamma_qs is None:
        raise ValueError("stage observables need a declared quotient map")
    aS, aQ = ft.stage_alpha(torus, stage, geo)
    J = geo.J.copy()
    J[~geo.mask] = np.eye(stage.s)
    S, Q = stage.sub_degrees, stage.quot_degrees
    hd = lambda f: ft.hom_del(torus, f, S, aS, Q, aQ)
    hb = lambda f: ft.hom_dbar(torus, f, S, stage.sub_beta, Q, stage.quot_beta)
    g = geo.gamma_qs
    d1 = []
    for k in range(n):
        d1.extend(hd(g[k]))
        d1.extend(hb(g[k]))
    dd = []
    dbd = []
    for f in d1:
        dd.extend(hd(f))
        dbd.extend(hb(f))
    dFS = []
    for j in range(n):
        for k in range(n):
            dFS.extend(ft.hom_del(torus, geo.FS[j, k], S, aS, S, aS))
            dFS.extend(ft.hom_dbar(torus, geo.FS[j, k], S, stage.sub_beta, S, stage.sub_beta))
    fs2, fq2 = ft.curvature_norms(torus, geo)
    dfs2 = _hom2(torus, dFS, J, geo.Jinv, 3)
    if geo.FQ is not None:
        dFQ = []
        for j in range(n):
            for k in range(n):
                dFQ.extend(ft.hom_del(torus, geo.FQ[j, k], Q, aQ, Q, aQ))
                dFQ.extend(ft.hom_dbar(torus, geo.FQ[j, k], Q, stage.quot_beta, Q, stage.quot_beta))
        dfq2 = _hom2(torus, dFQ, geo.M, geo.Minv, 3)
    else:
        dfq2 = np.zeros_like(fs2)
    out = StageObservables(
        gamma2=_hom2(torus, list(g), J, geo.Minv, 1),
        dgamma2=_hom2(torus, d1, J, geo.Minv, 2),
        ddgamma2=_hom2(torus, dd, J, geo.Minv, 3),
        dbdgamma2=_hom2(torus, dbd, J, geo.Minv, 3),
        FS2=fs2, dFS2=dfs2, FQ2=fq2, dFQ2=dfq2, mask=geo.mask)
    for name in ("gamma2", "dgamma2", "ddgamma2", "dbdgamma2", "FS2", "dFS2", "FQ2", "dFQ2"):
        arr = getattr(out, name)
        arr[~geo.mask] = 0.0
    return out


def inequality_terms(which: str, obs: StageObservables):
    """``(u, G, R)`` with ``(d_t - Delta) u <= C G + R`` the inequality to test."""
    g = np.sqrt(obs.gamma2)
    dg = np.sqrt(obs.dgamma2)
    fs, fq = np.sqrt(obs.FS2), np.sqrt(obs.FQ2)
    if which == "gamma":
        return obs.gamma2, obs.gamma2 * (1 + fs + fq), np.zeros_like(g)
    if which == "nablagamma":
        G = obs.dgamma2 * (1 + obs.gamma2 + fs + fq)
        R = g * dg * (np.sqrt(obs.dFS2) + np.sqrt(obs.dFQ2)) - obs.ddgamma2 - obs.dbdgamma2
        return obs.dgamma2, G, R
    if which in ("FS", "FQ"):
        f2, df2 = (obs.FS2, obs.dFS2) if which == "FS" else (obs.FQ2, obs.dFQ2)
        f = np.sqrt(f2)
        G = f2 + f2 * f
        R = (np.sqrt(obs.dbdgamma2) * g + obs.dgamma2) * f - df2
        return f2, G, R
    raise ValueError(f"unknown inequality {which!r}")


def heat_operator(torus: LatticeTorus, u0: np.ndarray, u1: np.ndarray, dt: float) -> np.ndarray:
    """Forward-difference ``(d_t - DEGREE_UNITS Delta) u`` in flow time."""
    return (u1 - u0) / dt - DEGREE_UNITS * laplacian(torus, u0).real


def erode(mask: np.ndarray, width: int = 2) -> np.ndarray:
    """Shrink a periodic mask by ``width`` cells along every axis."""
    out = mask.copy()
    for axis in range(mask.ndim):
        for s in range(1, width + 1):
            out &= np.roll(mask, s, axis) & np.roll(mask, -s, axis)
    return out


@dataclass
class ResidualReport:
    which: str
    residual: float
    C: float
    tol: float
    location: tuple | None
    flagged: bool


@dataclass
class InequalityFit:
    """Running fit of one constant ``C`` for ``L <= C G + R`` over a run.

    At each step the constant is raised just enough that ``L - R - C G`` stays
    below the discretization tolerance wherever ``G`` is above a relative floor;
    the reported residual is ``max (L - R - C G)_+`` which therefore only exceeds
    the tolerance where the inequality genuinely fails at ``G ~ 0``.
    """
    which: str
    C: float = 0.0
    history: list = field(default_factory=list)
    floor: float = 1e-6

    def update(self, L: np.ndarray, G: np.ndarray, R: np.ndarray, mask: np.ndarray,
               tol: float) -> ResidualReport:
        excess = np.where(mask, L - R, -np.inf)
        Gm = np.where(mask, G, 0.0)
        gtop = float(np.max(Gm)) if Gm.size else 0.0
        use = mask & (G > self.floor * gtop) if gtop > 0 else np.zeros_like(mask)
        if np.any(use):
            cand = float(np.max((excess[use] - tol) / G[use]))
            self.C = max(self.C, cand, 0.0)
        res = np.where(mask, L - R - self.C * G, -np.inf)
        worst = float(np.max(res)) if np.any(mask) else 0.0
        worst = max(worst, 0.0)
        loc = tuple(int(i) for i in np.unravel_index(np.argmax(res), res.shape)) if worst > 0 else None
        self.history.append(self.C)
        # the point that set C sits at the tolerance up to roundoff in L - R - C G
        size = float(np.max(np.abs(np.where(mask, L - R, 0.0)))) if np.any(mask) else 0.0
        slack = 1e-9 * tol + 1e-12 * size
        return ResidualReport(self.which, worst, self.C, tol, loc, worst > tol + slack)


def evolution_residual(which: str, torus: LatticeTorus, obs0: StageObservables,
                       obs1: StageObservables, dt: float, fit: InequalityFit | None = None,
                       mask: np.ndarray | None = None) -> ResidualReport:
    """Residual of one of the four evolution inequalities between consecutive states."""
    u0, G, R = inequality_terms(which, obs0)
    u1, _, _ = inequality_terms(which, obs1)
    if mask is None:
        mask = erode(obs0.mask & obs1.mask)
    L = heat_operator(torus, u0, u1, dt)
    R = DEGREE_UNITS * R
    if fit is None:
        fit = InequalityFit(which)
    return fit.update(L, G, R, mask, residual_tolerance(torus, dt, u0, u1, mask, R))


def residual_tolerance(torus: LatticeTorus, dt: float, u0: np.ndarray, u1: np.ndarray,
                       mask: np.ndarray, R: np.ndarray | None = None) -> float:
    """``10 (dt + h^2) * scale`` with scale the size of the compared terms plus the
    fourth-derivative factor of the stencil truncation error.

    ``scale = 1 + max|u| + max|d_t u| + c (max|Delta u| + max|Delta^2 u| / 12) + max|R| + max|Delta R| / 12``
    on the mask with ``c = DEGREE_UNITS`` (``R`` already in flow units); ``1/12`` is the
    truncation coefficient of the second-order Laplacian stencil.
    """
    h = max(torus.spacing)
    if not np.any(mask):
        return 10.0 * (dt + h * h)

    def top(f):
        return float(np.max(np.abs(f[mask])))

    lap = laplacian(torus, u0).real
    scale = 1.0 + top(u0) + top((u1 - u0) / dt)
    scale += DEGREE_UNITS * (top(lap) + top(laplacian(torus, lap).real) / 12)
    if R is not None:
        scale += top(R) + top(laplacian(torus, R).real) / 12
    return 10.0 * (dt + h * h) * scale


def s_quantity(b: BundleSpec, h: np.ndarray) -> np.ndarray:
    """``S = g^{j jbar} |(nabla^0_j h) h^{-1}|^2_{H0}`` with the Chern connection of ``H0``."""
    torus = b.torus
    a0 = end_connection(torus, b.degrees, b.beta, b.h0)
    d = d_holo(torus, h, b.end_charge)
    hinv = la.inv(h)
    h0inv = la.inv(b.h0)
    out = 0.0
    for j in range(torus.n):
        m = (d[j] + la.commutator(a0[j], h)) @ hinv
        out = out + la.norm2(m, b.h0, h0inv)
    return torus.ginv * out


def s_quantity_residual(b: BundleSpec, s0: FlowState, s1: FlowState, fit: InequalityFit | None = None):
    """``(d_t - Delta) S <= C (S + sqrt S)`` between consecutive states; returns (S at s1, report).

    ``S`` starts at zero like ``t^2``, so a bound by ``C S`` alone fails near
    ``t = 0`` for any ``C``; the ``sqrt S`` term comes from the background
    curvature's divergence paired with ``A - A0``.
    """
    torus = b.torus
    S0 = s_quantity(b, s0.h)
    S1 = s_quantity(b, s1.h)
    dt = s1.t - s0.t
    L = heat_operator(torus, S0, S1, dt)
    mask = np.ones(torus.grid, dtype=bool)
    if fit is None:
        fit = InequalityFit("S")
    # the background curvature adds a term linear in A - A0, hence sqrt(S)
    G = S0 + np.sqrt(S0)
    return S1, fit.update(L, G, np.zeros_like(S0), mask, residual_tolerance(torus, dt, S0, S1, mask))


# ---------------------------------------------------------------------------
# assumptions and the barrier bound


@dataclass
class FitReport:
    C: float
    k: int | None
    ok: bool
    status: str
    ratio_sup: float


def fit_power(ratio: np.ndarray, sigma: np.ndarray, mask: np.ndarray, k_max: int = 8,
              lower: bool = False, cap: float = 1e6) -> FitReport:
    """Smallest ``k`` on ``{0..k_max}`` for which ``ratio <= C sigma^-k`` (or ``>= c sigma^k``).

    Upper fits report ``C_k = max(ratio sigma^k)`` and accept it when ``C_k <= cap``;
    lower fits report ``c_k = min(ratio sigma^-k)`` accepted when ``c_k >= 1/cap``.
    """
    if not np.any(mask):
        return FitReport(np.nan, None, False, "empty mask", np.nan)
    r = ratio[mask]
    s = sigma[mask]
    sup = float(np.max(r)) if not lower else float(np.min(r))
    for k in range(k_max + 1):
        if lower:
            c = float(np.min(r * s ** (-k)))
            if np.isfinite(c) and c >= 1.0 / cap:
                return FitReport(c, k, True, "ok", sup)
        else:
            c = float(np.max(r * s**k))
            if np.isfinite(c) and c <= cap:
                return FitReport(c, k, True, "ok", sup)
    return FitReport(c, k_max, False, "fit failed at max k", sup)


def endo_covariant_norm(torus: LatticeTorus, f: np.ndarray, degrees, beta, metric: np.ndarray,
                        metric_inv: np.ndarray) -> np.ndarray:
    """``|nabla f|`` for an endomorphism field, both (1,0) and (0,1) parts, Chern connection of ``metric``."""
    alpha = end_connection(torus, degrees, beta, metric, metric_inv)
    d1 = ft.hom_del(torus, f, degrees, alpha, degrees, alpha)
    d2 = ft.hom_dbar(torus, f, degrees, beta, degrees, beta)
    tot = sum(la.norm2(d1[j], metric, metric_inv) + la.norm2(d2[j], metric, metric_inv)
              for j in range(torus.n))
    return np.sqrt(torus.ginv * tot)


def assumption_monitor(which: str, b: BundleSpec, stage: ft.SubsheafSpec, geo: ft.InducedGeometry,
                       J0: np.ndarray, sigma: np.ndarray, k_max: int = 8, cap: float = 1e6) -> FitReport:
    """Fit one of the three assumptions at the current time.

    A: ``|nabla^0 h^S| <= C sigma^-k Tr h^S``; B: ``h^S >= c sigma^k ||Tr h^S||_L2``;
    C: ``|gamma|^2 <= C sigma^-k``.
    """
    torus = b.torus
    mask = geo.mask
    if which == "C":
        return fit_power(ft.gamma_norm2(torus, geo), sigma, mask, k_max, cap=cap)
    hS = ft.h_sub(J0, geo.J, mask)
    tr = la.trace(hS).real
    if which == "A":
        J0m = J0.copy()
        J0m[~mask] = np.eye(stage.s)
        J0inv = la.inv(J0m)
        grad = endo_covariant_norm(torus, hS, stage.sub_degrees, stage.sub_beta, J0m, J0inv)
        ratio = np.where(mask, grad / np.where(mask, tr, 1.0), 0.0)
        return fit_power(ratio, sigma, erode(mask, 1), k_max, cap=cap)
    if which == "B":
        lam = np.where(mask, np.sort(np.linalg.eigvals(np.where(mask[..., None, None], hS, np.eye(stage.s))).real, axis=-1)[..., 0], 0.0)
        norm = l2(torus, np.where(mask, tr, 0.0) ** 2)
        return fit_power(lam / norm, sigma, mask, k_max, lower=True, cap=cap)
    raise ValueError(f"unknown assumption {which!r}")


@dataclass
class C0Report:
    C: float
    gamma: int | None
    status: str
    worst: tuple | None


@dataclass
class PropC0Tracker:
    """Running ``Tr h^S <= C sigma^-g ||Tr h^S||_L2`` fit over sampled times."""
    sigma: np.ndarray
    mask: np.ndarray
    g_max: int = 8
    cap: float = 1e6
    best: np.ndarray | None = None
    worst: list = field(default_factory=list)

    def update(self, torus: LatticeTorus, hS: np.ndarray) -> C0Report:
        tr = np.where(self.mask, la.trace(hS).real, 0.0)
        norm = l2(torus, tr**2)
        vals = np.full(self.g_max + 1, np.nan)
        spots = []
        for g in range(self.g_max + 1):
            f = np.where(self.mask, tr * self.sigma**g / norm, -np.inf)
            vals[g] = float(np.max(f))
            spots.append(tuple(int(i) for i in np.unravel_index(np.argmax(f), f.shape)))
        if self.best is None:
            self.best = vals
            self.worst = spots
        else:
            for g in range(self.g_max + 1):
                if vals[g] > self.best[g]:
                    self.best[g] = vals[g]
                    self.worst[g] = spots[g]
        status = "masked" if not np.all(self.mask) else "ok"
        for g in range(self.g_max + 1):
            if self.best[g] <= self.cap:
                return C0Report(float(self.best[g]), g, status, self.worst[g])
        return C0Report(float(self.best[-1]), self.g_max, "fit failed at max exponent", self.worst[-1])


def prop_c0_check(torus: LatticeTorus, hS_series: Sequence[np.ndarray], sigma: np.ndarray,
                  mask: np.ndarray | None = None, g_max: int = 8) -> C0Report:
    if mask is None:
        mask = np.ones(torus.grid, dtype=bool)
    tracker = PropC0Tracker(sigma, mask, g_max)
    rep = None
    for hS in hS_series:
        rep = tracker.update(torus, hS)
    if rep is None:
        raise ValueError("empty series")
    return rep


# ---------------------------------------------------------------------------
# density and Moser


@dataclass
class DensityMap:
    r: float
    values: np.ndarray
    epsilon: float
    points: list
    extrapolated: bool

    def peak(self, rel: float = 1e-12) -> tuple[int, ...]:
        """Centre of the set where ``e_r`` attains its maximum (circular mean per axis)."""
        top = np.max(self.values)
        hits = np.argwhere(self.values >= top - rel * max(abs(top), 1e-300))
        shape = self.values.shape
        out = []
        for a, m in enumerate(shape):
            ang = 2 * np.pi * hits[:, a] / m
            mean = np.angle(np.mean(np.exp(1j * ang)))
            out.append(int(np.round(mean * m / (2 * np.pi))) % m)
        return tuple(out)


def ball_offsets(torus: LatticeTorus, r: float) -> np.ndarray:
    """Integer grid offsets whose flat length is at most ``r``."""
    reach = []
    for a, m in enumerate(torus.grid):
        # |offset| along one axis is bounded by r over the smallest stride of that axis
        reach.append(min(m // 2, int(np.ceil(r / (torus.spacing[a] * 0.5))) + 1))
    axes = [np.arange(-k, k + 1) for k in reach]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    keep = torus.displacement_length(mesh) <= r * (1 + 1e-12)
    return mesh[keep]


def zan_density(torus: LatticeTorus, F2: np.ndarray, r: float, epsilon: float | None = None) -> DensityMap:
    """``e_r(x) = r^{4-2n} integral_{B_r(x)} |F|^2`` by periodic ball sums."""
    if r < 2 * max(torus.spacing) * (1 - 1e-12):
        raise ValueError(f"radius {r:.4g} below twice the grid spacing")
    F2 = np.asarray(F2, dtype=float)
    if epsilon is None:
        epsilon = 1e-2 * float(integrate(torus, F2).real)
    pts = ball_offsets(torus, r)
    acc = np.zeros(torus.grid)
    axes = tuple(range(2 * torus.n))
    for off in pts:
        acc += np.roll(F2, tuple(-int(o) for o in off), axis=axes)
    e = r ** (4 - 2 * torus.n) * torus.cell_volume * acc
    hits = [tuple(int(i) for i in p) for p in np.argwhere(e >= epsilon)] if epsilon > 0 else []
    return DensityMap(r, e, float(epsilon), hits, torus.n == 1)


@dataclass
class MoserReport:
    C: float
    sup_inner: float
    bracket: float
    integral: float
    A: float
    status: str


def torus_distance(torus: LatticeTorus, x0: Sequence[int]) -> np.ndarray:
    """Flat periodic distance from grid point ``x0`` to every grid point."""
    idx = np.indices(torus.grid)
    off = []
    for a, m in enumerate(torus.grid):
        d = (idx[a] - x0[a] + m // 2) % m - m // 2
        off.append(d)
    return torus.displacement_length(np.stack(off, axis=-1))


def moser_empirical_check(torus: LatticeTorus, times: Sequence[float], u_series: Sequence[np.ndarray],
                          theta_series: Sequence[np.ndarray], q: float, p: float, x0: Sequence[int],
                          R: float, window: tuple[float, float] | None = None) -> MoserReport:
    """Fitted constant in the sup bound over ``B(x0, R) x window`` from the ``L^p`` mass on ``B(x0, 2R)``.

    Times are converted to the unscaled flow time (``DEGREE_UNITS * t``); the
    bracket uses the complex dimension for ``n``.
    """
    times = np.asarray(times, dtype=float)
    if window is not None:
        sel = (times >= window[0]) & (times <= window[1])
    else:
        sel = np.ones(len(times), dtype=bool)
    idx = np.flatnonzero(sel)
    if len(idx) < 2:
        raise ValueError("Moser window needs at least two sampled times")
    n = torus.n
    if not q > n:
        raise ValueError("need q > n")
    dist = torus_distance(torus, x0)
    inner = dist <= R
    outer = dist <= 2 * R
    tp = DEGREE_UNITS * times[idx]
    start = tp[0]
    mass = np.array([float(np.sum(np.where(outer, u_series[i], 0.0) ** p)) * torus.cell_volume
                     for i in idx])
    integral = float(np.trapezoid(mass, tp)) if len(tp) > 1 else 0.0
    A = 0.0
    for i in idx:
        th = theta_series[i]
        if th is None:
            continue
        A = max(A, float(np.sum(np.where(outer, th, 0.0) ** q) * torus.cell_volume) ** (1.0 / q))
    if integral <= 0:
        return MoserReport(np.nan, np.nan, np.nan, integral, A, "zero integral")
    best = 0.0
    sup_inner = 0.0
    bracket_at = np.nan
    for i, t in zip(idx[1:], tp[1:]):
        br = A ** (n / (q - n)) + 1.0 / (t - start) + 1.0 / R**2
        s = float(np.max(u_series[i][inner]))
        c = s / (br ** ((n + 1) / p) * integral ** (1.0 / p))
        if c > best:
            best, sup_inner, bracket_at = c, s, br
    return MoserReport(best, sup_inner, bracket_at, integral, A, "ok")


def theta_field(torus: LatticeTorus, u0: np.ndarray, u1: np.ndarray, dt: float) -> np.ndarray:
    """``Theta = max(0, (d_s - Delta) u / u)`` in unscaled time from consecutive samples of ``u > 0``."""
    L = heat_operator(torus, u0, u1, dt) / DEGREE_UNITS
    return np.maximum(0.0, L / u0)


# ---------------------------------------------------------------------------
# run-level bookkeeping


@dataclass
class MonitorSettings:
    k_max: int = 8
    fit_cap: float = 1e6
    moser_q: float = 8.0
    moser_p: float = 2.0
    moser_R: float | None = None
    moser_window: tuple[float, float] | None = None
    residuals: bool = True
    moser: bool = True


class RunMonitor:
    """Builds one CSV row per sampled state from the state and the step before it."""

    def __init__(self, b: BundleSpec, chain: Sequence[ft.SubsheafSpec] = (),
                 settings: MonitorSettings | None = None):
        self.b = b
        self.chain = list(chain)
        self.settings = settings or MonitorSettings()
        self.rows: list[dict] = []
        self.fits = {w: InequalityFit(w) for w in INEQUALITIES}
        self.s_fit = InequalityFit("S")
        self.times: list[float] = []
        self.u_series: list[np.ndarray] = []
        self.theta_series: list[np.ndarray | None] = []
        self.uy: list[ft.UYReport] = []
        self.reports: dict[str, list] = {w: [] for w in INEQUALITIES + ("S",)}
        self.last_geometry = None
        self.last_fits: dict = {}
        self.moser: MoserReport | None = None
        self.stage = self.chain[0] if self.chain else None
        torus = b.torus
        if self.stage is not None:
            self.barrier = ft.sigma_build(b, self.chain)
            mask0 = ft.rank_mask(self.stage.B, b.h0)
            for st in self.chain[1:]:
                mask0 &= ft.rank_mask(st.B, b.h0)
            self.mask0 = mask0
            self.J0 = la.herm(la.dag(self.stage.B) @ b.h0 @ self.stage.B)
            self.c0 = PropC0Tracker(self.barrier.sigma, mask0, self.settings.k_max, self.settings.fit_cap)
            self.x0 = tuple(int(i) for i in np.unravel_index(np.argmax(self.barrier.sigma), torus.grid))
            z = ft.zalg_detect(self.chain, b.h0)
            if z:
                dmin = min(float(torus_distance(torus, p)[self.x0]) for p in z)
                self.R = self.settings.moser_R or min(0.25, dmin / 2)
            else:
                self.R = self.settings.moser_R or 0.25
        else:
            self.barrier = None

    def _obs(self, state: FlowState):
        geo = ft.geometry(self.b, self.stage, state.H)
        obs = stage_observables(self.b, self.stage, geo) if geo.gamma_qs is not None else None
        return geo, obs

    def __call__(self, state: FlowState, prev: FlowState | None = None) -> dict:
        b = self.b
        torus = b.torus
        row = {c: None for c in CSV_COLUMNS}
        row["t"] = state.t
        row["sup_K2"] = float(np.max(moment_norm2(state)))
        row["norm_F_L2"] = l2(torus, curvature_norm2(torus, state.F, state.H))
        row["mu"] = float(integrate(torus, la.trace(state.K)).real) / b.rank
        do_res = prev is not None and self.settings.residuals
        if do_res:
            S1, rep = s_quantity_residual(b, prev, state, self.s_fit)
            self.reports["S"].append((state.t, rep))
        else:
            S1 = s_quantity(b, state.h)
        row["s_sup"] = float(np.max(S1))
        if self.stage is not None:
            self._stage_columns(row, state, prev if do_res else None)
        self.rows.append(row)
        return row

    def _stage_columns(self, row: dict, state: FlowState, prev: FlowState | None) -> None:
        b, torus, st, s = self.b, self.b.torus, self.stage, self.settings
        geo, obs = self._obs(state)
        self.last_geometry = geo
        sigma = self.barrier.sigma
        row["gamma_L2"] = l2(torus, ft.gamma_norm2(torus, geo))
        row["sigma_min"] = float(np.min(sigma[self.mask0])) if np.any(self.mask0) else None
        hS = ft.h_sub(self.J0, geo.J, geo.mask & self.mask0)
        tr = la.trace(hS).real
        row["trhS_max"] = float(np.max(tr))
        row["trhS_L2"] = l2(torus, tr**2)
        mask = geo.mask & self.mask0
        geo_m = geo
        for key, which in (("fitA", "A"), ("fitB", "B"), ("fitC", "C")):
            rep = assumption_monitor(which, b, st, geo_m, self.J0, sigma, s.k_max, s.fit_cap)
            self.last_fits[which] = rep
            row[key + "_C"] = rep.C
            row[key + "_k"] = rep.k
        c0 = self.c0.update(torus, hS)
        row["c0_C"], row["c0_gamma"] = c0.C, c0.gamma
        if st.sub_degrees is not None:
            self.uy.append(ft.uy_inequality_check(b, st, geo, state.K, state.mu))
        if obs is None:
            return
        row["nablagamma_L2"] = l2(torus, obs.dgamma2)
        theta = None
        u = obs.dgamma2 + obs.FS2 + obs.FQ2 + 1.0
        if prev is not None:
            _, obs0 = self._obs(prev)
            dt = state.t - prev.t
            rmask = erode(obs0.mask & obs.mask)
            for which in INEQUALITIES:
                rep = evolution_residual(which, torus, obs0, obs, dt, self.fits[which], rmask)
                self.reports[which].append((state.t, rep))
                row["res_" + which] = rep.residual
            u0 = obs0.dgamma2 + obs0.FS2 + obs0.FQ2 + 1.0
            theta = np.where(rmask, theta_field(torus, u0, u, dt), 0.0)
        self.times.append(state.t)
        self.u_series.append(u)
        self.theta_series.append(theta)
        if s.moser and len(self.times) >= 2 and self.times[-1] > self.times[0]:
            rep = moser_empirical_check(torus, self.times, self.u_series, self.theta_series,
                                        s.moser_q, s.moser_p, self.x0, self.R, s.moser_window)
            row["moser_C"] = rep.C
            self.moser = rep

    def sigma_field(self):
        return None if self.barrier is None else self.barrier.sigma
