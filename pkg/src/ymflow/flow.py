"""Donaldson heat flow ``h^{-1} dh/dt = -(K - mu)`` and its Yang-Mills gauge picture."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import linalg as la
from .bundle import (BundleSpec, CurvatureField, chern_curvature_of, curvature_norm2,
                     moment_map)
from .manifold import d_antiholo, integrate

logger = logging.getLogger(__name__)


class PositivityError(FloatingPointError):
    """Metric field lost positivity or became non-finite during a step."""

    def __init__(self, message: str, step: int | None = None, location=None):
        super().__init__(message)
        self.step = step
        self.location = location


class StepSizeError(ValueError):
    pass


@dataclass
class FlowState:
    t: float
    h: np.ndarray                # (*grid, r, r) endomorphism, metric H = h0 @ h
    H: np.ndarray
    F: np.ndarray
    K: np.ndarray
    mu: float
    step_count: int = 0
    rows: list = field(default_factory=list)


def chern_curvature(h: np.ndarray, b: BundleSpec, check: bool = True) -> CurvatureField:
    """Curvature of the Chern connection of ``H = h0 h`` for the bundle's holomorphic structure."""
    H = la.herm(b.h0 @ h)
    if check and np.any(la.min_eig(H) <= 0):
        raise PositivityError("metric is not positive definite")
    F = chern_curvature_of(b.torus, b.degrees, b.beta, H)
    return CurvatureField(F, H, tag="H0h")


def slope(b: BundleSpec, K: np.ndarray) -> float:
    """``(1/r) integral Tr K``."""
    return float(integrate(b.torus, la.trace(K)).real) / b.rank


def stability_bound(b: BundleSpec, cfl: float = 0.5) -> float:
    torus = b.torus
    return cfl * torus.min_spacing() ** 2 / (4 * torus.n * torus.metric_scale)


def initial_state(b: BundleSpec, h: np.ndarray | None = None, t: float = 0.0) -> FlowState:
    if h is None:
        h = la.eye_field(b.torus.grid, b.rank)
    curv = chern_curvature(h, b)
    K = moment_map(b.torus, curv.values)
    return FlowState(t, h, curv.metric_used, curv.values, K, slope(b, K))


def state_from_h(b: BundleSpec, h: np.ndarray, t: float, mu: float, step_count: int,
                 check: bool = True) -> FlowState:
    curv = chern_curvature(h, b, check)
    K = moment_map(b.torus, curv.values)
    return FlowState(t, h, curv.metric_used, curv.values, K, mu, step_count)


def step_donaldson(state: FlowState, b: BundleSpec, dt: float, cfl: float = 0.5) -> FlowState:
    """One exponential step ``H <- H exp(-dt (K - mu))``."""
    bound = stability_bound(b, cfl)
    if not 0 < dt <= bound * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:.3e} outside (0, {bound:.3e}]")
    H = state.H
    X = state.K - state.mu * np.eye(b.rank)
    # X is H-self-adjoint, so H exp(-dt X) = L exp(-dt L^dag X L^-dag) L^dag
    E = la.expm_real_spectrum(-dt * X)
    if E is not None:
        Hnew = la.herm(la.mm(H, E))
    else:
        L = np.linalg.cholesky(H)
        Y = la.herm(la.dag(L) @ X @ la.dag(la.inv(L)))
        Hnew = la.herm(L @ la.expm_herm(-dt * Y) @ la.dag(L))
    if not np.all(np.isfinite(Hnew)):
        bad = np.argwhere(~np.isfinite(Hnew).all(axis=(-2, -1)))
        raise PositivityError("non-finite metric", state.step_count + 1, tuple(bad[0]))
    lam = la.min_eig(Hnew)
    if np.any(lam <= 0):
        raise PositivityError("positivity violation", state.step_count + 1,
                              np.unravel_index(np.argmin(lam), lam.shape))
    h = la.mm(b.h0_inv, Hnew)
    return state_from_h(b, h, state.t + dt, state.mu, state.step_count + 1, check=False)


def moment_norm2(state: FlowState) -> np.ndarray:
    """Pointwise ``|K|^2_H``."""
    return la.norm2(state.K, state.H)


def shifted_moment_norm2(state: FlowState) -> np.ndarray:
    r = state.K.shape[-1]
    return la.norm2(state.K - state.mu * np.eye(r), state.H)


def run_flow(state: FlowState, b: BundleSpec, t_max: float, dt: float,
             monitor: Optional[Callable[[FlowState, Optional[FlowState]], None]] = None,
             sample_every: int = 1, cfl: float = 0.5,
             on_sample: Optional[Callable[[FlowState], None]] = None,
             on_step: Optional[Callable[[FlowState], None]] = None) -> tuple[FlowState, list]:
    """Repeated Donaldson steps with a sampling cadence.

    ``monitor(state, prev)`` sees the initial state (with ``prev=None``) and then
    every ``sample_every``-th state together with the state one step earlier;
    ``on_step`` sees every state after a step.  ``dt`` is shrunk so that
    ``t_max`` is hit exactly; ``t_max <= 0`` returns the state and an empty
    series without calling anything.  Returns the final state and the recorded
    ``(t, sup|K|^2, mu)`` rows; on a step error the rows gathered so far are
    attached to the exception as ``err.series``.
    """
    series = []

    def record(s, prev):
        series.append((s.t, float(np.max(moment_norm2(s))), slope(b, s.K)))
        if monitor is not None:
            monitor(s, prev)
        if on_sample is not None:
            on_sample(s)

    if t_max <= 0:
        return state, series
    record(state, None)
    nsteps = int(np.ceil(t_max / dt - 1e-9))
    dt = t_max / nsteps
    t0 = state.t
    try:
        for k in range(1, nsteps + 1):
            prev = state
            state = step_donaldson(state, b, dt, cfl)
            state.t = t0 + k * dt
            if on_step is not None:
                on_step(state)
            if k % sample_every == 0 or k == nsteps:
                record(state, prev)
    except (PositivityError, FloatingPointError) as err:
        err.series = series
        raise
    return state, series


@dataclass
class GaugePicture:
    w: np.ndarray
    beta_t: np.ndarray
    F_A: np.ndarray
    construction_residual: float


def gauge_transform(state: FlowState, b: BundleSpec) -> GaugePicture:
    """Yang-Mills-side holomorphic structure and curvature via ``w = h^{1/2}``.

    ``w`` is the ``h0``-self-adjoint positive root of ``h``.
    """
    torus = b.torus
    L = np.linalg.cholesky(b.h0)
    Linv = la.inv(L)
    hs = la.herm(la.dag(L) @ state.h @ la.dag(Linv))
    w = la.dag(Linv) @ la.sqrtm_psd(hs) @ la.dag(L)
    winv = la.inv(w)
    dw = d_antiholo(torus, w, b.end_charge)
    beta_t = np.stack([w @ b.beta[k] @ winv - dw[k] @ winv for k in range(torus.n)])
    F_A = w @ state.F @ winv
    resid = float(np.max(np.abs(F_A @ w - w @ state.F)))
    return GaugePicture(w, beta_t, F_A, resid)


def norm_equivalence_residual(state: FlowState, b: BundleSpec, gauge: GaugePicture | None = None) -> float:
    """Max of ``| |F_A|^2_{H0} - |F|^2_H | / (1 + |F|^2)`` over the grid."""
    if gauge is None:
        gauge = gauge_transform(state, b)
    lhs = curvature_norm2(b.torus, gauge.F_A, b.h0)
    rhs = curvature_norm2(b.torus, state.F, state.H)
    return float(np.max(np.abs(lhs - rhs) / (1 + np.abs(rhs))))


@dataclass
class MaxPrincipleReport:
    ok: bool
    violations: list


def max_principle_monitor(series, rel_tol: float = 1e-6) -> MaxPrincipleReport:
    """Check ``sup |K|^2`` is nonincreasing along recorded rows ``(t, sup, ...)``."""
    if len(series) < 2:
        raise ValueError("need at least two rows")
    violations = []
    for (t0, s0, *_), (t1, s1, *_) in zip(series[:-1], series[1:]):
        if s1 - s0 > rel_tol * (1 + s0):
            violations.append((t1, s1 - s0))
    return MaxPrincipleReport(not violations, violations)
