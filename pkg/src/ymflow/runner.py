"""Run one scenario: build, flow with monitors, write series.csv, snapshots and a manifest."""
from __future__ import annotations

import csv
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import filtration as ft
from . import linalg as la
from .bundle import curvature_norm2
from .config import ScenarioConfig, format_value
from .flow import (FlowState, PositivityError, StepSizeError, initial_state, moment_norm2,
                   run_flow, slope, stability_bound)
from .scenarios import build_scenario
from .snapshot import emit_snapshot, form_layout

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


@dataclass
class RunResult:
    status: int
    out_dir: str
    rows: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    monitor: dg.RunMonitor | None = None
    state: FlowState | None = None
    error: str | None = None


def format_cell(v, precision: int = 17) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), f".{precision}g")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, complex):
        return format_value(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if np.isfinite(f) else repr(f)
    return v


class _Outputs:
    """Serialized writers for the series and snapshot files of one run."""

    def __init__(self, cfg: ScenarioConfig, out_dir: str, b, monitor: dg.RunMonitor):
        self.cfg = cfg
        self.dir = out_dir
        self.snap_dir = os.path.join(out_dir, "snapshots")
        os.makedirs(self.snap_dir, exist_ok=True)
        self.b = b
        self.monitor = monitor
        self.fields = set(cfg.output.snapshot_fields)
        self.files: list[str] = []
        self.density: list[dict] = []
        self.fh = open(os.path.join(out_dir, "series.csv"), "w", newline="", encoding="ascii")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(dg.CSV_COLUMNS)
        self.written = 0

    def row(self, state: FlowState) -> None:
        # the monitor has just appended the row for this state
        for r in self.monitor.rows[self.written:]:
            self.writer.writerow([format_cell(r[c], self.cfg.output.precision) for c in dg.CSV_COLUMNS])
        self.written = len(self.monitor.rows)
        self.fh.flush()

    def _emit(self, name: str, kind: str, values, t: float, **extra) -> None:
        path = os.path.join(self.snap_dir, name + ".ymf")
        tor = self.b.torus
        emit_snapshot(path, extra.pop("field", name.rsplit("_", 1)[0]), kind, values, tor.n,
                      tor.grid, self.b.rank, t, **extra)
        self.files.append(os.path.relpath(path, self.dir))

    def snapshot(self, state: FlowState) -> None:
        tag = f"{state.step_count:08d}"
        if "metric" in self.fields:
            self._emit(f"metric_{tag}", "metric", state.H, state.t, step=state.step_count)
        if "curvature" in self.fields:
            self._emit(f"curvature_{tag}", "form", form_layout(state.F), state.t, step=state.step_count)
        if "density" in self.fields and "density" in self.cfg.flow.monitors:
            self._density(state, tag)

    def _density(self, state: FlowState, tag: str) -> None:
        tor = self.b.torus
        F2 = curvature_norm2(tor, state.F, state.H)
        h = max(tor.spacing)
        for rs in self.cfg.diagnostics.radii:
            dm = dg.zan_density(tor, F2, rs * h, self.cfg.diagnostics.epsilon)
            label = format(rs, "g").replace(".", "p")
            self._emit(f"density_r{label}_{tag}", "scalar", dm.values, state.t, field=f"density_r{label}",
                       r=repr(dm.r), epsilon=repr(dm.epsilon), step=state.step_count)
            mask = np.zeros(tor.grid)
            for p in dm.points:
                mask[p] = 1.0
            self._emit(f"zan_r{label}_{tag}", "scalar", mask, state.t, field=f"zan_r{label}",
                       r=repr(dm.r), epsilon=repr(dm.epsilon), step=state.step_count)
            self.density.append({"t": state.t, "step": state.step_count, "r": dm.r,
                                 "epsilon": dm.epsilon, "peak": list(dm.peak()),
                                 "points": len(dm.points), "extrapolated": dm.extrapolated})

    def sigma(self, sigma: np.ndarray) -> None:
        if "sigma" in self.fields:
            self._emit("sigma", "scalar", sigma, 0.0)

    def close(self) -> None:
        if not self.fh.closed:
            self.fh.close()


class _StepChecks:
    """Per-step maximum principle for ``sup |K|^2`` and drift of the recomputed slope.

    With a stage, ``||gamma||_L2`` is also followed step by step.
    """

    def __init__(self, b, state: FlowState, stage=None, rel_tol: float = 1e-6):
        self.b = b
        self.rel_tol = rel_tol
        self.mu0 = slope(b, state.K)
        self.sup = float(np.max(moment_norm2(state)))
        self.steps = 0
        self.max_rel_increase = 0.0
        self.violations = 0
        self.first_violation = None
        self.mu_drift = 0.0
        self.stage = stage
        if stage is not None:
            self.mask = ft.rank_mask(stage.B, b.h0)
            self.gamma0 = self.gamma = self._gamma(state)
            self.gamma_max_increase = -np.inf

    def _gamma(self, state: FlowState) -> float:
        tor = self.b.torus
        _, g = ft.projection_and_gamma(self.b, self.stage, state.H, mask=self.mask)
        Hinv = la.inv(state.H)
        return dg.l2(tor, tor.ginv * sum(la.norm2(g[k], state.H, Hinv) for k in range(tor.n)))

    def __call__(self, state: FlowState) -> None:
        sup = float(np.max(moment_norm2(state)))
        rel = (sup - self.sup) / (1 + self.sup)
        self.max_rel_increase = max(self.max_rel_increase, rel)
        if rel > self.rel_tol:
            self.violations += 1
            if self.first_violation is None:
                self.first_violation = state.step_count
        self.sup = sup
        self.mu_drift = max(self.mu_drift, abs(slope(self.b, state.K) - self.mu0))
        self.steps += 1
        if self.stage is not None:
            g = self._gamma(state)
            self.gamma_max_increase = max(self.gamma_max_increase, g - self.gamma)
            self.gamma = g

    def summary(self) -> dict:
        out = {"steps": self.steps, "max_rel_increase": self.max_rel_increase,
               "violations": self.violations, "first_violation": self.first_violation,
               "rel_tol": self.rel_tol, "mu0": self.mu0, "mu_drift": self.mu_drift}
        if self.stage is not None:
            out["gamma"] = {"initial": self.gamma0, "final": self.gamma,
                            "max_increase": self.gamma_max_increase if self.steps else None}
        return out


def _summary(monitor: dg.RunMonitor, b, chain, checks: _StepChecks | None = None) -> dict:
    out: dict = {}
    if checks is not None:
        out["steps"] = checks.summary()
    for which, reps in monitor.reports.items():
        if not reps:
            continue
        worst = max(reps, key=lambda tr: tr[1].residual / max(tr[1].tol, 1e-300))
        out[which] = {"C": reps[-1][1].C, "flagged": sum(r.flagged for _, r in reps),
                      "samples": len(reps), "worst_t": worst[0],
                      "worst_residual": worst[1].residual, "worst_tol": worst[1].tol}
    if monitor.uy:
        margins = [u.rhs - u.lhs for u in monitor.uy if np.isfinite(u.lhs)]
        out["uy"] = {"status": monitor.uy[-1].status, "samples": len(monitor.uy),
                     "min_margin": min(margins) if margins else None}
    if monitor.moser is not None:
        m = monitor.moser
        out["moser"] = {"C": m.C, "A": m.A, "integral": m.integral, "status": m.status,
                        "x0": list(monitor.x0), "R": monitor.R}
    if chain:
        rep = ft.stability_report(b, chain)
        out["stability"] = {"mu": rep.mu_E, "destabilizing": rep.destabilizing,
                            "ordered": rep.ordered,
                            "semistable_boundary": rep.semistable_boundary,
                            "stages": [{"position": s.position, "degree": s.degree, "rank": s.rank,
                                        "slope": s.slope, "quotient_slope": s.quotient_slope,
                                        "destabilizing": s.destabilizing,
                                        "degree_mismatch": s.degree_mismatch} for s in rep.stages],
                            "violations": list(rep.violations)}
        out["zalg"] = [list(p) for p in ft.zalg_detect(chain, b.h0)]
    return out


def run_scenario(cfg: ScenarioConfig, out_dir: str | None = None) -> RunResult:
    """Execute a validated config; returns the exit status and the in-memory records."""
    t0 = time.perf_counter()
    out_dir = out_dir or cfg.output.directory
    manifest = {"config": _jsonable(cfg.to_dict()), "config_text": cfg.echo(),
                "versions": {"ymflow": __version__, "numpy": np.__version__,
                             "python": platform.python_version()},
                "status": "running", "exit_code": None, "abort": None}
    result = RunResult(EXIT_OK, out_dir, manifest=manifest)

    def finish(code: int, **info) -> RunResult:
        manifest.update(info)
        manifest["exit_code"] = code
        manifest["wall_time_s"] = time.perf_counter() - t0
        result.status = code
        try:
            with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
                json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            logger.error("cannot write manifest: %s", exc)
            result.status = EXIT_IO
            result.error = str(exc)
        return result

    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        result.status, result.error = EXIT_IO, str(exc)
        logger.error("cannot create output directory %s: %s", out_dir, exc)
        return result

    try:
        b, chain = build_scenario(cfg)
    except ValueError as exc:
        result.error = str(exc)
        return finish(EXIT_CONFIG, status="config error", abort={"step": 0, "reason": str(exc)})
    bound = stability_bound(b, cfg.flow.cfl)
    dt = cfg.flow.dt if cfg.flow.dt is not None else bound
    if dt > bound * (1 + 1e-12):
        msg = f"flow.dt={dt!r} exceeds the stability bound {bound!r} for cfl={cfg.flow.cfl!r}"
        result.error = msg
        return finish(EXIT_CONFIG, status="config error", abort={"step": 0, "reason": msg})
    mons = set(cfg.flow.monitors)
    d = cfg.diagnostics
    settings = dg.MonitorSettings(k_max=d.k_grid_max, fit_cap=d.fit_cap, moser_q=d.q, moser_p=d.p,
                                  moser_R=d.moser_radius,
                                  moser_window=tuple(d.window) if d.window else None,
                                  residuals="residuals" in mons, moser="moser" in mons)
    monitor = dg.RunMonitor(b, chain if "stage" in mons else [], settings)
    result.monitor = monitor
    nsteps = int(np.ceil(cfg.flow.t_max / dt - 1e-9)) if cfg.flow.t_max > 0 else 0
    manifest.update({"dt": cfg.flow.t_max / nsteps if nsteps else dt, "stability_bound": bound,
                     "steps_planned": nsteps, "bundle": b.name, "rank": b.rank})

    outs = None
    state = None
    last = {"state": None}
    checks = None
    try:
        outs = _Outputs(cfg, out_dir, b, monitor)
        if monitor.barrier is not None:
            outs.sigma(monitor.barrier.sigma)
        state = initial_state(b)
        last["state"] = state
        checks = _StepChecks(b, state, chain[0] if chain and "stepwise" in mons else None)
        outs.snapshot(state)

        def on_step(s: FlowState) -> None:
            last["state"] = s
            checks(s)
            if s.step_count % cfg.flow.snapshot_every == 0:
                outs.snapshot(s)

        if cfg.flow.t_max <= 0:
            monitor(state, None)
            outs.row(state)
        state, _ = run_flow(state, b, cfg.flow.t_max, dt, monitor=monitor,
                            sample_every=cfg.flow.sample_every, cfl=cfg.flow.cfl,
                            on_sample=outs.row, on_step=on_step)
        if state.step_count % cfg.flow.snapshot_every:
            outs.snapshot(state)
    except (PositivityError, StepSizeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        step = getattr(exc, "step", None)
        if outs is not None:
            outs.row(None)
            outs.close()
        reason = f"{type(exc).__name__}: {exc}"
        loc = getattr(exc, "location", None)
        result.error = reason
        result.rows = monitor.rows
        s = last["state"]
        manifest["files"] = ["series.csv"] + (outs.files if outs else [])
        return finish(EXIT_NUMERIC, status="aborted",
                      abort={"step": step if step is not None else (s.step_count + 1 if s else 0),
                             "t": s.t if s else 0.0, "reason": reason,
                             "location": None if loc is None else [int(i) for i in loc]},
                      summary=_jsonable(_summary(monitor, b, chain, checks)))
    except OSError as exc:
        if outs is not None:
            outs.close()
        result.error = str(exc)
        return finish(EXIT_IO, status="io error", abort={"step": state.step_count if state else 0,
                                                          "reason": str(exc)})
    outs.close()
    result.rows = monitor.rows
    result.state = state
    manifest["files"] = ["series.csv"] + outs.files
    manifest["density"] = outs.density
    return finish(EXIT_OK, status="ok", steps=state.step_count, t_final=state.t,
                  samples=len(monitor.rows), summary=_jsonable(_summary(monitor, b, chain, checks)))
