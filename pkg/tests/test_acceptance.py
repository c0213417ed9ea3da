"""Acceptance criteria 1-13, each printing one PASS/FAIL line at the stated tolerance.

The shipped scenarios are run once per session and shared between criteria.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from ymflow import bundle as bd
from ymflow import diagnostics as dg
from ymflow import filtration as ft
from ymflow import flow as fl
from ymflow import linalg as la
from ymflow.config import load_config, parse_config
from ymflow.manifold import build_torus
from ymflow.runner import run_scenario
from ymflow.scenarios import build_scenario, shipped_scenarios
from ymflow.snapshot import read_snapshot

pytestmark = pytest.mark.slow

SHIPPED = shipped_scenarios()
SMOOTH = ("split_unstable", "semistable_extension", "destabilized_extension", "line_fixed_point")
RESIDUALS = dg.INEQUALITIES + ("S",)


def _run(name, out, overrides=None):
    res = run_scenario(load_config(SHIPPED[name], overrides), str(out))
    assert res.status == 0, res.error
    return res


@pytest.fixture(scope="session")
def shipped(tmp_path_factory):
    root = tmp_path_factory.mktemp("shipped")
    return {name: _run(name, root / name) for name in SHIPPED}


@pytest.fixture(scope="session")
def half_dt(tmp_path_factory, shipped):
    """Smooth scenarios again with half the step; per-step gamma tracking is not needed here."""
    root = tmp_path_factory.mktemp("half")
    out = {}
    for name in SMOOTH:
        m = shipped[name].manifest
        cfg = load_config(SHIPPED[name])
        ov = {("flow", "dt"): m["dt"] / 2, ("flow", "sample_every"): 2 * cfg.flow.sample_every,
              ("flow", "snapshot_every"): 2 * cfg.flow.snapshot_every,
              ("flow", "monitors"): [x for x in cfg.flow.monitors if x != "stepwise"]}
        out[name] = _run(name, root / name, ov)
    return out


def _column(res, key):
    return np.array([np.nan if r[key] is None else r[key] for r in res.rows], dtype=float)


def test_01_norm_equivalence(criterion):
    cfg = load_config(SHIPPED["semistable_extension"], {("torus", "grid"): [32, 32]})
    b, _ = build_scenario(cfg)
    dt = fl.stability_bound(b)
    worst = []
    t0 = time.perf_counter()

    def check(s):
        worst.append(fl.norm_equivalence_residual(s, b))

    fl.run_flow(fl.initial_state(b), b, 0.5, dt, sample_every=32, on_sample=check)
    wall = time.perf_counter() - t0
    ok = max(worst) < 1e-10 and wall <= 60
    criterion(1, ok, f"max relative norm gap {max(worst):.2e} over {len(worst)} samples "
                     f"(< 1e-10), {wall:.1f} s")
    assert ok


def test_02_fixed_point(shipped, criterion):
    res = shipped["line_fixed_point"]
    err = float(np.max(np.abs(res.state.h - 1)))
    ok = res.state.step_count == 200 and err < 1e-10
    criterion(2, ok, f"|h - 1|_inf = {err:.2e} after {res.state.step_count} steps (< 1e-10)")
    assert ok


def test_03_split_rate(shipped, criterion):
    res = shipped["split_unstable"]
    t = _column(res, "t")
    tr = _column(res, "trhS_L2")
    rate = np.polyfit(t, np.log(tr), 1)[0]
    # K from every curvature snapshot and the final state against the graded slopes
    b, _ = build_scenario(load_config(SHIPPED["split_unstable"]))
    target = np.diag([1.0, -1.0])
    kerr = float(np.max(np.abs(res.state.K - target)))
    n = b.torus.n
    for f in res.manifest["files"]:
        if "curvature_" in f:
            F = np.moveaxis(read_snapshot(f"{res.out_dir}/{f}").data, -1, 0)
            F = F.reshape((n, n) + F.shape[1:])
            kerr = max(kerr, float(np.max(np.abs(bd.moment_map(b.torus, F) - target))))
    wall = res.manifest["wall_time_s"]
    ok = abs(rate + 1) < 0.01 and kerr < 1e-6 and wall <= 60
    criterion(3, ok, f"slope of log Tr h^S = {rate:.6f} (-1 within 1%), "
                     f"|K - diag(1,-1)| = {kerr:.1e} (< 1e-6), {wall:.1f} s")
    assert ok


def test_04_max_principle(shipped, criterion):
    worst = {name: r.manifest["summary"]["steps"] for name, r in shipped.items()}
    bad = {k: v["violations"] for k, v in worst.items() if v["violations"]}
    top = max(v["max_rel_increase"] for v in worst.values())
    ok = not bad
    criterion(4, ok, f"largest per-step relative increase of sup|K|^2 {top:.1e} "
                     f"(<= 1e-6) over {len(worst)} scenarios" + (f"; violations {bad}" if bad else ""))
    assert ok


def test_05_slope_conservation(shipped, criterion):
    drift = {name: r.manifest["summary"]["steps"]["mu_drift"] for name, r in shipped.items()}
    for name, r in shipped.items():
        mu = _column(r, "mu")
        drift[name] = max(drift[name], float(np.max(np.abs(mu - mu[0]))))
    top = max(drift.values())
    ok = top < 1e-8
    criterion(5, ok, f"max |mu(t) - mu(0)| = {top:.1e} (< 1e-8) over {len(drift)} scenarios")
    assert ok


def _decomposition(N):
    cfg = load_config(SHIPPED["semistable_extension"],
                      {("torus", "grid"): [N, N], ("bundle", "metric_perturbation"): 0.3})
    b, (stage,) = build_scenario(cfg)
    s = fl.initial_state(b)
    geo = ft.geometry(b, stage, s.H)
    return ft.curvature_decompose(b, stage, geo, s.K).residual


def test_06_curvature_decomposition(criterion):
    res = [_decomposition(N) for N in (16, 32, 64)]
    orders = [np.log2(res[i] / res[i + 1]) for i in range(2)]
    consts = [r * N * N for r, N in zip(res, (16, 32, 64))]
    ok = min(orders) >= 1.8
    criterion(6, ok, f"residuals {', '.join(f'{r:.2e}' for r in res)}; orders "
                     f"{', '.join(f'{o:.2f}' for o in orders)} (>= 1.8); res/h^2 "
                     f"{', '.join(f'{c:.3g}' for c in consts)}")
    assert ok


CLOSEDNESS = """\
[torus]
n = 2
grid = [{N}, {N}, {N}, {N}]
[bundle]
construction = extension
degrees = [[0, 0], [0, 0]]
class_constant = [1.0, 0.5]
frame_amplitude = 0.1
[filtration]
stages = [canonical]
[flow]
t_max = 0
"""


def _closedness(N):
    b, (stage,) = build_scenario(parse_config(CLOSEDNESS.format(N=N)))
    return ft.gamma_closedness_residual(b, stage, ft.geometry(b, stage, b.h0))


def test_07_closedness_and_uy(shipped, criterion):
    r12, r24 = _closedness(12), _closedness(24)
    order = np.log2(r12 / r24)
    uy = shipped["destabilized_extension"].monitor.uy
    margin = min(u.rhs - u.lhs for u in uy)
    statuses = {u.status for u in uy}
    ok = order >= 1.8 and margin >= -1e-6 and statuses == {"ok"}
    criterion(7, ok, f"closedness residual {r12:.2e} -> {r24:.2e}, order {order:.3f} (>= 1.8); "
                     f"UY min margin {margin:.6f} (>= -1e-6) over {len(uy)} samples")
    assert ok


def test_08_semistable_decay(shipped, criterion):
    res = shipped["semistable_extension"]
    g = _column(res, "gamma_L2")
    steps = res.manifest["summary"]["steps"]
    inc = max(float(np.max(np.diff(g))), steps["gamma"]["max_increase"])
    ratio = g[-1] / g[0]
    b = res.monitor.b
    K = res.state.K - res.state.mu * np.eye(b.rank)
    knorm = dg.l2(b.torus, la.norm2(K, res.state.H, la.inv(res.state.H)))
    wall = res.manifest["wall_time_s"]
    ok = inc <= 1e-8 and ratio < 0.1 and knorm < 1e-2 and wall <= 300
    criterion(8, ok, f"max per-step increase of ||gamma|| {inc:.1e} (<= 1e-8), final/initial "
                     f"{ratio:.4f} (< 0.1), ||K - mu||_L2 at t=20 {knorm:.4f} (< 1e-2), {wall:.0f} s")
    assert ok


def test_09_barrier(shipped, criterion):
    res = shipped["barrier_theta_n2"]
    sigma = res.monitor.barrier.sigma
    # the degree-one theta sections vanish at x = y = 1/2 in each factor
    p = (6, 6, 6, 6)
    near = np.ones(sigma.shape, dtype=bool)
    for axis in range(4):
        idx = np.arange(12)
        d = np.minimum((idx - p[axis]) % 12, (p[axis] - idx) % 12)
        shape = [1] * 4
        shape[axis] = 12
        near &= (d <= 1).reshape(shape)
    outside = float(np.min(sigma[~near]))
    zalg = ft.zalg_detect(res.monitor.chain, res.monitor.b.h0)
    wall = res.manifest["wall_time_s"]
    ok = sigma[p] < 1e-6 and outside > 1e-3 and zalg == [p] and wall <= 300
    criterion(9, ok, f"sigma(p) = {sigma[p]:.1e} (< 1e-6), min outside 3^4 cells {outside:.3e} "
                     f"(> 1e-3), zalg = {zalg}")
    assert ok


def test_10_density(criterion):
    T = build_torus(2, [1j, 1j], [12, 12, 12, 12])
    p = (2, 9, 5, 7)
    spike = np.zeros(T.grid)
    spike[p] = 1.0
    h = max(T.spacing)
    peaks = [dg.zan_density(T, spike, k * h).peak() for k in (2, 3, 4)]
    spreads = [float(np.ptp(dg.zan_density(T, np.full(T.grid, 0.7), k * h).values)) for k in (2, 3, 4)]
    ok = all(q == p for q in peaks) and max(spreads) < 1e-10
    criterion(10, ok, f"spike peaks {peaks} at {p}; constant-field spread {max(spreads):.1e} (< 1e-10)")
    assert ok


def test_11_residual_suite(shipped, half_dt, criterion):
    lines = []
    ok = True
    for name in SMOOTH:
        a = shipped[name].manifest["summary"]
        b = half_dt[name].manifest["summary"]
        for which in RESIDUALS:
            if which not in a:
                continue
            ca, cb = a[which]["C"], b[which]["C"]
            flagged = a[which]["flagged"] + b[which]["flagged"]
            stable = max(ca, cb) <= 2 * min(ca, cb) or max(ca, cb) == 0
            good = ca <= 100 and cb <= 100 and flagged == 0 and stable
            ok &= good
            if not good or ca or cb:
                lines.append(f"{name}/{which} C {ca:.3g} -> {cb:.3g}, flagged {flagged}")
    criterion(11, ok, "all residuals within tolerance, C <= 100 and stable under dt/2"
                      + (f"; nonzero C: {'; '.join(lines)}" if lines else ""))
    assert ok


def _moser(N, sample_every):
    cfg = load_config(SHIPPED["semistable_extension"],
                      {("torus", "grid"): [N, N], ("flow", "t_max"): 1.0,
                       ("flow", "sample_every"): sample_every,
                       ("flow", "monitors"): ["stage", "residuals", "moser"]})
    b, chain = build_scenario(cfg)
    mon = dg.RunMonitor(b, chain, dg.MonitorSettings())
    fl.run_flow(fl.initial_state(b), b, 1.0, fl.stability_bound(b), monitor=mon,
                sample_every=sample_every)
    return mon.moser


def test_12_moser_refinement(criterion):
    # identical sample times on both grids: dt drops by four under refinement
    m16, m32 = _moser(16, 100), _moser(32, 400)
    change = abs(m32.C / m16.C - 1)
    ok = np.isfinite(m16.C) and np.isfinite(m32.C) and change < 0.3
    criterion(12, ok, f"fitted Moser constant {m16.C:.4f} (16^2) -> {m32.C:.4f} (32^2), "
                      f"change {100 * change:.1f}% (< 30%)")
    assert ok


def test_13_determinism(shipped, tmp_path, criterion):
    same = {}
    for name in SHIPPED:
        again = _run(name, tmp_path / name)
        first = open(f"{shipped[name].out_dir}/series.csv", "rb").read()
        second = open(f"{again.out_dir}/series.csv", "rb").read()
        same[name] = first == second
    ok = all(same.values())
    criterion(13, ok, f"byte-identical series.csv on rerun for {sum(same.values())}/{len(same)} "
                      "shipped configs")
    assert ok
