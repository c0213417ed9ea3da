"""Build the torus, bundle and declared filtration a config describes."""
from __future__ import annotations

import os
from dataclasses import replace

import numpy as np

from . import bundle as bd
from . import filtration as ft
from .config import ScenarioConfig
from .manifold import LatticeTorus, build_torus

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "configs")


def shipped_scenarios() -> dict[str, str]:
    """Name to path for every ``.cfg`` shipped with the package."""
    out = {}
    for name in sorted(os.listdir(SCENARIO_DIR)):
        if name.endswith(".cfg"):
            out[name[:-4]] = os.path.join(SCENARIO_DIR, name)
    return out


def frame_change(torus: LatticeTorus, amplitude: float) -> np.ndarray:
    """Smooth non-unitary frame ``u = (1, a e(x1); a cos(2 pi y_n), 1)`` for rank two.

    ``det u >= 1 - a^2`` so it is invertible for ``a < 1``.
    """
    x1 = torus.coord(0)
    yn = torus.coord(2 * torus.n - 1)
    u = np.zeros(torus.grid + (2, 2), dtype=complex)
    u[..., 0, 0] = 1.0
    u[..., 1, 1] = 1.0
    u[..., 0, 1] = amplitude * np.exp(2j * np.pi * x1)
    u[..., 1, 0] = amplitude * np.cos(2 * np.pi * yn)
    return u


def build_torus_from(cfg: ScenarioConfig) -> LatticeTorus:
    return build_torus(cfg.torus.n, cfg.torus.tau, cfg.torus.grid)


def _base_bundle(cfg: ScenarioConfig, torus: LatticeTorus) -> bd.BundleSpec:
    c = cfg.bundle
    if c.construction == "line":
        b = bd.make_line_bundle(torus, c.degrees[0])
    elif c.construction == "theta_pair":
        b = bd.direct_sum(bd.make_line_bundle(torus, [1, 0]), bd.make_line_bundle(torus, [0, 1]))
    else:
        sub = bd.make_line_bundle(torus, c.degrees[0])
        quot = bd.make_line_bundle(torus, c.degrees[1])
        if c.construction == "sum":
            b = bd.direct_sum(sub, quot)
        else:
            cls = bd.extension_class(torus, sub, quot, c.class_constant, c.class_exact, c.class_mode)
            b = bd.extension(sub, quot, cls)
    if c.metric_perturbation:
        b = replace(b, h0=bd.perturbed_metric(torus, b.degrees, c.metric_perturbation))
    if c.name:
        b = replace(b, name=c.name)
    return b


def _stage(name: str, b: bd.BundleSpec, position: int) -> ft.SubsheafSpec:
    if name == "canonical":
        return ft.canonical_sub(b)
    if name == "coordinate":
        return ft.coordinate_stage(b, 1, position)
    if name == "theta_pair":
        return ft.theta_pair_sub(b)
    raise ValueError(f"unknown stage {name!r}")


def build_scenario(cfg: ScenarioConfig) -> tuple[bd.BundleSpec, list[ft.SubsheafSpec]]:
    """Bundle with its initial metric ``h0`` and the declared stages in the same frame.

    Stages are built in the block frame and then moved with the bundle when a
    frame change is configured.  Raises ``ValueError`` on inconsistent data.
    """
    torus = build_torus_from(cfg)
    b = _base_bundle(cfg, torus)
    chain = []
    for i, name in enumerate(cfg.filtration.stages):
        st = _stage(name, b, i + 1)
        if cfg.filtration.expected_degrees:
            st = replace(st, expected_degree=float(cfg.filtration.expected_degrees[i]))
        chain.append(st)
    a = cfg.bundle.frame_amplitude
    if a:
        if np.any(bd.hom_charge(b.degrees, b.degrees)):
            raise ValueError("bundle.frame_amplitude needs blocks of equal degree")
        u = frame_change(torus, a)
        b = bd.gauge_transform_bundle(b, u)
        chain = [ft.gauge_stage(st, u) for st in chain]
    return b, chain
