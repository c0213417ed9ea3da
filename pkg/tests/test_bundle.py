import numpy as np
import pytest

from ymflow import bundle as bd
from ymflow import linalg as la
from ymflow.manifold import build_torus, integrate


@pytest.fixture(scope="module")
def T1():
    return build_torus(1, [0.3 + 1.1j], [16, 16])


def test_flat_bundle_has_zero_curvature(T1):
    b = bd.make_line_bundle(T1, 0)
    assert np.max(np.abs(bd.background_curvature(b).values)) == 0
    assert bd.computed_degree(b) == 0


@pytest.mark.parametrize("d", [3, -1, 2])
def test_degree_quantization(T1, d):
    b = bd.make_line_bundle(T1, d)
    assert bd.computed_degree(b) == pytest.approx(d, abs=1e-8)
    # plaquette-phase oracle, independent of the curvature formula
    assert bd.flux_winding(T1, b.degrees)[0] == pytest.approx(d / (T1.metric_scale * 1.1), abs=1e-8)
    assert b.degree == pytest.approx(d / (T1.metric_scale * 1.1))
    assert bd.cocycle_residual(b) < 1e-10


def test_line_bundle_curvature_constant(T1):
    K = bd.moment_map(T1, bd.background_curvature(bd.make_line_bundle(T1, 2)).values)
    assert np.ptp(K.real) < 1e-8


def test_degree_n2():
    T = build_torus(2, [1j, 2j], [8, 8, 8, 8])
    b = bd.make_line_bundle(T, [1, 2])
    assert bd.computed_degree(b) == pytest.approx(bd.topological_degree(T, b.degrees), abs=1e-8)
    assert bd.cocycle_residual(b) < 1e-10


def test_zero_class_extension_is_direct_sum(T1):
    O = bd.make_line_bundle(T1, 0)
    s = bd.direct_sum(O, O)
    e = bd.extension(O, O, np.zeros((1,) + T1.grid + (1, 1), dtype=complex))
    assert np.array_equal(s.beta, e.beta) and np.array_equal(s.h0, e.h0)
    assert np.array_equal(s.degrees, e.degrees)


def test_constant_class_is_integrable():
    T = build_torus(2, [1j, 1j], [8, 8, 8, 8])
    O = bd.make_line_bundle(T, 0)
    e = bd.extension(O, O, bd.extension_class(T, O, O, [1.0, 0.5j]))
    assert bd.integrability_check(e) < 1e-10


def test_nonclosed_perturbation_reported():
    T = build_torus(2, [1j, 1j], [8, 8, 8, 8])
    b = bd.direct_sum(bd.make_line_bundle(T, 0), bd.make_line_bundle(T, 0))
    rng = np.random.default_rng(3)
    beta = rng.normal(size=b.beta.shape) + 1j * rng.normal(size=b.beta.shape)
    from dataclasses import replace
    assert bd.integrability_check(replace(b, beta=0.1 * beta)) > 1e-3


def test_mismatched_tori_rejected(T1):
    T2 = build_torus(1, [1j], [16, 16])
    with pytest.raises(ValueError):
        bd.direct_sum(bd.make_line_bundle(T1, 0), bd.make_line_bundle(T2, 0))
    O = bd.make_line_bundle(T1, 0)
    with pytest.raises(ValueError):
        bd.extension(O, O, np.zeros((1, 8, 8, 1, 1), dtype=complex))


def test_constant_class_needs_untwisted_entry(T1):
    with pytest.raises(ValueError):
        bd.extension_class(T1, bd.make_line_bundle(T1, 1), bd.make_line_bundle(T1, -1), [1.0])


def test_theta_section_is_holomorphic_and_vanishes_once():
    from ymflow.manifold import d_antiholo
    T = build_torus(1, [1j], [32, 32])
    th = bd.theta_section(T, 0)
    r = d_antiholo(T, th, [1])[0]
    assert np.max(np.abs(r)) < 0.05 * np.max(np.abs(th))
    ix = np.unravel_index(np.argmin(np.abs(th)), T.grid)
    assert ix == (16, 16)


def test_perturbed_metric_positive(T1):
    b = bd.direct_sum(bd.make_line_bundle(T1, 1), bd.make_line_bundle(T1, -1))
    h0 = bd.perturbed_metric(T1, b.degrees, 0.4)
    assert np.min(la.min_eig(h0)) > 0
    assert np.allclose(h0, la.dag(h0))


def test_gauge_transform_preserves_degree(T1):
    O = bd.make_line_bundle(T1, 0)
    e = bd.extension(O, O, bd.extension_class(T1, O, O, [1.0], 0.2))
    u = np.zeros(T1.grid + (2, 2), dtype=complex)
    u[..., 0, 0] = u[..., 1, 1] = 1
    u[..., 0, 1] = 0.2 * np.exp(2j * np.pi * T1.coord(0))
    g = bd.gauge_transform_bundle(e, u)
    assert bd.computed_degree(g) == pytest.approx(0.0, abs=1e-8)
    assert g.h0_inv is not e.h0_inv
    assert np.allclose(g.h0_inv @ g.h0, np.eye(2))
