import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ymflow import linalg as la


def _herm_pd(rng, shape, r):
    a = rng.normal(size=shape + (r, r)) + 1j * rng.normal(size=shape + (r, r))
    return a @ la.dag(a) + 0.5 * np.eye(r)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 3]))
def test_closed_forms_match_numpy(seed, r):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 3, r, r)) + 1j * rng.normal(size=(4, 3, r, r))
    b = rng.normal(size=(4, 3, r, r)) + 1j * rng.normal(size=(4, 3, r, r))
    assert np.allclose(la.mm(a, b), a @ b, atol=1e-13)
    assert np.allclose(la.inv(a), np.linalg.inv(a), atol=1e-9 * np.max(np.abs(np.linalg.inv(a))))
    h = _herm_pd(rng, (4, 3), r)
    assert np.allclose(la.min_eig(h), np.linalg.eigvalsh(h)[..., 0], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 3.0))
def test_expm_of_self_adjoint_matches_hermitian_route(seed, scale):
    # X self-adjoint for H: H exp(X) = L exp(L^dag X L^-dag) L^dag
    rng = np.random.default_rng(seed)
    H = _herm_pd(rng, (5,), 2)
    A = rng.normal(size=(5, 2, 2)) + 1j * rng.normal(size=(5, 2, 2))
    A = scale * la.herm(A)
    X = la.inv(H) @ A
    L = np.linalg.cholesky(H)
    ref = L @ la.expm_herm(la.herm(la.dag(L) @ X @ la.dag(la.inv(L)))) @ la.dag(L)
    got = H @ la.expm_real_spectrum(X)
    assert np.allclose(got, ref, rtol=1e-10, atol=1e-10 * np.max(np.abs(ref)))


def test_expm_small_argument_series():
    X = np.array([[[1e-9, 2e-9], [2e-9, -1e-9]]], dtype=complex)
    assert np.allclose(la.expm_real_spectrum(X), la.expm_herm(X), atol=1e-15)


def test_inv_singular_raises():
    with pytest.raises(np.linalg.LinAlgError):
        la.inv(np.zeros((3, 2, 2)))


def test_sqrtm_and_norms():
    rng = np.random.default_rng(1)
    H = _herm_pd(rng, (6,), 3)
    s = la.sqrtm_psd(H)
    assert np.allclose(s @ s, H, atol=1e-12)
    m = rng.normal(size=(6, 3, 3)) + 0j
    # norm with the identity metric is the Frobenius norm
    assert np.allclose(la.norm2(m, np.broadcast_to(np.eye(3), H.shape)), la.norm2(m))
    assert np.all(la.norm2(m, H) >= 0)
    with pytest.raises(np.linalg.LinAlgError):
        la.sqrtm_psd(-H)
