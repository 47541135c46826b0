from __future__ import annotations

import cmath
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from delaybounds import DefectiveMatrix, OscillatorParams, build_model, eigen_decompose, g_norm, transformed_norm
from delaybounds.spectral import induced_norm


def companion_roots(c, w2):
    # roots of l^2 + c l + w2 = 0, upper half-plane root first
    disc = cmath.sqrt(c * c - 4 * w2)
    r1, r2 = (-c + disc) / 2, (-c - disc) / 2
    return (r1, r2) if r1.imag >= r2.imag else (r2, r1)


@pytest.fixture(scope="module")
def uncoupled():
    return build_model("vdp", OscillatorParams(mu1=1.0, mu2=1.0, h0=0.5, h1=1.0, d=0.0))


def block_eigvecs():
    """Eigenvectors of the uncoupled model built by hand from the 2x2 blocks."""
    cols = []
    for rows, (c, w2) in (((2, 3), (0.2, 4.0)), ((0, 1), (0.4, 1.0))):
        for lam in companion_roots(c, w2):
            v = np.zeros(4, dtype=complex)
            v[rows[0]], v[rows[1]] = 1.0, lam
            cols.append(v / np.linalg.norm(v))
    return np.column_stack(cols)


def test_uncoupled_eigenvalues(uncoupled):
    eig = eigen_decompose(uncoupled.A)
    expected = list(companion_roots(0.2, 4.0)) + list(companion_roots(0.4, 1.0))
    assert np.max(np.abs(eig.lambdas - np.array(expected))) <= 1e-9
    assert eig.alpha1 == pytest.approx(-0.1, abs=1e-12)
    assert eig.alphan == pytest.approx(-0.2, abs=1e-12)
    assert abs(expected[0].imag - 1.99750) < 1e-5 and abs(expected[2].imag - 0.97980) < 1e-5


def test_residual_invariants(eig, vdp):
    A = vdp.A
    assert np.linalg.norm(A @ eig.V - eig.V @ np.diag(eig.lambdas), 2) <= 1e-10 * np.linalg.norm(A, 2)
    assert np.linalg.norm(eig.V @ eig.Vinv - np.eye(4), 2) <= 1e-10
    assert np.all(np.diff(eig.lambdas.real) <= 0)


def test_kappa_dominates_row_norms(eig):
    assert np.all(eig.kappa >= np.linalg.norm(eig.V, axis=1) - 1e-15)
    assert np.allclose(eig.kappa, np.abs(eig.V).sum(axis=1))


def test_normalization_convention(eig):
    assert np.allclose(np.linalg.norm(eig.V, axis=0), 1.0)
    for col in eig.V.T:
        first = col[np.flatnonzero(np.abs(col) > 1e-12)[0]]
        assert first.imag == 0 and first.real > 0


def test_conjugate_pairs(eig):
    assert np.allclose(eig.V[:, 1], eig.V[:, 0].conj())
    assert np.allclose(eig.V[:, 3], eig.V[:, 2].conj())


def test_identity_is_defective():
    with pytest.raises(DefectiveMatrix):
        eigen_decompose(np.eye(4))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        eig = eigen_decompose(np.eye(4), policy="permissive")
    assert caught
    assert np.allclose(np.abs(eig.V), np.eye(4))


def test_diagonal_matrix():
    eig = eigen_decompose(np.diag([-1.0, -2.0]))
    assert np.allclose(eig.V, np.eye(2))
    assert np.allclose(eig.kappa, [1.0, 1.0])
    assert eig.alpha1 == -1.0 and eig.eta == 1.0


def test_g_norm_zero_and_at_origin(eig, vdp):
    assert g_norm(np.zeros((4, 4)), eig, 0.0) == 0.0
    assert g_norm(vdp.G, eig, 0.0) == 0.0


def test_g_norm_real_diagonal():
    eig = eigen_decompose(np.diag([-1.0, -2.0]))
    G = lambda t: np.diag([math.sin(t), -3.0 * math.cos(t)])
    for t in (0.3, 1.7):
        assert g_norm(G, eig, t) == pytest.approx(np.linalg.norm(G(t), 2), rel=1e-14)


def test_g_norm_removes_imaginary_diagonal(eig, vdp):
    Gx = eig.Vinv @ vdp.G(0.8) @ eig.V
    g = Gx - 1j * np.diag(np.diag(Gx).imag)
    assert g_norm(vdp.G, eig, 0.8) == pytest.approx(np.linalg.svd(g, compute_uv=False)[0], rel=1e-12)


def test_transformed_norm_trivial(eig):
    assert transformed_norm(np.zeros((4, 4)), eig, 0.0) == 0.0
    assert transformed_norm(np.eye(4), eig, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_transformed_norm_against_block_oracle(uncoupled):
    eig = eigen_decompose(uncoupled.A)
    V = block_eigvecs()
    assert np.allclose(eig.V, V, atol=1e-12)
    G = uncoupled.G(0.25)
    M = np.linalg.solve(V, G @ V)
    expected = np.linalg.svd(M, compute_uv=False)[0]
    assert transformed_norm(uncoupled.G, eig, 0.25) == pytest.approx(expected, rel=1e-10)


def test_induced_norm_matches_real_embedding():
    rng = np.random.default_rng(4)
    M = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    embed = np.block([[M.real, -M.imag], [M.imag, M.real]])
    assert induced_norm(M) == pytest.approx(np.linalg.svd(embed, compute_uv=False)[0], rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-3, 3)))
def test_reconstruction_random(A):
    A = A + 4.0 * np.diag([1.0, 2.0, 3.0, 4.0])  # keeps the eigenvalues apart
    eig = eigen_decompose(A)
    recon = eig.V @ np.diag(eig.lambdas) @ eig.Vinv
    assert np.linalg.norm(recon - A, 2) <= 1e-8 * np.linalg.norm(A, 2)


@settings(max_examples=40, deadline=None)
@given(t=st.floats(0, 50))
def test_g_norm_submultiplicative(eig, vdp, t):
    assert g_norm(vdp.G, eig, t) <= eig.normVinv * np.linalg.norm(vdp.G(t), 2) * eig.normV + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=4, max_size=4))
def test_kappa_rescaling(scales):
    from delaybounds.spectral import _normalize_columns

    eig = eigen_decompose(build_model("vdp", OscillatorParams(mu1=1, mu2=1, h0=0.5, h1=1)).A)
    scaled = eig.V @ np.diag(scales)
    assert np.allclose(np.abs(scaled).sum(axis=1), np.abs(eig.V) @ np.array(scales))
    assert np.allclose(_normalize_columns(scaled), eig.V)
