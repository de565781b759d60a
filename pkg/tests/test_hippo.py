import numpy as np
import pytest
from hypothesis import given, strategies as st

from s5rf.errors import InvalidConfigError
from s5rf.hippo import (
    Discretization,
    build_hippo_normal,
    eig_hippo_normal,
    init_layer,
    init_layer_random,
)


def test_size_one():
    np.testing.assert_array_equal(build_hippo_normal(1), [[-0.5]])


def test_size_two_closed_form():
    a = build_hippo_normal(2)
    off = np.sqrt(0.5 * 1.5)
    np.testing.assert_allclose(a, [[-0.5, off], [-off, -0.5]], rtol=0, atol=1e-15)
    # eigenvalues of [[p, q], [-q, p]] are p +- i q
    eig = eig_hippo_normal(a)
    np.testing.assert_allclose(eig.lambdas, [-0.5 - 1j * off, -0.5 + 1j * off], atol=1e-14)


def test_zero_size_rejected():
    with pytest.raises(InvalidConfigError):
        build_hippo_normal(0)


@given(st.integers(1, 64))
def test_symmetric_part_is_minus_identity(h):
    a = build_hippo_normal(h)
    assert np.max(np.abs(a + a.T + np.eye(h))) <= 1e-14


@pytest.mark.parametrize("h", [2, 4, 8, 16, 32, 64])
def test_real_parts_and_conjugate_closure(h):
    lam = eig_hippo_normal(build_hippo_normal(h)).lambdas
    assert np.max(np.abs(lam.real + 0.5)) < 1e-9
    for z in lam:
        assert np.min(np.abs(lam - np.conj(z))) < 1e-9


def test_size_32_has_16_frequency_pairs():
    lam = eig_hippo_normal(build_hippo_normal(32)).lambdas
    assert np.all(np.abs(lam.real + 0.5) < 1e-9)
    neg, pos = np.sort(lam.imag[lam.imag < 0]), np.sort(lam.imag[lam.imag > 0])
    assert len(neg) == len(pos) == 16
    np.testing.assert_allclose(-neg[::-1], pos, rtol=1e-9)


@pytest.mark.parametrize("h", [1, 3, 16, 33])
def test_eigensystem_matches_dense_solver(h):
    a = build_hippo_normal(h)
    eig = eig_hippo_normal(a)
    ident = eig.basis.conj().T @ eig.basis
    assert np.max(np.abs(ident - np.eye(h))) < 1e-10
    recon = (eig.basis * eig.lambdas) @ eig.basis_inverse
    assert np.linalg.norm(recon - a) / np.linalg.norm(a) < 1e-10
    dense = np.linalg.eigvals(a)
    by_imag = lambda z: z[np.argsort(z.imag, kind="stable")]
    np.testing.assert_allclose(by_imag(dense), eig.lambdas, atol=1e-9 * max(1, np.abs(dense).max()))
    assert np.all(np.diff(eig.lambdas.imag) >= 0)


def test_init_layer_hippo_spectrum():
    p = init_layer(8, 32, 32, seed=0)
    lam = eig_hippo_normal(build_hippo_normal(32)).lambdas
    np.testing.assert_array_equal(p.freq, lam.imag)
    np.testing.assert_allclose(np.exp(p.log_neg_real), 0.5, rtol=1e-12)
    np.testing.assert_array_equal(p.log_eta, 0.0)
    assert p.threshold == 1.0 and p.mode is Discretization.DIRAC
    assert p.fixed_basis is None


def test_init_layer_tiles_blocks():
    one = init_layer(4, 32, 32, seed=0)
    two = init_layer(4, 64, 32, seed=0)
    np.testing.assert_array_equal(two.freq, np.tile(one.freq, 2))
    half = init_layer(4, 64, 64, seed=0)
    lam32 = np.sort(np.tile(eig_hippo_normal(build_hippo_normal(32)).lambdas.imag, 2))
    np.testing.assert_allclose(np.sort(two.lambdas.imag), lam32, atol=1e-12)
    assert len(set(np.round(half.freq, 9))) == 64


def test_init_layer_connection_is_rotated_gaussian():
    p = init_layer(200, 32, 32, seed=3)
    eig = eig_hippo_normal(build_hippo_normal(32))
    raw = eig.basis @ p.connection  # undo the rotation
    assert abs(np.var(raw.real) - 1 / 400) < 2e-4
    assert abs(np.var(raw.imag) - 1 / 400) < 2e-4
    assert abs(np.mean(raw)) < 5e-3


def test_init_layer_fixed_basis_is_block_diagonal():
    p = init_layer(1, 64, 32, seed=0, mode="zoh", fixed_basis=True)
    assert p.mode is Discretization.ZOH
    v = p.fixed_basis
    np.testing.assert_array_equal(v[:32, 32:], 0)
    np.testing.assert_allclose(v.conj().T @ v, np.eye(64), atol=1e-12)


def test_init_layer_bad_block():
    with pytest.raises(InvalidConfigError):
        init_layer(4, 48, 32, seed=0)


def test_random_init_bounds_and_determinism():
    p = init_layer_random(3, 256, seed=11)
    b = np.exp(p.log_neg_real)
    assert np.all((b >= 2) & (b <= 3))
    assert np.all((p.freq >= 5) & (p.freq <= 10))
    q = init_layer_random(3, 256, seed=11)
    np.testing.assert_array_equal(p.connection, q.connection)
    np.testing.assert_array_equal(p.freq, q.freq)
    assert np.all(np.exp(init_layer_random(2, 4, seed=0).log_neg_real) > 0)
