"""Packed symmetric storage, Mandel algebra and the curl/skew bridge."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdnns.tensors import (
    SQRT2,
    SymTensor,
    Tensor2,
    Tensor4Sym,
    curl_to_skw,
    mandel_to_sym,
    mandel_weights,
    npack,
    nskew,
    pack_moduli,
    pack_moduli_batch,
    pack_sym,
    skew_basis,
    skew_components,
    skew_from_components,
    sym_skw,
    sym_to_mandel,
    unpack_moduli,
    unpack_sym,
)


def _rand_sym(rng, dim):
    a = rng.standard_normal((dim, dim))
    return 0.5 * (a + a.T)


@pytest.mark.parametrize("dim", [2, 3])
def test_pack_counts(dim):
    assert npack(dim) == dim * (dim + 1) // 2
    assert nskew(dim) == dim * (dim - 1) // 2


@pytest.mark.parametrize("dim", [2, 3])
def test_pack_roundtrip_exact(dim, rng):
    a = _rand_sym(rng, dim)
    assert np.array_equal(unpack_sym(pack_sym(a)), a)


@pytest.mark.parametrize("dim", [2, 3])
def test_mandel_dot_is_double_contraction(dim, rng):
    """The whole point of the sqrt(2) weights."""
    for _ in range(5):
        a = _rand_sym(rng, dim)
        b = _rand_sym(rng, dim)
        assert np.dot(sym_to_mandel(a), sym_to_mandel(b)) == pytest.approx(
            np.tensordot(a, b), rel=1e-14)


@pytest.mark.parametrize("dim", [2, 3])
def test_mandel_roundtrip(dim, rng):
    a = _rand_sym(rng, dim)
    np.testing.assert_allclose(mandel_to_sym(sym_to_mandel(a)), a,
                               rtol=0, atol=1e-15)


def test_mandel_weights_values():
    np.testing.assert_array_equal(mandel_weights(2), [1.0, 1.0, SQRT2])
    np.testing.assert_array_equal(
        mandel_weights(3), [1.0, 1.0, 1.0, SQRT2, SQRT2, SQRT2])


def test_pack_sym_batched(rng):
    a = rng.standard_normal((4, 7, 3, 3))
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    p = pack_sym(a)
    assert p.shape == (4, 7, 6)
    np.testing.assert_array_equal(unpack_sym(p), a)


@pytest.mark.parametrize("dim", [2, 3])
def test_sym_skw_split(dim, rng):
    a = rng.standard_normal((dim, dim))
    s, w = sym_skw(a)
    full = s.full() + w.entries
    np.testing.assert_allclose(full, a, atol=1e-15)
    np.testing.assert_allclose(w.entries, -w.entries.T, atol=0)


@pytest.mark.parametrize("dim", [2, 3])
def test_curl_skew_correspondence(dim, rng):
    """curl_to_skw inverts 2*skew_components by construction."""
    a = rng.standard_normal((dim, dim))
    skw = 0.5 * (a - a.T)
    c = 2.0 * skew_components(a)
    np.testing.assert_allclose(curl_to_skw(c), skw, atol=1e-15)


def test_skew_basis_matches_curl_3d():
    """For u with constant gradient G, curl u = (G32-G23, G13-G31, G21-G12)."""
    G = np.array([[0.0, 1.0, 2.0], [3.0, 0.0, 4.0], [5.0, 6.0, 0.0]])
    curl = np.array([G[2, 1] - G[1, 2], G[0, 2] - G[2, 0], G[1, 0] - G[0, 1]])
    np.testing.assert_allclose(curl_to_skw(curl), 0.5 * (G - G.T), atol=1e-15)


def test_skew_roundtrip(rng):
    for dim in (2, 3):
        c = rng.standard_normal(nskew(dim))
        back = skew_components(skew_from_components(c))
        np.testing.assert_allclose(back, c, atol=1e-15)


def test_skew_basis_is_orthogonal_3d():
    B = skew_basis(3).reshape(3, -1)
    np.testing.assert_allclose(B @ B.T, 2.0 * np.eye(3), atol=1e-15)


class TestDataclasses:
    def test_tensor2_validation(self):
        with pytest.raises(ValueError):
            Tensor2(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            Tensor2(np.full((2, 2), np.nan))
        assert Tensor2(np.eye(3)).dim == 3

    def test_symtensor_from_full(self):
        s = SymTensor.from_full(np.diag([1.0, 2.0, 3.0]))
        assert s.dim == 3
        np.testing.assert_array_equal(s.packed[:3], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(s.packed[3:], 0.0)

    def test_tensor4_apply_identity(self, rng):
        eye = Tensor4Sym(np.eye(6))
        e = SymTensor.from_full(_rand_sym(rng, 3))
        out = eye.apply(e)
        np.testing.assert_allclose(out.packed, e.packed, atol=1e-15)


@pytest.mark.parametrize("dim", [2, 3])
def test_moduli_roundtrip(dim, rng):
    c4 = rng.standard_normal((dim,) * 4)
    c4 = 0.5 * (c4 + np.swapaxes(c4, 0, 1))
    c4 = 0.5 * (c4 + np.swapaxes(c4, 2, 3))
    t4 = pack_moduli(c4)
    np.testing.assert_allclose(unpack_moduli(t4), c4, atol=1e-14)


def test_pack_moduli_rejects_broken_symmetry(rng):
    c4 = rng.standard_normal((3, 3, 3, 3))
    with pytest.raises(ValueError, match="minor symmetry"):
        pack_moduli(c4)


def test_pack_moduli_batch_matches_single(rng):
    c4 = rng.standard_normal((5, 2, 2, 2, 2))
    c4 = 0.5 * (c4 + np.swapaxes(c4, -3, -4))
    c4 = 0.5 * (c4 + np.swapaxes(c4, -1, -2))
    batched = pack_moduli_batch(c4)
    for i in range(5):
        np.testing.assert_allclose(batched[i], pack_moduli(c4[i]).mandel,
                                   atol=1e-14)


def test_moduli_contraction_matches_mandel(rng):
    """m @ mandel(eps) must equal the full contraction C : eps."""
    dim = 3
    c4 = rng.standard_normal((dim,) * 4)
    c4 = 0.5 * (c4 + np.swapaxes(c4, 0, 1))
    c4 = 0.5 * (c4 + np.swapaxes(c4, 2, 3))
    eps = _rand_sym(rng, dim)
    direct = np.einsum("ijkl,kl->ij", c4, eps)
    via_mandel = mandel_to_sym(pack_moduli(c4).mandel @ sym_to_mandel(eps))
    np.testing.assert_allclose(via_mandel, direct, atol=1e-13)


@given(st.lists(st.floats(-1e6, 1e6), min_size=6, max_size=6))
@settings(max_examples=50, deadline=None)
def test_pack_roundtrip_property(vals):
    p = np.array(vals)
    np.testing.assert_array_equal(pack_sym(unpack_sym(p)), p)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_mandel_norm_preserved(seed):
    """Frobenius norm of the tensor equals the Mandel vector norm."""
    a = _rand_sym(np.random.default_rng(seed), 3)
    assert np.linalg.norm(sym_to_mandel(a)) == pytest.approx(
        np.linalg.norm(a), rel=1e-12)
