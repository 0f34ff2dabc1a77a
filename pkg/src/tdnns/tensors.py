"""Small dense tensor algebra for 2D/3D continuum mechanics.

Symmetric second-order tensors are stored in a packed vector of raw
components (3 values in 2D, 6 in 3D).  For assembly and for fourth-order
moduli we use the weighted (Mandel) vector, where off-diagonal entries
carry a factor sqrt(2): the Euclidean dot product of two Mandel vectors
then equals the full double contraction tau : eps, and moduli packed as
Mandel matrices are symmetric whenever the underlying tensor has major
symmetry.  Raw packing is used for storage (round-trips exactly), Mandel
packing for algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQRT2 = float(np.sqrt(2.0))

# Packed component order: 2D -> (11, 22, 12); 3D -> (11, 22, 33, 23, 13, 12).
_PAIRS = {
    2: [(0, 0), (1, 1), (0, 1)],
    3: [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)],
}


def npack(dim):
    """Number of packed components of a symmetric tensor."""
    return {2: 3, 3: 6}[dim]


def nskew(dim):
    """Number of independent components of a skew tensor."""
    return {2: 1, 3: 3}[dim]


def mandel_weights(dim):
    """Per-component weights turning raw packed vectors into Mandel vectors."""
    w = np.ones(npack(dim))
    w[dim:] = SQRT2
    return w


def pack_sym(a):
    """Pack a (..., dim, dim) symmetric tensor into raw components."""
    a = np.asarray(a, dtype=float)
    dim = a.shape[-1]
    pairs = _PAIRS[dim]
    return np.stack([a[..., i, j] for i, j in pairs], axis=-1)


def unpack_sym(p):
    """Inverse of :func:`pack_sym`; exact round trip."""
    p = np.asarray(p, dtype=float)
    dim = {3: 2, 6: 3}[p.shape[-1]]
    out = np.zeros(p.shape[:-1] + (dim, dim))
    for c, (i, j) in enumerate(_PAIRS[dim]):
        out[..., i, j] = p[..., c]
        out[..., j, i] = p[..., c]
    return out


def sym_to_mandel(a):
    """Pack a (..., dim, dim) symmetric tensor into a Mandel vector."""
    p = pack_sym(a)
    return p * mandel_weights(a.shape[-1])


def mandel_to_sym(m):
    """Unpack a Mandel vector to a full symmetric tensor."""
    m = np.asarray(m, dtype=float)
    dim = {3: 2, 6: 3}[m.shape[-1]]
    return unpack_sym(m / mandel_weights(dim))


def skew_basis(dim):
    """Basis matrices K_c of the skew tensors, ordered to match the curl.

    For a vector field u with c = curl(u), skw(grad u) = sum_c (c_c / 2) K_c.
    In 2D the curl is scalar and there is a single basis matrix.
    """
    if dim == 2:
        return np.array([[[0.0, -1.0], [1.0, 0.0]]])
    k1 = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    k2 = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    k3 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    return np.array([k1, k2, k3])


def skew_components(a):
    """Extract the independent components of the skew part of (..., d, d)."""
    a = np.asarray(a, dtype=float)
    dim = a.shape[-1]
    s = 0.5 * (a - np.swapaxes(a, -1, -2))
    if dim == 2:
        return s[..., 1, 0][..., None]
    return np.stack([s[..., 2, 1], s[..., 0, 2], s[..., 1, 0]], axis=-1)


def skew_from_components(c):
    """Assemble a skew matrix from its independent components."""
    c = np.asarray(c, dtype=float)
    dim = {1: 2, 3: 3}[c.shape[-1]]
    basis = skew_basis(dim)
    return np.einsum("...c,cij->...ij", c, basis)


@dataclass
class Tensor2:
    """General second-order tensor in 2 or 3 dimensions."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.shape not in ((2, 2), (3, 3)):
            raise ValueError("Tensor2 must be 2x2 or 3x3")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("Tensor2 entries must be finite")

    @property
    def dim(self):
        return self.entries.shape[0]


@dataclass
class SymTensor:
    """Symmetric second-order tensor, packed raw-component storage."""

    packed: np.ndarray

    def __post_init__(self):
        self.packed = np.asarray(self.packed, dtype=float)
        if self.packed.shape not in ((3,), (6,)):
            raise ValueError("SymTensor packs 3 (2D) or 6 (3D) components")

    @property
    def dim(self):
        return {3: 2, 6: 3}[self.packed.shape[0]]

    @classmethod
    def from_full(cls, a):
        return cls(pack_sym(np.asarray(a)))

    def full(self):
        return unpack_sym(self.packed)

    def mandel(self):
        return self.packed * mandel_weights(self.dim)


@dataclass
class Tensor4Sym:
    """Fourth-order tensor with minor symmetries, stored as a Mandel matrix.

    The stored matrix acts on Mandel vectors; for energy-derived moduli it
    is symmetric (major symmetry of the underlying tensor).
    """

    mandel: np.ndarray

    def __post_init__(self):
        self.mandel = np.asarray(self.mandel, dtype=float)
        if self.mandel.shape not in ((3, 3), (6, 6)):
            raise ValueError("Tensor4Sym must be 3x3 (2D) or 6x6 (3D) in Mandel form")

    @property
    def dim(self):
        return {3: 2, 6: 3}[self.mandel.shape[0]]

    def apply(self, eps: SymTensor) -> SymTensor:
        """Contraction C : eps returning a SymTensor."""
        m = self.mandel @ eps.mandel()
        return SymTensor(m / mandel_weights(self.dim))


def sym_skw(a):
    """Split a tensor into symmetric and skew parts; sym + skw == a exactly."""
    if isinstance(a, Tensor2):
        a = a.entries
    a = np.asarray(a, dtype=float)
    sym = 0.5 * (a + a.T)
    return SymTensor.from_full(sym), Tensor2(a - sym)


def curl_to_skw(c):
    """Skew gradient matrix corresponding to a curl vector (scalar in 2D).

    Returns 0.5 * sum_c c_c K_c, so that curl_to_skw(curl u) == skw(grad u).
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return 0.5 * skew_from_components(c)


def pack_moduli(c4, tol=1e-12):
    """Pack a (d, d, d, d) tensor with minor symmetries into Mandel form.

    Raises ValueError if the minor symmetries are violated beyond ``tol``
    relative to the largest entry (signals a broken material law).
    """
    c4 = np.asarray(c4, dtype=float)
    dim = c4.shape[0]
    scale = max(np.max(np.abs(c4)), 1.0)
    err = max(
        np.max(np.abs(c4 - np.swapaxes(c4, 0, 1))),
        np.max(np.abs(c4 - np.swapaxes(c4, 2, 3))),
    )
    if err > tol * scale:
        raise ValueError(f"minor symmetry violated: {err:.3e} > {tol:.1e}*{scale:.3e}")
    pairs = _PAIRS[dim]
    w = mandel_weights(dim)
    n = npack(dim)
    m = np.empty((n, n))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            m[a, b] = w[a] * w[b] * c4[i, j, k, l]
    return Tensor4Sym(m)


def unpack_moduli(t4: Tensor4Sym):
    """Inverse of :func:`pack_moduli`: full (d, d, d, d) array."""
    dim = t4.dim
    pairs = _PAIRS[dim]
    w = mandel_weights(dim)
    c4 = np.zeros((dim, dim, dim, dim))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            v = t4.mandel[a, b] / (w[a] * w[b])
            for ii, jj in ((i, j), (j, i)):
                for kk, ll in ((k, l), (l, k)):
                    c4[ii, jj, kk, ll] = v
    return c4


def pack_moduli_batch(c4):
    """Batched Mandel packing of (..., d, d, d, d) minor-symmetric tensors."""
    c4 = np.asarray(c4, dtype=float)
    dim = c4.shape[-1]
    pairs = _PAIRS[dim]
    w = mandel_weights(dim)
    cols = []
    for a, (i, j) in enumerate(pairs):
        row = [w[a] * w[b] * c4[..., i, j, k, l] for b, (k, l) in enumerate(pairs)]
        cols.append(np.stack(row, axis=-1))
    return np.stack(cols, axis=-2)


def pack_coupling_batch(e3):
    """Pack (..., d, d, d) coupling moduli (vector x sym pair) to (..., d, npack) Mandel."""
    e3 = np.asarray(e3, dtype=float)
    dim = e3.shape[-1]
    pairs = _PAIRS[dim]
    w = mandel_weights(dim)
    cols = [w[b] * e3[..., :, k, l] for b, (k, l) in enumerate(pairs)]
    return np.stack(cols, axis=-1)
