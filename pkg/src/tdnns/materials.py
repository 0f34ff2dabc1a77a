"""Electro-elastic constitutive laws based on a free energy density.

Two Neo-Hookean-type laws are provided:

* ``neo-hookean-coupled``: psi = mu/2 (C:I - d) - mu log J
  + lambda/2 (log J)^2 + c1 E.E + c2 E.C.E.  Note that the electric terms
  enter with positive sign, so the dielectric displacement D = -dpsi/dE is
  antiparallel to E; the law is implemented exactly as stated.
* ``neo-hookean-dielectric``: psi = mu/2 (tr C - 3) - mu log J
  + lambda/2 (log J)^2 - eps/2 E.Cinv.E with eps = (J + chi) eps0.

Stress T = 2 dpsi/dC and dielectric displacement D = -dpsi/dE, with the
second derivatives giving the material moduli used by the linearized
update equations.  All evaluators are batched over leading axes, with a
central finite-difference oracle for verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import pack_coupling_batch, pack_moduli_batch


class NonSPDError(ValueError):
    """Raised when the right Cauchy-Green tensor is not positive definite."""


def _check_spd(C):
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise NonSPDError("C must be symmetric positive definite") from exc


def _eye_like(C):
    d = C.shape[-1]
    return np.broadcast_to(np.eye(d), C.shape)


def _sym_outer4(A, B):
    """(A (.) B)_{IJKL} = 1/2 (A_IK B_JL + A_IL B_JK), batched."""
    t1 = np.einsum("...ik,...jl->...ijkl", A, B)
    t2 = np.einsum("...il,...jk->...ijkl", A, B)
    return 0.5 * (t1 + t2)


def kinematics(grad_u):
    """Deformation measures from a displacement gradient.

    Returns (F, C, S, J) with F = I + grad_u, C = F^T F, S = (C - I)/2 and
    J = det F.  Raises InvertedStateError for non-positive J.
    """
    grad_u = np.asarray(grad_u, dtype=float)
    F = _eye_like(grad_u) + grad_u
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise InvertedStateError("deformation gradient has non-positive determinant")
    C = np.einsum("...ki,...kj->...ij", F, F)
    S = 0.5 * (C - _eye_like(C))
    return F, C, S, J


class InvertedStateError(ValueError):
    pass


@dataclass
class TangentPackage:
    """Material-frame stress, dielectric displacement and moduli.

    ``C4`` and ``E3`` are stored unpacked ((..., d,d,d,d) and (..., d,d,d))
    so the Piola push-forward can be applied index-wise; packed Mandel
    forms are produced by :func:`push_forward`.
    """

    T: np.ndarray
    D: np.ndarray
    C4: np.ndarray
    E3: np.ndarray
    Dmat: np.ndarray


@dataclass
class SpatialPackage:
    """Spatial (pushed-forward) stress and moduli at quadrature points."""

    tau0: np.ndarray   # (..., d, d)
    d0: np.ndarray     # (..., d)
    c: np.ndarray      # (..., npack, npack) Mandel
    e: np.ndarray      # (..., d, npack) Mandel
    d: np.ndarray      # (..., d, d)


class MaterialLaw:
    """Base class; concrete laws implement psi / first / second derivatives."""

    law_id = None

    def energy(self, C, E):
        raise NotImplementedError

    def stress_and_dielectric(self, C, E):
        raise NotImplementedError

    def material_tangent(self, C, E):
        raise NotImplementedError


class NeoHookeanCoupled(MaterialLaw):
    """Coupled law with quadratic electric terms (units e.g. mm-N-V)."""

    law_id = "neo-hookean-coupled"

    def __init__(self, mu, lam, c1, c2):
        if mu <= 0 or lam < 0:
            raise ValueError("require mu > 0 and lambda >= 0")
        self.mu, self.lam, self.c1, self.c2 = float(mu), float(lam), float(c1), float(c2)

    def energy(self, C, E):
        C = np.asarray(C, dtype=float)
        E = np.asarray(E, dtype=float)
        _check_spd(C)
        d = C.shape[-1]
        lnJ = 0.5 * np.log(np.linalg.det(C))
        trC = np.trace(C, axis1=-2, axis2=-1)
        CE = np.einsum("...ij,...j->...i", C, E)
        return (
            0.5 * self.mu * (trC - d)
            - self.mu * lnJ
            + 0.5 * self.lam * lnJ**2
            + self.c1 * np.einsum("...i,...i->...", E, E)
            + self.c2 * np.einsum("...i,...i->...", E, CE)
        )

    def stress_and_dielectric(self, C, E):
        C = np.asarray(C, dtype=float)
        E = np.asarray(E, dtype=float)
        _check_spd(C)
        Cinv = np.linalg.inv(C)
        lnJ = 0.5 * np.log(np.linalg.det(C))[..., None, None]
        I = _eye_like(C)
        T = self.mu * (I - Cinv) + self.lam * lnJ * Cinv
        T = T + 2.0 * self.c2 * np.einsum("...i,...j->...ij", E, E)
        D = -2.0 * self.c1 * E - 2.0 * self.c2 * np.einsum("...ij,...j->...i", C, E)
        return T, D

    def material_tangent(self, C, E):
        C = np.asarray(C, dtype=float)
        E = np.asarray(E, dtype=float)
        T, D = self.stress_and_dielectric(C, E)
        d = C.shape[-1]
        Cinv = np.linalg.inv(C)
        lnJ = 0.5 * np.log(np.linalg.det(C))
        coef = 2.0 * (self.mu - self.lam * lnJ)
        C4 = coef[..., None, None, None, None] * _sym_outer4(Cinv, Cinv)
        C4 = C4 + self.lam * np.einsum("...ij,...kl->...ijkl", Cinv, Cinv)
        I = np.eye(d)
        # E3_{K,IJ} = 2 c2 (delta_IK E_J + E_I delta_JK)
        E3 = 2.0 * self.c2 * (
            np.einsum("ik,...j->...kij", I, E) + np.einsum("...i,jk->...kij", E, I)
        )
        Dmat = 2.0 * self.c1 * _eye_like(C) + 2.0 * self.c2 * C
        return TangentPackage(T=T, D=D, C4=C4, E3=E3, Dmat=Dmat)


class NeoHookeanDielectric(MaterialLaw):
    """Nearly incompressible dielectric elastomer (units e.g. m-Pa-V)."""

    law_id = "neo-hookean-dielectric"

    def __init__(self, mu, lam, chi, eps0=8.8541878128e-12):
        if mu <= 0 or lam < 0:
            raise ValueError("require mu > 0 and lambda >= 0")
        self.mu, self.lam = float(mu), float(lam)
        self.chi, self.eps0 = float(chi), float(eps0)

    def _aux(self, C, E):
        Cinv = np.linalg.inv(C)
        J = np.sqrt(np.linalg.det(C))
        eps = (J + self.chi) * self.eps0
        b = np.einsum("...ij,...j->...i", Cinv, E)
        s = np.einsum("...i,...i->...", E, b)
        return Cinv, J, eps, b, s

    def energy(self, C, E):
        C = np.asarray(C, dtype=float)
        E = np.asarray(E, dtype=float)
        _check_spd(C)
        d = C.shape[-1]
        _, J, eps, _, s = self._aux(C, E)
        lnJ = np.log(J)
        trC = np.trace(C, axis1=-2, axis2=-1)
        return 0.5 * self.mu * (trC - d) - self.mu * lnJ + 0.5 * self.lam * lnJ**2 - 0.5 * eps * s

    def stress_and_dielectric(self, C, E):
        C = np.asarray(C, dtype=float)
        E = np.asarray(E, dtype=float)
        _check_spd(C)
        Cinv, J, eps, b, s = self._aux(C, E)
        lnJ = np.log(J)
        I = _eye_like(C)
        T = (
            self.mu * (I - Cinv)
            + (self.lam * lnJ)[..., None, None] * Cinv
            - (0.5 * self.eps0 * J * s)[..., None, None] * Cinv
            + eps[..., None, None] * np.einsum("...i,...j->...ij", b, b)
        )
        D = eps[..., None] * b
        return T, D

    def material_tangent(self, C, E):
        C = np.asarray(C, dtype=float)
        E = np.asarray(E, dtype=float)
        T, D = self.stress_and_dielectric(C, E)
        Cinv, J, eps, b, s = self._aux(C, E)
        lnJ = np.log(J)
        CiCi = _sym_outer4(Cinv, Cinv)
        CioCi = np.einsum("...ij,...kl->...ijkl", Cinv, Cinv)
        bb = np.einsum("...i,...j->...ij", b, b)
        # mechanical part
        C4 = 2.0 * (self.mu - self.lam * lnJ)[..., None, None, None, None] * CiCi
        C4 = C4 + self.lam * CioCi
        # electric part
        eJ = self.eps0 * J
        C4 = C4 + 2.0 * (
            -(0.25 * eJ * s)[..., None, None, None, None] * CioCi
            + (0.5 * eJ)[..., None, None, None, None]
            * (
                np.einsum("...ij,...kl->...ijkl", Cinv, bb)
                + np.einsum("...ij,...kl->...ijkl", bb, Cinv)
            )
            + (0.5 * eJ * s)[..., None, None, None, None] * CiCi
        )
        # G_{IJKL} = sym_IJ sym_KL of Cinv_IK b_L b_J + ...
        G = 0.5 * (
            np.einsum("...ik,...l,...j->...ijkl", Cinv, b, b)
            + np.einsum("...il,...k,...j->...ijkl", Cinv, b, b)
            + np.einsum("...i,...jk,...l->...ijkl", b, Cinv, b)
            + np.einsum("...i,...jl,...k->...ijkl", b, Cinv, b)
        )
        C4 = C4 - 2.0 * eps[..., None, None, None, None] * G
        # E3_{K,IJ} = eps (Cinv_IK b_J + b_I Cinv_JK) - eps0 J Cinv_IJ b_K
        E3 = -eJ[..., None, None, None] * np.einsum("...ij,...k->...kij", Cinv, b)
        E3 = E3 + eps[..., None, None, None] * (
            np.einsum("...ik,...j->...kij", Cinv, b)
            + np.einsum("...i,...jk->...kij", b, Cinv)
        )
        Dmat = -eps[..., None, None] * Cinv
        return TangentPackage(T=T, D=D, C4=C4, E3=E3, Dmat=Dmat)


def make_law(law_id, **params):
    if law_id == NeoHookeanCoupled.law_id:
        return NeoHookeanCoupled(**params)
    if law_id == NeoHookeanDielectric.law_id:
        return NeoHookeanDielectric(**params)
    raise ValueError(f"unknown material law {law_id!r}")


def push_forward(F0, J0, pkg: TangentPackage) -> SpatialPackage:
    """Piola-type push-forward of stress, dielectric displacement and moduli.

    c_ijkl = (1/J0) C_IJKL F_iI F_jJ F_kK F_lL and analogous lower-rank
    transformations; the moduli are returned in Mandel packing.
    """
    F0 = np.asarray(F0, dtype=float)
    J0 = np.asarray(J0, dtype=float)
    inv = 1.0 / J0
    tau0 = inv[..., None, None] * np.einsum("...iI,...IJ,...jJ->...ij", F0, pkg.T, F0)
    tau0 = 0.5 * (tau0 + np.swapaxes(tau0, -1, -2))
    d0 = inv[..., None] * np.einsum("...iI,...I->...i", F0, pkg.D)
    c4 = inv[..., None, None, None, None] * np.einsum(
        "...IJKL,...iI,...jJ,...kK,...lL->...ijkl", pkg.C4, F0, F0, F0, F0
    )
    e3 = inv[..., None, None, None] * np.einsum(
        "...IKL,...iI,...kK,...lL->...ikl", pkg.E3, F0, F0, F0
    )
    d2 = inv[..., None, None] * np.einsum("...IJ,...iI,...jJ->...ij", pkg.Dmat, F0, F0)
    return SpatialPackage(
        tau0=tau0,
        d0=d0,
        c=pack_moduli_batch(c4),
        e=pack_coupling_batch(e3),
        d=d2,
    )


def _sym_dirs(dim):
    """Symmetric direction matrices and entry weights for FD differentiation."""
    dirs, idx, wts = [], [], []
    for i in range(dim):
        for j in range(i, dim):
            D = np.zeros((dim, dim))
            D[i, j] = 1.0
            D[j, i] = 1.0
            dirs.append(D)
            idx.append((i, j))
            wts.append(1.0 if i == j else 2.0)
    return dirs, idx, wts


def fd_oracle(law: MaterialLaw, C, E, h, h_E=None) -> TangentPackage:
    """Central finite differences of the free energy (verification only).

    Computes T = 2 dpsi/dC, D = -dpsi/dE and the second-derivative moduli
    C4 = 4 d2psi/dC2, E3 = 2 d2psi/dCdE, Dmat = d2psi/dE2 from psi alone.
    ``h`` is the step applied to C; the step for E defaults to
    h * max(1, |E|_inf) so laws with large electric-field scales remain
    well conditioned.
    """
    C = np.asarray(C, dtype=float)
    E = np.asarray(E, dtype=float)
    if h_E is None:
        h_E = h * max(1.0, float(np.abs(E).max()) if E.size else 1.0)
    dim = C.shape[-1]
    dirs, idx, wts = _sym_dirs(dim)

    def psi(dC, dE):
        return float(law.energy(C + dC, E + dE))

    zC = np.zeros((dim, dim))
    zE = np.zeros(dim)

    def step(dirC, dirE):
        dC = h * dirC if dirC is not None else zC
        dE = h_E * dirE if dirE is not None else zE
        hh = h if dirC is not None else h_E
        return dC, dE, hh

    def d1(dirC, dirE):
        dC, dE, hh = step(dirC, dirE)
        return (psi(dC, dE) - psi(-dC, -dE)) / (2 * hh)

    def d2(dirA_C, dirA_E, dirB_C, dirB_E):
        dCa, dEa, ha = step(dirA_C, dirA_E)
        dCb, dEb, hb = step(dirB_C, dirB_E)

        def at(sa, sb):
            return psi(sa * dCa + sb * dCb, sa * dEa + sb * dEb)

        return (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * ha * hb)

    # first derivatives
    T = np.zeros((dim, dim))
    for D_, (i, j), w in zip(dirs, idx, wts):
        g = d1(D_, None) / w
        T[i, j] = T[j, i] = 2.0 * g
    Dv = np.zeros(dim)
    eye = np.eye(dim)
    for k in range(dim):
        Dv[k] = -d1(None, eye[k])

    # second derivatives
    C4 = np.zeros((dim, dim, dim, dim))
    for Da, (i, j), wa in zip(dirs, idx, wts):
        for Db, (k, l), wb in zip(dirs, idx, wts):
            v = 4.0 * d2(Da, None, Db, None) / (wa * wb)
            for ii, jj in ((i, j), (j, i)):
                for kk, ll in ((k, l), (l, k)):
                    C4[ii, jj, kk, ll] = v
    E3 = np.zeros((dim, dim, dim))
    for Da, (i, j), wa in zip(dirs, idx, wts):
        for k in range(dim):
            v = 2.0 * d2(Da, None, None, eye[k]) / wa
            E3[k, i, j] = E3[k, j, i] = v
    Dm = np.zeros((dim, dim))
    for k in range(dim):
        for l in range(dim):
            Dm[k, l] = d2(None, eye[k], None, eye[l])
    return TangentPackage(T=T, D=Dv, C4=C4, E3=E3, Dmat=Dm)
