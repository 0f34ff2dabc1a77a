"""Constitutive laws against finite differences of the free energy.

The oracle differentiates psi only, so any error in the hand-derived
stress, dielectric displacement or moduli shows up as a mismatch.  Step
sizes: the coupled law is well scaled at h = 1e-4; the dielectric law
mixes lambda = 1e8 Pa with fields of order 1e7 V/m, so C gets a smaller
step (truncation error scales like lambda h^2) and E a large one.
"""

import numpy as np
import pytest

from tdnns.materials import (
    InvertedStateError,
    NonSPDError,
    fd_oracle,
    kinematics,
    make_law,
    push_forward,
)
from tdnns.tensors import mandel_to_sym, sym_to_mandel

from conftest import random_spd_C


def _compare_package(ana, fd, tol):
    worst = 0.0
    for name in ("T", "D", "C4", "E3", "Dmat"):
        a, b = getattr(ana, name), getattr(fd, name)
        den = max(np.abs(a).max(), np.abs(b).max(), 1e-30)
        worst = max(worst, np.abs(a - b).max() / den)
    assert worst < tol, f"worst relative tangent error {worst:.3e}"


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("trial", range(5))
def test_coupled_law_tangent_vs_fd(law_coupled, rng, dim, trial):
    for _ in range(trial + 1):
        C = random_spd_C(rng, dim)
        E = rng.uniform(-1.0, 1.0, dim)
    ana = law_coupled.material_tangent(C, E)
    fd = fd_oracle(law_coupled, C, E, h=1e-4)
    _compare_package(ana, fd, 1e-7)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("trial", range(5))
def test_dielectric_law_tangent_vs_fd(law_dielectric, rng, dim, trial):
    for _ in range(trial + 1):
        C = random_spd_C(rng, dim)
        E = rng.uniform(-1e7, 1e7, dim)
    ana = law_dielectric.material_tangent(C, E)
    fd = fd_oracle(law_dielectric, C, E, h=3e-5, h_E=3e6)
    _compare_package(ana, fd, 1e-6)


class TestCoupledLaw:
    def test_stress_free_at_identity_without_field(self, law_coupled):
        T, D = law_coupled.stress_and_dielectric(np.eye(3), np.zeros(3))
        np.testing.assert_allclose(T, 0.0, atol=1e-14)
        np.testing.assert_allclose(D, 0.0, atol=1e-14)

    def test_dielectric_displacement_antiparallel(self, law_coupled):
        """The quadratic electric terms enter psi with positive sign."""
        E = np.array([1.0, 0.0, 0.0])
        _, D = law_coupled.stress_and_dielectric(np.eye(3), E)
        assert D @ E < 0

    def test_energy_batched(self, law_coupled, rng):
        Cs = np.stack([random_spd_C(rng, 3) for _ in range(4)])
        Es = rng.uniform(-1, 1, (4, 3))
        batch = law_coupled.energy(Cs, Es)
        single = [law_coupled.energy(C, E) for C, E in zip(Cs, Es)]
        np.testing.assert_allclose(batch, single, rtol=1e-14)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            make_law("neo-hookean-coupled", mu=-1.0, lam=1.0, c1=0.0, c2=0.0)
        with pytest.raises(ValueError):
            make_law("neo-hookean-coupled", mu=1.0, lam=-1.0, c1=0.0, c2=0.0)


class TestDielectricLaw:
    def test_stress_free_at_identity_without_field(self, law_dielectric):
        T, D = law_dielectric.stress_and_dielectric(np.eye(3), np.zeros(3))
        np.testing.assert_allclose(T, 0.0, atol=1e-14)
        np.testing.assert_allclose(D, 0.0, atol=1e-20)

    def test_permittivity_scaling(self, law_dielectric):
        """D = (J + chi) eps0 Cinv E at C = J^{2/3}-free identity."""
        E = np.array([0.0, 0.0, 2.0e6])
        _, D = law_dielectric.stress_and_dielectric(np.eye(3), E)
        expected = (1.0 + law_dielectric.chi) * law_dielectric.eps0 * E
        np.testing.assert_allclose(D, expected, rtol=1e-12)

    def test_volumetric_stress_dominated_by_lambda(self, law_dielectric):
        C = (1.01) ** 2 * np.eye(3)  # 1% isotropic stretch
        T, _ = law_dielectric.stress_and_dielectric(C, np.zeros(3))
        p = np.trace(T) / 3.0
        lnJ = 3 * np.log(1.01)
        assert p == pytest.approx(law_dielectric.lam * lnJ / 1.01**2, rel=0.01)

    def test_non_spd_rejected(self, law_dielectric):
        with pytest.raises(NonSPDError):
            law_dielectric.energy(np.diag([1.0, -1.0, 1.0]), np.zeros(3))


class TestKinematics:
    def test_identity(self):
        F, C, S, J = kinematics(np.zeros((3, 3)))
        np.testing.assert_array_equal(F, np.eye(3))
        np.testing.assert_array_equal(C, np.eye(3))
        np.testing.assert_array_equal(S, 0.0)
        assert J == 1.0

    def test_simple_shear(self):
        g = np.zeros((2, 2))
        g[0, 1] = 0.3
        F, C, S, J = kinematics(g)
        assert J == pytest.approx(1.0)
        assert C[0, 1] == pytest.approx(0.3)
        assert C[1, 1] == pytest.approx(1.09)

    def test_inverted_gradient_rejected(self):
        g = np.diag([-2.0, 0.0, 0.0])
        with pytest.raises(InvertedStateError):
            kinematics(g)


class TestPushForward:
    def test_identity_is_noop(self, law_coupled, rng):
        C = random_spd_C(rng, 3)
        E = rng.uniform(-1, 1, 3)
        pkg = law_coupled.material_tangent(C, E)
        F0 = np.eye(3)
        sp = push_forward(F0, np.array(1.0), pkg)
        np.testing.assert_allclose(sp.tau0, 0.5 * (pkg.T + pkg.T.T), atol=1e-12)
        np.testing.assert_allclose(sp.d0, pkg.D, atol=1e-12)
        np.testing.assert_allclose(sp.d, pkg.Dmat, atol=1e-12)

    def test_rotation_invariance_of_norms(self, law_coupled, rng):
        """A pure rotation push-forward preserves invariants (J = 1)."""
        C = random_spd_C(rng, 3)
        E = rng.uniform(-1, 1, 3)
        pkg = law_coupled.material_tangent(C, E)
        th = 0.7
        R = np.array([
            [np.cos(th), -np.sin(th), 0.0],
            [np.sin(th), np.cos(th), 0.0],
            [0.0, 0.0, 1.0],
        ])
        sp = push_forward(R, np.array(1.0), pkg)
        sym_T = 0.5 * (pkg.T + pkg.T.T)
        assert np.linalg.norm(sp.tau0) == pytest.approx(
            np.linalg.norm(sym_T), rel=1e-12)
        assert np.linalg.norm(sp.d0) == pytest.approx(
            np.linalg.norm(pkg.D), rel=1e-12)

    def test_volume_change_scales_stress(self, law_coupled, rng):
        """F0 = a I gives tau = a^2/J T with J = a^dim."""
        C = random_spd_C(rng, 2)
        E = rng.uniform(-1, 1, 2)
        pkg = law_coupled.material_tangent(C, E)
        a = 1.3
        sp = push_forward(a * np.eye(2), np.array(a**2), pkg)
        np.testing.assert_allclose(
            sp.tau0, 0.5 * (pkg.T + pkg.T.T), rtol=1e-12)

    def test_moduli_push_forward_matches_direct(self, law_coupled, rng):
        """Mandel-packed c equals the index-wise Piola transformation."""
        C = random_spd_C(rng, 3)
        E = rng.uniform(-1, 1, 3)
        pkg = law_coupled.material_tangent(C, E)
        F0 = np.eye(3) + rng.uniform(-0.1, 0.1, (3, 3))
        J0 = np.linalg.det(F0)
        sp = push_forward(F0, np.array(J0), pkg)
        eps = random_spd_C(rng, 3) - np.eye(3)
        direct = np.einsum(
            "IJKL,iI,jJ,kK,lL,kl->ij", pkg.C4, F0, F0, F0, F0, eps) / J0
        via = mandel_to_sym(sp.c @ sym_to_mandel(eps))
        np.testing.assert_allclose(via, direct, atol=1e-12 * np.abs(direct).max())


def test_unknown_law_rejected():
    with pytest.raises(ValueError, match="unknown material law"):
        make_law("hookean")
