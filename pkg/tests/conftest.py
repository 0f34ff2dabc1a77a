import numpy as np
import pytest

from tdnns.materials import make_law
from tdnns.mesh import Mesh, generate_structured


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def law_coupled():
    return make_law("neo-hookean-coupled", mu=5.0, lam=20.0 / 3.0,
                    c1=10.0, c2=6.0)


@pytest.fixture
def law_dielectric():
    return make_law("neo-hookean-dielectric", mu=20689.0, lam=1e8, chi=3.7)


@pytest.fixture
def two_tri_mesh():
    """Unit square split into two triangles."""
    return Mesh(
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        np.array([[0, 1, 2], [0, 2, 3]]),
    )


@pytest.fixture
def distorted_2d_mesh():
    """8-triangle unit square with an off-center interior vertex.

    Interior vertices are moved so no element is a right triangle; used
    by the patch test, which must hold on arbitrary shapes.
    """
    mesh = generate_structured(
        "rectangle", (1.0, 1.0), (2, 2),
        tags={"all": ("x0", "x1", "y0", "y1")})
    disp = np.zeros_like(mesh.coords)
    disp[4] = [0.11, -0.07]  # center vertex of the 3x3 grid
    mesh.move_vertices(disp)
    return mesh


@pytest.fixture
def unit_cube_mesh():
    return generate_structured(
        "box", (1.0, 1.0, 1.0), (1, 1, 2),
        tags={"all": ("x0", "x1", "y0", "y1", "z0", "z1")})


def random_spd_C(rng, dim, scale=0.2):
    A = rng.uniform(-scale, scale, (dim, dim))
    F = np.eye(dim) + A
    return F.T @ F
