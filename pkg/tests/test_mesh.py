"""Mesh construction, tags, geometry queries and the MSH reader/writer."""

import numpy as np
import pytest

from tdnns.mesh import (
    InvertedElementError,
    Mesh,
    MeshError,
    UnknownElementTypeError,
    generate_structured,
    read_gmsh,
    write_gmsh,
)


class TestConstruction:
    def test_positive_orientation_enforced(self):
        # deliberately clockwise triangle
        mesh = Mesh(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]),
                    np.array([[0, 1, 2]]))
        assert np.all(mesh.jacobian_dets() > 0)

    def test_dimension_checks(self):
        with pytest.raises(MeshError):
            Mesh(np.zeros((3, 1)), np.array([[0, 1, 2]]))
        with pytest.raises(MeshError):
            Mesh(np.zeros((3, 2)), np.array([[0, 1, 2, 0]]))

    def test_degenerate_element_rejected(self):
        with pytest.raises(InvertedElementError):
            Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
                 np.array([[0, 1, 2]]))

    def test_facets_two_triangles(self, two_tri_mesh):
        mesh = two_tri_mesh
        assert mesh.num_facets == 5
        interior = np.nonzero(mesh.facet_elems[:, 1] >= 0)[0]
        assert len(interior) == 1
        assert set(mesh.facet_verts[interior[0]]) == {0, 2}
        assert len(mesh.boundary_facets()) == 4

    def test_shared_facet_owner_is_lower_element(self, two_tri_mesh):
        fid = np.nonzero(two_tri_mesh.facet_elems[:, 1] >= 0)[0][0]
        assert two_tri_mesh.facet_elems[fid, 0] == 0
        assert two_tri_mesh.facet_elems[fid, 1] == 1

    def test_edges_single_tet(self):
        mesh = Mesh(
            np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
            np.array([[0, 1, 2, 3]]))
        assert mesh.num_edges == 6
        assert mesh.num_facets == 4


class TestGeometry:
    def test_volumes_and_diameters(self, two_tri_mesh):
        np.testing.assert_allclose(two_tri_mesh.element_volumes(), 0.5)
        np.testing.assert_allclose(two_tri_mesh.h, np.sqrt(2.0))

    def test_facet_normals_point_outward(self, two_tri_mesh):
        mesh = two_tri_mesh
        center = np.array([0.5, 0.5])
        for fid in mesh.boundary_facets():
            n = mesh.facet_normal(fid)
            mid = mesh.coords[mesh.facet_verts[fid]].mean(axis=0)
            assert np.dot(n, mid - center) > 0
            assert np.linalg.norm(n) == pytest.approx(1.0, rel=1e-14)

    def test_facet_measure(self, two_tri_mesh):
        for fid in two_tri_mesh.boundary_facets():
            assert two_tri_mesh.facet_measure(fid) == pytest.approx(1.0)

    def test_box_volume_sums(self):
        mesh = generate_structured("box", (2.0, 1.0, 0.5), (2, 3, 1))
        assert mesh.element_volumes().sum() == pytest.approx(1.0, rel=1e-12)
        assert mesh.num_elements == 2 * 3 * 1 * 6


class TestMoveVertices:
    def test_valid_move_updates_h(self, two_tri_mesh):
        disp = np.zeros_like(two_tri_mesh.coords)
        disp[2] = [0.5, 0.5]
        two_tri_mesh.move_vertices(disp)
        assert two_tri_mesh.h.max() == pytest.approx(np.sqrt(1.5**2 + 1.5**2))

    def test_inverting_move_rolls_back(self, two_tri_mesh):
        before = two_tri_mesh.coords.copy()
        disp = np.zeros_like(before)
        disp[0] = [5.0, 5.0]  # drags vertex 0 across the mesh
        with pytest.raises(InvertedElementError) as ei:
            two_tri_mesh.move_vertices(disp)
        np.testing.assert_array_equal(two_tri_mesh.coords, before)
        assert ei.value.element in (0, 1)

    def test_shape_mismatch(self, two_tri_mesh):
        with pytest.raises(MeshError):
            two_tri_mesh.move_vertices(np.zeros((2, 2)))


class TestStructuredGenerator:
    def test_rectangle_counts_and_tags(self):
        mesh = generate_structured("rectangle", (2.0, 1.0), (4, 2))
        assert mesh.num_elements == 16
        assert mesh.num_vertices == 15
        assert sorted(mesh.tag_ids) == ["x0", "x1", "y0", "y1"]
        assert len(mesh.boundary_facets("x0")) == 2
        assert len(mesh.boundary_facets("y1")) == 4

    def test_custom_tag_grouping(self):
        mesh = generate_structured(
            "rectangle", (1.0, 1.0), (2, 2),
            tags={"wall": ("x0", "x1"), "lid": "y1"})
        assert sorted(mesh.tag_ids) == ["lid", "wall"]
        assert len(mesh.boundary_facets("wall")) == 4
        # untagged faces stay untagged
        y0 = generate_structured("rectangle", (1.0, 1.0), (2, 2)).boundary_facets("y0")
        assert len(y0) == 2

    def test_extent_intervals(self):
        mesh = generate_structured("rectangle", [(-1.0, 1.0), (0.0, 2.0)], (2, 2))
        assert mesh.coords[:, 0].min() == -1.0
        assert mesh.coords[:, 1].max() == 2.0

    def test_invalid_arguments(self):
        with pytest.raises(MeshError):
            generate_structured("rectangle", (1.0,), (2, 2))
        with pytest.raises(MeshError):
            generate_structured("rectangle", (1.0, 1.0), (0, 2))
        with pytest.raises(MeshError):
            generate_structured("rectangle", [(1.0, 0.0), (0.0, 1.0)], (2, 2))
        with pytest.raises(KeyError):
            generate_structured("hexmesh", (1.0, 1.0), (2, 2))

    def test_box_tags_cover_boundary(self):
        mesh = generate_structured("box", (1.0, 1.0, 1.0), (2, 2, 2))
        total = sum(len(mesh.boundary_facets(t)) for t in mesh.tag_ids)
        assert total == len(mesh.boundary_facets())


class TestGmshIO:
    def test_roundtrip_2d(self, tmp_path, distorted_2d_mesh):
        path = tmp_path / "mesh.msh"
        write_gmsh(distorted_2d_mesh, path)
        back = read_gmsh(path)
        np.testing.assert_allclose(back.coords, distorted_2d_mesh.coords,
                                   atol=1e-14)
        assert back.num_elements == distorted_2d_mesh.num_elements
        assert set(back.tag_ids) == set(distorted_2d_mesh.tag_ids)
        assert len(back.boundary_facets("all")) == len(
            distorted_2d_mesh.boundary_facets("all"))

    def test_roundtrip_3d(self, tmp_path):
        mesh = generate_structured("box", (1.0, 2.0, 1.0), (1, 2, 1))
        path = tmp_path / "box.msh"
        write_gmsh(mesh, path)
        back = read_gmsh(path)
        assert back.dim == 3
        assert back.num_elements == mesh.num_elements
        assert back.element_volumes().sum() == pytest.approx(2.0, rel=1e-12)

    def test_unknown_element_type(self, tmp_path):
        path = tmp_path / "bad.msh"
        path.write_text(
            "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n"
            "$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n$EndNodes\n"
            "$Elements\n1\n1 3 2 0 0 1 2 3 4\n$EndElements\n")  # quad
        with pytest.raises(UnknownElementTypeError):
            read_gmsh(path)

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "v4.msh"
        path.write_text("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
        with pytest.raises(MeshError, match="2.2"):
            read_gmsh(path)

    def test_unknown_tag_query(self, two_tri_mesh):
        with pytest.raises(MeshError, match="unknown tag"):
            two_tri_mesh.boundary_facets("nope")
