"""Simplicial meshes: triangles in 2D, tetrahedra in 3D.

Stores facet connectivity with a fixed owner element per facet (lowest
element id), named boundary tags, per-element diameters, and supports
in-place vertex motion for the updated-geometry solver loop.  Element
vertex ordering is normalized to positive orientation at construction
and never changed afterwards.
"""

from __future__ import annotations

import numpy as np

# Local facet i of a simplex is the facet opposite local vertex i.
_TET_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


class MeshError(Exception):
    pass


class InvertedElementError(MeshError):
    """Raised when a geometry update would invert an element."""

    def __init__(self, element, message=None):
        self.element = element
        super().__init__(message or f"element {element} inverted (non-positive Jacobian)")


class UnknownElementTypeError(MeshError):
    pass


class Mesh:
    """Simplicial complex with boundary tags.

    Parameters
    ----------
    coords : (nv, dim) array
        Vertex coordinates; mutable via :meth:`move_vertices`.
    elems : (ne, dim+1) int array
        Element -> vertex connectivity.
    """

    def __init__(self, coords, elems):
        self.coords = np.array(coords, dtype=float)
        self.elems = np.array(elems, dtype=int)
        self.dim = self.coords.shape[1]
        if self.dim not in (2, 3):
            raise MeshError("only 2D and 3D meshes are supported")
        if self.elems.shape[1] != self.dim + 1:
            raise MeshError("element connectivity does not match dimension")
        self._orient_positive()
        self._build_facets()
        if self.dim == 3:
            self._build_edges()
        self.facet_tag = np.full(self.num_facets, -1, dtype=int)
        self.tag_ids = {}
        self.h = self._diameters()
        dets = self.jacobian_dets()
        if np.any(dets <= 0):
            raise InvertedElementError(int(np.argmin(dets)))

    # -- construction -------------------------------------------------

    def _orient_positive(self):
        for e, conn in enumerate(self.elems):
            v = self.coords[conn]
            det = np.linalg.det((v[1:] - v[0]).T)
            if det < 0:
                self.elems[e, -2], self.elems[e, -1] = conn[-1], conn[-2]

    def _build_facets(self):
        lookup = {}
        facets = []
        facet_elems = []
        ne, nloc = self.elems.shape
        self.elem_facets = np.empty((ne, nloc), dtype=int)
        for e, conn in enumerate(self.elems):
            for i in range(nloc):
                key = tuple(sorted(np.delete(conn, i)))
                fid = lookup.get(key)
                if fid is None:
                    fid = len(facets)
                    lookup[key] = fid
                    facets.append(key)
                    facet_elems.append([e, -1])
                else:
                    if facet_elems[fid][1] != -1:
                        raise MeshError(f"facet {key} shared by more than two elements")
                    facet_elems[fid][1] = e
                self.elem_facets[e, i] = fid
        self.facet_verts = np.array(facets, dtype=int)
        self.facet_elems = np.array(facet_elems, dtype=int)
        self.num_facets = len(facets)

    def _build_edges(self):
        lookup = {}
        edges = []
        ne = self.elems.shape[0]
        self.elem_edges = np.empty((ne, 6), dtype=int)
        for e, conn in enumerate(self.elems):
            for i, (a, b) in enumerate(_TET_EDGES):
                key = (min(conn[a], conn[b]), max(conn[a], conn[b]))
                eid = lookup.setdefault(key, len(edges))
                if eid == len(edges):
                    edges.append(key)
                self.elem_edges[e, i] = eid
        self.edge_verts = np.array(edges, dtype=int)
        self.num_edges = len(edges)

    def _diameters(self):
        v = self.coords[self.elems]  # (ne, nloc, dim)
        d = np.linalg.norm(v[:, :, None, :] - v[:, None, :, :], axis=-1)
        return d.max(axis=(1, 2))

    # -- queries ------------------------------------------------------

    @property
    def num_elements(self):
        return self.elems.shape[0]

    @property
    def num_vertices(self):
        return self.coords.shape[0]

    def jacobian_dets(self):
        v = self.coords[self.elems]
        jac = np.swapaxes(v[:, 1:, :] - v[:, :1, :], 1, 2)
        return np.linalg.det(jac)

    def element_volumes(self):
        fact = 2.0 if self.dim == 2 else 6.0
        return self.jacobian_dets() / fact

    def boundary_facets(self, tag=None):
        """Ids of boundary facets, optionally restricted to a named tag."""
        mask = self.facet_elems[:, 1] == -1
        if tag is not None:
            if tag not in self.tag_ids:
                raise MeshError(
                    f"unknown tag {tag!r}; available: {sorted(self.tag_ids)}"
                )
            mask &= self.facet_tag == self.tag_ids[tag]
        return np.nonzero(mask)[0]

    def facet_normal(self, fid):
        """Outward unit normal of facet ``fid`` seen from its owner element."""
        fv = self.coords[self.facet_verts[fid]]
        if self.dim == 2:
            t = fv[1] - fv[0]
            n = np.array([t[1], -t[0]])
        else:
            n = np.cross(fv[1] - fv[0], fv[2] - fv[0])
        norm = np.linalg.norm(n)
        if norm == 0.0:
            raise MeshError(f"degenerate facet {fid}")
        n /= norm
        owner = self.facet_elems[fid, 0]
        cen_o = self.coords[self.elems[owner]].mean(axis=0)
        if np.dot(n, fv.mean(axis=0) - cen_o) < 0:
            n = -n
        return n

    def facet_measure(self, fid):
        fv = self.coords[self.facet_verts[fid]]
        if self.dim == 2:
            return np.linalg.norm(fv[1] - fv[0])
        return 0.5 * np.linalg.norm(np.cross(fv[1] - fv[0], fv[2] - fv[0]))

    # -- tags ---------------------------------------------------------

    def set_tag(self, name, facet_ids):
        tid = self.tag_ids.setdefault(name, len(self.tag_ids))
        self.facet_tag[np.asarray(facet_ids, dtype=int)] = tid

    def tag_of_facet(self, fid):
        tid = self.facet_tag[fid]
        if tid < 0:
            return None
        for name, i in self.tag_ids.items():
            if i == tid:
                return name
        return None

    # -- geometry updates ---------------------------------------------

    def move_vertices(self, displacement):
        """Displace every vertex in place; connectivity and facet owners stay.

        Raises InvertedElementError (and leaves coordinates untouched) if
        any element Jacobian would become non-positive.
        """
        displacement = np.asarray(displacement, dtype=float)
        if displacement.shape != self.coords.shape:
            raise MeshError("displacement must be given at every vertex")
        new = self.coords + displacement
        old = self.coords
        self.coords = new
        dets = self.jacobian_dets()
        if np.any(dets <= 0):
            self.coords = old
            raise InvertedElementError(int(np.argmin(dets)))
        self.h = self._diameters()


def generate_structured(kind, extents, subdivisions, tags=None):
    """Structured simplicial mesh of an axis-aligned rectangle or box.

    Parameters
    ----------
    kind : 'rectangle' or 'box'
    extents : sequence of (lo, hi) per axis, or of lengths (lo = 0)
    subdivisions : cells per axis
    tags : optional dict mapping tag name -> face key or list of face keys,
        keys from {'x0','x1','y0','y1','z0','z1'}.  Defaults to one tag per
        face named by its key.
    """
    dim = {"rectangle": 2, "box": 3}[kind]
    ext = []
    for x in extents:
        if np.ndim(x) == 0:
            ext.append((0.0, float(x)))
        else:
            ext.append((float(x[0]), float(x[1])))
    if len(ext) != dim:
        raise MeshError(f"{kind} needs {dim} extents")
    subs = [int(s) for s in subdivisions]
    if len(subs) != dim or any(s <= 0 for s in subs):
        raise MeshError("subdivisions must be positive")
    if any(hi <= lo for lo, hi in ext):
        raise MeshError("extents must be positive")

    axes = [np.linspace(lo, hi, s + 1) for (lo, hi), s in zip(ext, subs)]
    if dim == 2:
        nx, ny = subs
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        coords = np.column_stack([xx.ravel(), yy.ravel()])
        vid = lambda i, j: i * (ny + 1) + j
        elems = []
        for i in range(nx):
            for j in range(ny):
                a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
                elems.append([a, b, c])
                elems.append([a, c, d])
    else:
        nx, ny, nz = subs
        xx, yy, zz = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
        coords = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
        vid = lambda i, j, k: (i * (ny + 1) + j) * (nz + 1) + k
        elems = []
        # Kuhn decomposition: six tets per cell sharing the main diagonal.
        perms = [
            (0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0),
        ]
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    base = np.array([i, j, k])
                    for p in perms:
                        path = [base.copy()]
                        for ax in p:
                            nxt = path[-1].copy()
                            nxt[ax] += 1
                            path.append(nxt)
                        elems.append([vid(*pt) for pt in path])
    mesh = Mesh(coords, elems)

    face_keys = ["x0", "x1", "y0", "y1", "z0", "z1"][: 2 * dim]
    planes = {}
    for ax in range(dim):
        planes[f"{'xyz'[ax]}0"] = (ax, ext[ax][0])
        planes[f"{'xyz'[ax]}1"] = (ax, ext[ax][1])
    scale = max(hi - lo for lo, hi in ext)
    bnd = mesh.boundary_facets()
    centroids = mesh.coords[mesh.facet_verts[bnd]].mean(axis=1)
    by_key = {}
    for key in face_keys:
        ax, val = planes[key]
        on = bnd[np.abs(centroids[:, ax] - val) < 1e-10 * scale]
        by_key[key] = on
    if tags is None:
        tags = {key: key for key in face_keys}
    for name, keys in tags.items():
        if isinstance(keys, str):
            keys = [keys]
        fids = np.concatenate([by_key[k] for k in keys]) if keys else []
        mesh.set_tag(name, fids)
    return mesh


def read_gmsh(path):
    """Read a Gmsh MSH ASCII v2.2 file (triangles/tetrahedra subset).

    Physical names become boundary tags for codimension-one elements.
    Unknown element types are rejected.
    """
    with open(path) as f:
        lines = [ln.strip() for ln in f]
    sections = {}
    i = 0
    while i < len(lines):
        if lines[i].startswith("$") and not lines[i].startswith("$End"):
            name = lines[i][1:]
            j = i + 1
            while j < len(lines) and lines[j] != f"$End{name}":
                j += 1
            sections[name] = lines[i + 1 : j]
            i = j + 1
        else:
            i += 1
    if "MeshFormat" in sections:
        version = sections["MeshFormat"][0].split()[0]
        if not version.startswith("2.2"):
            raise MeshError(f"unsupported MSH version {version}; need ASCII 2.2")
    phys_names = {}
    if "PhysicalNames" in sections:
        for ln in sections["PhysicalNames"][1:]:
            parts = ln.split()
            phys_names[int(parts[1])] = parts[2].strip('"')

    node_lines = sections["Nodes"]
    nn = int(node_lines[0])
    ids = np.empty(nn, dtype=int)
    xyz = np.empty((nn, 3))
    for r, ln in enumerate(node_lines[1 : nn + 1]):
        parts = ln.split()
        ids[r] = int(parts[0])
        xyz[r] = [float(p) for p in parts[1:4]]
    id_map = {gid: r for r, gid in enumerate(ids)}

    tris, tets, lines1d = [], [], []
    tri_phys, tet_phys, line_phys = [], [], []
    elem_lines = sections["Elements"]
    for ln in elem_lines[1 : int(elem_lines[0]) + 1]:
        parts = [int(p) for p in ln.split()]
        etype, ntags = parts[1], parts[2]
        tagvals = parts[3 : 3 + ntags]
        conn = [id_map[g] for g in parts[3 + ntags :]]
        phys = tagvals[0] if tagvals else -1
        if etype == 1:
            lines1d.append(conn)
            line_phys.append(phys)
        elif etype == 2:
            tris.append(conn)
            tri_phys.append(phys)
        elif etype == 4:
            tets.append(conn)
            tet_phys.append(phys)
        elif etype == 15:
            continue
        else:
            raise UnknownElementTypeError(f"unsupported Gmsh element type {etype}")

    if tets:
        coords = xyz
        mesh = Mesh(coords, tets)
        bnd_elems, bnd_phys = tris, tri_phys
    elif tris:
        if np.ptp(xyz[:, 2]) > 1e-12 * max(np.ptp(xyz[:, 0]), np.ptp(xyz[:, 1]), 1e-300):
            raise MeshError("2D mesh has non-planar z coordinates")
        coords = xyz[:, :2]
        mesh = Mesh(coords, tris)
        bnd_elems, bnd_phys = lines1d, line_phys
    else:
        raise MeshError("mesh contains no triangles or tetrahedra")

    facet_lookup = {tuple(fv): i for i, fv in enumerate(mesh.facet_verts)}
    by_tag = {}
    for conn, phys in zip(bnd_elems, bnd_phys):
        fid = facet_lookup.get(tuple(sorted(conn)))
        if fid is None:
            raise MeshError("boundary element does not match any mesh facet")
        name = phys_names.get(phys, str(phys))
        by_tag.setdefault(name, []).append(fid)
    for name, fids in by_tag.items():
        mesh.set_tag(name, fids)
    return mesh


def write_gmsh(mesh, path, tag_only_boundary=True):
    """Write a mesh in Gmsh MSH ASCII v2.2 format (round-trip of read_gmsh)."""
    dim = mesh.dim
    with open(path, "w") as f:
        f.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        names = sorted(mesh.tag_ids, key=mesh.tag_ids.get)
        if names:
            f.write("$PhysicalNames\n%d\n" % len(names))
            for name in names:
                f.write('%d %d "%s"\n' % (dim - 1, mesh.tag_ids[name] + 1, name))
            f.write("$EndPhysicalNames\n")
        f.write("$Nodes\n%d\n" % mesh.num_vertices)
        for i, p in enumerate(mesh.coords):
            x, y = p[0], p[1]
            z = p[2] if dim == 3 else 0.0
            f.write("%d %.16g %.16g %.16g\n" % (i + 1, x, y, z))
        f.write("$EndNodes\n")
        bnd = [fid for fid in mesh.boundary_facets() if mesh.facet_tag[fid] >= 0]
        f.write("$Elements\n%d\n" % (len(bnd) + mesh.num_elements))
        eid = 1
        btype = 1 if dim == 2 else 2
        for fid in bnd:
            phys = mesh.facet_tag[fid] + 1
            conn = " ".join(str(v + 1) for v in mesh.facet_verts[fid])
            f.write("%d %d 2 %d %d %s\n" % (eid, btype, phys, phys, conn))
            eid += 1
        etype = 2 if dim == 2 else 4
        for conn in mesh.elems:
            c = " ".join(str(v + 1) for v in conn)
            f.write("%d %d 2 0 0 %s\n" % (eid, etype, c))
            eid += 1
        f.write("$EndElements\n")
