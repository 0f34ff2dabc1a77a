"""The three mixed finite element spaces and their couplings.

* V: vector-valued, element-wise polynomial of degree k, tangentially
  continuous across facets (normal component may jump).
* Sigma: symmetric-tensor-valued, degree k, with continuous normal-normal
  trace sigma_nn (tangential stress vector may jump).
* W: scalar continuous Lagrange space of degree k+1.

Shape functions are constructed per element as duals of an explicit set
of degree-of-freedom functionals.  Functionals attached to a facet (or
edge) are defined through a canonical parametrization derived from the
global vertex numbering (lowest id first), so the two elements sharing a
facet produce identical functionals and the assembled space is
conforming without per-element sign bookkeeping.  sigma_nn is invariant
under the choice of normal sign, so stress facet dofs need no
orientation data at all.

All polynomial bases live in scaled local coordinates
xi = (x - centroid) / h of the current physical element; after a
geometry update the bases are rebuilt while global dof numbering (which
only depends on connectivity) is unchanged.
"""

from __future__ import annotations

import numpy as np

from .quadrature import facet_rule_points, map_to_physical, simplex_rule
from .tensors import mandel_weights, nskew, npack, skew_components

_SYM_PAIRS = {2: [(0, 0), (1, 1), (0, 1)], 3: [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]}


class SpaceError(Exception):
    pass


def monomial_exponents(dim, deg):
    """All exponent tuples of total degree <= deg, graded order."""
    out = []
    if dim == 2:
        for d in range(deg + 1):
            for i in range(d, -1, -1):
                out.append((i, d - i))
    else:
        for d in range(deg + 1):
            for i in range(d, -1, -1):
                for j in range(d - i, -1, -1):
                    out.append((i, j, d - i - j))
    return out


def eval_monomials(xi, expts):
    xi = np.atleast_2d(xi)
    vals = np.empty((xi.shape[0], len(expts)))
    for m, ex in enumerate(expts):
        v = np.ones(xi.shape[0])
        for a, p in enumerate(ex):
            if p:
                v = v * xi[:, a] ** p
        vals[:, m] = v
    return vals


def eval_monomial_grads(xi, expts, inv_h):
    """Gradients with respect to physical coordinates (xi = (x-c)/h)."""
    xi = np.atleast_2d(xi)
    dim = xi.shape[1]
    grads = np.zeros((xi.shape[0], len(expts), dim))
    for m, ex in enumerate(expts):
        for a in range(dim):
            if ex[a] == 0:
                continue
            v = np.full(xi.shape[0], float(ex[a]))
            for b, p in enumerate(ex):
                q = p - 1 if b == a else p
                if q:
                    v = v * xi[:, b] ** q
            grads[:, m, a] = v * inv_h
    return grads


def _legendre01(j, s):
    return np.polynomial.legendre.Legendre.basis(j)(2.0 * s - 1.0)


class _ElementBasis:
    """Shape functions of one element: coeffs (nloc, ncomp, nmono)."""

    __slots__ = ("coeffs", "center", "h", "expts", "ncomp", "dim")

    def __init__(self, coeffs, center, h, expts, ncomp, dim):
        self.coeffs = coeffs
        self.center = center
        self.h = h
        self.expts = expts
        self.ncomp = ncomp
        self.dim = dim

    def values(self, pts):
        xi = (np.atleast_2d(pts) - self.center) / self.h
        mono = eval_monomials(xi, self.expts)
        return np.einsum("icm,qm->iqc", self.coeffs, mono)

    def gradients(self, pts):
        xi = (np.atleast_2d(pts) - self.center) / self.h
        dmono = eval_monomial_grads(xi, self.expts, 1.0 / self.h)
        return np.einsum("icm,qmd->iqcd", self.coeffs, dmono)


def _build_dual_basis(functionals, ncomp, expts, center, h, dim, cond_limit=1e12):
    """Invert the functional/monomial Vandermonde to get shape functions.

    ``functionals`` is a list of callables taking (mono_at, grad_at) probe
    helpers; in practice we assemble the matrix from quadrature directly,
    so each functional is given as a row vector over (ncomp * nmono).
    """
    n = len(functionals)
    if n != ncomp * len(expts):
        raise SpaceError(f"functional count {n} != polynomial dimension {ncomp * len(expts)}")
    F = np.vstack(functionals)
    cond = np.linalg.cond(F)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SpaceError(f"degenerate element basis (cond={cond:.2e})")
    C = np.linalg.inv(F)
    coeffs = C.T.reshape(n, ncomp, len(expts))
    return _ElementBasis(coeffs, center, h, expts, ncomp, dim)


def _functional_row(qpts, qwts, weight_cq, center, h, expts, ncomp):
    """Row vector of the functional sum_q w_q weight[c, q] * field_c(x_q)."""
    xi = (qpts - center) / h
    mono = eval_monomials(xi, expts)
    row = np.einsum("cq,q,qm->cm", weight_cq, qwts, mono)
    return row.reshape(-1)


# ---------------------------------------------------------------------------
# canonical facet frames


def edge_frame(coords, vids):
    """Sorted-id edge: returns (a, b, tangent unit vector, length)."""
    a, b = sorted(int(v) for v in vids)
    xa, xb = coords[a], coords[b]
    t = xb - xa
    length = np.linalg.norm(t)
    return a, b, t / length, length


def face_frame(coords, vids):
    """Sorted-id face: orthonormal in-plane frame and centroid."""
    v = sorted(int(x) for x in vids)
    x0, x1, x2 = coords[v[0]], coords[v[1]], coords[v[2]]
    t1 = x1 - x0
    t1 = t1 / np.linalg.norm(t1)
    t2 = x2 - x0
    t2 = t2 - t1 * (t2 @ t1)
    t2 = t2 / np.linalg.norm(t2)
    n = np.cross(x1 - x0, x2 - x0)
    area = 0.5 * np.linalg.norm(n)
    n = n / np.linalg.norm(n)
    cen = (x0 + x1 + x2) / 3.0
    hf = max(np.linalg.norm(x1 - x0), np.linalg.norm(x2 - x0), np.linalg.norm(x2 - x1))
    return v, (x0, x1, x2), t1, t2, n, cen, area, hf


def _face_scalar_basis(k):
    """Exponents of the scalar polynomial basis on a face, degree <= k."""
    return monomial_exponents(2, k)


# ---------------------------------------------------------------------------
# interior functional selection for the stress space

_INTERIOR_CACHE = {}


def _sym_basis_mats(dim):
    mats = []
    for (i, j) in _SYM_PAIRS[dim]:
        m = np.zeros((dim, dim))
        m[i, j] = 1.0
        m[j, i] = 1.0
        mats.append(m)
    return mats


def _stress_interior_candidates(dim, k):
    """Ordered candidate (sym matrix, exponent) pairs for interior moments."""
    cands = []
    for ex in monomial_exponents(dim, k):
        for m, S in enumerate(_sym_basis_mats(dim)):
            cands.append((S, ex))
    return cands


def _select_stress_interior(dim, k, n_needed):
    """Greedy, geometry-independent choice of interior moment functionals.

    Selection runs once on the unit simplex; the chosen candidate indices
    are then reused for every element, keeping interior dofs canonical
    across geometry updates.
    """
    key = (dim, k)
    if key in _INTERIOR_CACHE:
        return _INTERIOR_CACHE[key]
    # Probe on several simplices at once: a set unisolvent only on special
    # geometries (e.g. the axis-aligned unit simplex) must be rejected.
    rng = np.random.default_rng(1234)
    probes = [np.vstack([np.zeros(dim), np.eye(dim)])]
    for _ in range(4):
        probes.append(probes[0] + rng.uniform(-0.25, 0.25, probes[0].shape))
    builder = _StressBuilder(dim, k)
    cands = _stress_interior_candidates(dim, k)
    rows = [builder.facet_rows_for_simplex(v) for v in probes]
    chosen = []
    ntot = npack(dim) * len(monomial_exponents(dim, k))
    for ci, (S, ex) in enumerate(cands):
        if len(rows[0]) == ntot:
            break
        new = [builder.interior_row(v, S, ex) for v in probes]
        ok = True
        for rlist, row in zip(rows, new):
            trial = np.vstack(rlist + [row])
            if np.linalg.matrix_rank(
                trial, tol=1e-9 * np.abs(trial).max()
            ) != len(rlist) + 1:
                ok = False
                break
        if ok:
            for rlist, row in zip(rows, new):
                rlist.append(row)
            chosen.append(ci)
    if len(rows[0]) != ntot:
        raise SpaceError(f"could not find unisolvent interior dofs for dim={dim}, k={k}")
    _INTERIOR_CACHE[key] = chosen
    return chosen


class _StressBuilder:
    """Helper producing functional rows for the stress space on a simplex."""

    def __init__(self, dim, k):
        self.dim = dim
        self.k = k
        self.expts = monomial_exponents(dim, k)
        self.nraw = npack(dim)
        self.qdeg = 2 * k + 4

    def _geom(self, verts):
        center = verts.mean(axis=0)
        h = max(
            np.linalg.norm(verts[i] - verts[j])
            for i in range(len(verts))
            for j in range(i)
        )
        return center, h

    def _nn_weight(self, n):
        """Row weights extracting sigma_nn from raw packed components."""
        dim = self.dim
        w = np.empty(self.nraw)
        for c, (i, j) in enumerate(_SYM_PAIRS[dim]):
            w[c] = n[i] * n[j] * (1.0 if i == j else 2.0)
        return w

    def facet_functionals(self, verts, facet_vert_coords_list):
        """Rows for sigma_nn moments on each facet, canonical order."""
        center, h = self._geom(verts)
        rows = []
        for fv in facet_vert_coords_list:
            if self.dim == 2:
                (xa, xb) = fv
                t = xb - xa
                length = np.linalg.norm(t)
                n = np.array([t[1], -t[0]]) / length
                qp, qw = facet_rule_points(np.array([xa, xb]), self.qdeg)
                s = ((qp - xa) @ t) / (length * length)
                nnw = self._nn_weight(n)
                for j in range(self.k + 1):
                    wq = _legendre01(j, s)
                    weight = np.outer(nnw, wq) / length
                    rows.append(
                        _functional_row(qp, qw, weight, center, h, self.expts, self.nraw)
                    )
            else:
                (x0, x1, x2) = fv
                n = np.cross(x1 - x0, x2 - x0)
                area = 0.5 * np.linalg.norm(n)
                n = n / np.linalg.norm(n)
                qp, qw = facet_rule_points(np.array([x0, x1, x2]), self.qdeg)
                e1, e2 = x1 - x0, x2 - x0
                # local (s1, s2): x = x0 + s1 e1 + s2 e2
                G = np.array([[e1 @ e1, e1 @ e2], [e2 @ e1, e2 @ e2]])
                rhs = np.stack([(qp - x0) @ e1, (qp - x0) @ e2])
                s12 = np.linalg.solve(G, rhs).T
                nnw = self._nn_weight(n)
                for ex in _face_scalar_basis(self.k):
                    wq = s12[:, 0] ** ex[0] * s12[:, 1] ** ex[1]
                    weight = np.outer(nnw, wq) / area
                    rows.append(
                        _functional_row(qp, qw, weight, center, h, self.expts, self.nraw)
                    )
        return rows

    def facet_rows_for_simplex(self, verts):
        dim = self.dim
        fvs = []
        nloc = dim + 1
        for i in range(nloc):
            idx = [j for j in range(nloc) if j != i]
            vs = verts[idx]
            order = np.lexsort(vs.T[::-1])
            fvs.append(tuple(vs[o] for o in order))
        return self.facet_functionals(verts, fvs)

    def interior_row(self, verts, S, ex):
        center, h = self._geom(verts)
        qp, qw = map_to_physical(verts, *simplex_rule(self.dim, self.qdeg))
        vol = qw.sum()
        xi = (qp - center) / h
        poly = np.ones(len(qp))
        for a, p in enumerate(ex):
            if p:
                poly = poly * xi[:, a] ** p
        # sigma : S = sum_c raw_c * Sw_c with doubled off-diagonals
        Sw = np.array(
            [S[i, j] * (1.0 if i == j else 2.0) for (i, j) in _SYM_PAIRS[self.dim]]
        )
        weight = np.outer(Sw, poly) / vol
        return _functional_row(qp, qw, weight, center, h, self.expts, self.nraw)


# ---------------------------------------------------------------------------
# global spaces


class FESpace:
    """Global dof layout plus per-element dual bases."""

    def __init__(self, mesh, ncomp, expts):
        self.mesh = mesh
        self.ncomp = ncomp
        self.expts = expts
        self.elem_dofs = None     # (ne, nloc) int
        self.bases = None         # list of _ElementBasis
        self.ndof = 0

    def values(self, e, pts):
        return self.bases[e].values(pts)

    def gradients(self, e, pts):
        return self.bases[e].gradients(pts)

    def eval_field(self, e, coeffs, pts):
        """Field values of a global coefficient vector on element e."""
        vals = self.values(e, pts)
        return np.einsum("i,iqc->qc", coeffs[self.elem_dofs[e]], vals)

    def eval_field_gradient(self, e, coeffs, pts):
        grads = self.gradients(e, pts)
        return np.einsum("i,iqcd->qcd", coeffs[self.elem_dofs[e]], grads)


def _elem_geom(mesh, e):
    verts = mesh.coords[mesh.elems[e]]
    center = verts.mean(axis=0)
    return verts, center, mesh.h[e]


class VectorTangentialSpace(FESpace):
    """Displacement space: tangentially continuous, degree k."""

    def __init__(self, mesh, k):
        dim = mesh.dim
        expts = monomial_exponents(dim, k)
        super().__init__(mesh, dim, expts)
        self.k = k
        self.qdeg = 2 * k + 4
        self._number_dofs()
        self._build_bases()

    def _number_dofs(self):
        mesh, dim, k = self.mesh, self.mesh.dim, self.k
        per_edge = k + 1
        self.per_edge = per_edge
        if dim == 2:
            self.edge_offset = 0
            nloc_edge = 3 * per_edge
            self.per_face = 0
            self.n_interior = 3 if k == 2 else 0
            self.interior_offset = mesh.num_facets * per_edge
            self.ndof = self.interior_offset + mesh.num_elements * self.n_interior
            nloc = nloc_edge + self.n_interior
            self.elem_dofs = np.empty((mesh.num_elements, nloc), dtype=int)
            for e in range(mesh.num_elements):
                dofs = []
                for f in mesh.elem_facets[e]:
                    dofs.extend(f * per_edge + j for j in range(per_edge))
                dofs.extend(
                    self.interior_offset + e * self.n_interior + j
                    for j in range(self.n_interior)
                )
                self.elem_dofs[e] = dofs
        else:
            self.per_face = 3 if k == 2 else 0
            self.face_offset = mesh.num_edges * per_edge
            self.n_interior = 0
            self.ndof = self.face_offset + mesh.num_facets * self.per_face
            nloc = 6 * per_edge + 4 * self.per_face
            self.elem_dofs = np.empty((mesh.num_elements, nloc), dtype=int)
            for e in range(mesh.num_elements):
                dofs = []
                for ed in mesh.elem_edges[e]:
                    dofs.extend(ed * per_edge + j for j in range(per_edge))
                for f in mesh.elem_facets[e]:
                    dofs.extend(
                        self.face_offset + f * self.per_face + j
                        for j in range(self.per_face)
                    )
                self.elem_dofs[e] = dofs

    def _edge_rows(self, center, h, vids):
        mesh = self.mesh
        a, b, t, length = edge_frame(mesh.coords, vids)
        xa = mesh.coords[a]
        qp, qw = facet_rule_points(np.array([xa, mesh.coords[b]]), self.qdeg)
        s = ((qp - xa) @ (t * length)) / (length * length)
        rows = []
        for j in range(self.per_edge):
            wq = _legendre01(j, s)
            weight = np.outer(t, wq) / length
            rows.append(_functional_row(qp, qw, weight, center, h, self.expts, self.ncomp))
        return rows

    def _face_rows(self, center, h, vids):
        mesh = self.mesh
        v, (x0, x1, x2), t1, t2, n, cen, area, hf = face_frame(mesh.coords, vids)
        qp, qw = facet_rule_points(np.array([x0, x1, x2]), self.qdeg)
        rows = []
        radial = (qp - cen) / hf  # in-plane for points on the face
        for q in ("t1", "t2", "r"):
            if q == "t1":
                weight = np.repeat(t1[:, None], len(qp), axis=1)
            elif q == "t2":
                weight = np.repeat(t2[:, None], len(qp), axis=1)
            else:
                weight = radial.T
            rows.append(
                _functional_row(qp, qw, weight / area, center, h, self.expts, self.ncomp)
            )
        return rows

    def _interior_rows(self, e, verts, center, h):
        qp, qw = map_to_physical(verts, *simplex_rule(self.mesh.dim, self.qdeg))
        vol = qw.sum()
        xi = (qp - center) / h
        rows = []
        fields = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), None]
        for fld in fields:
            if fld is None:
                weight = xi.T
            else:
                weight = np.repeat(fld[:, None], len(qp), axis=1)
            rows.append(
                _functional_row(qp, qw, weight / vol, center, h, self.expts, self.ncomp)
            )
        return rows

    def _build_bases(self):
        mesh = self.mesh
        self.bases = []
        for e in range(mesh.num_elements):
            verts, center, h = _elem_geom(mesh, e)
            rows = []
            if mesh.dim == 2:
                for f in mesh.elem_facets[e]:
                    rows.extend(self._edge_rows(center, h, mesh.facet_verts[f]))
                if self.n_interior:
                    rows.extend(self._interior_rows(e, verts, center, h))
            else:
                for ed in mesh.elem_edges[e]:
                    rows.extend(self._edge_rows(center, h, mesh.edge_verts[ed]))
                if self.per_face:
                    for f in mesh.elem_facets[e]:
                        rows.extend(self._face_rows(center, h, mesh.facet_verts[f]))
            self.bases.append(
                _build_dual_basis(rows, self.ncomp, self.expts, center, h, mesh.dim)
            )

    def dofs_on_tag(self, tag):
        mesh = self.mesh
        fids = mesh.boundary_facets(tag)
        dofs = set()
        if mesh.dim == 2:
            for f in fids:
                dofs.update(f * self.per_edge + j for j in range(self.per_edge))
        else:
            edge_lookup = {tuple(ev): i for i, ev in enumerate(mesh.edge_verts)}
            for f in fids:
                vs = sorted(mesh.facet_verts[f])
                for a, b in ((0, 1), (0, 2), (1, 2)):
                    ed = edge_lookup[(vs[a], vs[b])]
                    dofs.update(ed * self.per_edge + j for j in range(self.per_edge))
                dofs.update(
                    self.face_offset + f * self.per_face + j for j in range(self.per_face)
                )
        return np.array(sorted(dofs), dtype=int)

    def interpolate(self, func, elementwise=False):
        """Dof vector of a vector field (applies the dof functionals).

        With ``elementwise=True``, ``func(e, pts)`` is called with the
        element index so piecewise finite element fields can be sampled;
        otherwise ``func(pts)`` must be a globally defined field.
        """
        mesh = self.mesh
        out = np.zeros(self.ndof)
        seen = np.zeros(self.ndof, dtype=bool)
        call = func if elementwise else (lambda e, pts: func(pts))
        for e in range(mesh.num_elements):
            verts, center, h = _elem_geom(mesh, e)
            rows_entities = []
            if mesh.dim == 2:
                for f in mesh.elem_facets[e]:
                    a, b, t, length = edge_frame(mesh.coords, mesh.facet_verts[f])
                    xa = mesh.coords[a]
                    qp, qw = facet_rule_points(
                        np.array([xa, mesh.coords[b]]), self.qdeg
                    )
                    s = ((qp - xa) @ (t * length)) / (length * length)
                    vals = call(e, qp)
                    for j in range(self.per_edge):
                        g = f * self.per_edge + j
                        if not seen[g]:
                            out[g] = np.sum(qw * _legendre01(j, s) * (vals @ t)) / length
                            seen[g] = True
                if self.n_interior:
                    qp, qw = map_to_physical(verts, *simplex_rule(2, self.qdeg))
                    vol = qw.sum()
                    xi = (qp - center) / h
                    vals = call(e, qp)
                    fields = [
                        np.repeat([[1.0, 0.0]], len(qp), axis=0),
                        np.repeat([[0.0, 1.0]], len(qp), axis=0),
                        xi,
                    ]
                    for j, fld in enumerate(fields):
                        g = self.interior_offset + e * self.n_interior + j
                        out[g] = np.sum(qw * np.sum(vals * fld, axis=1)) / vol
                        seen[g] = True
            else:
                for ed in mesh.elem_edges[e]:
                    a, b, t, length = edge_frame(mesh.coords, mesh.edge_verts[ed])
                    xa = mesh.coords[a]
                    qp, qw = facet_rule_points(
                        np.array([xa, mesh.coords[b]]), self.qdeg
                    )
                    s = ((qp - xa) @ (t * length)) / (length * length)
                    vals = call(e, qp)
                    for j in range(self.per_edge):
                        g = ed * self.per_edge + j
                        if not seen[g]:
                            out[g] = np.sum(qw * _legendre01(j, s) * (vals @ t)) / length
                            seen[g] = True
                if self.per_face:
                    for f in mesh.elem_facets[e]:
                        v, (x0, x1, x2), t1, t2, n, cen, area, hf = face_frame(
                            mesh.coords, mesh.facet_verts[f]
                        )
                        qp, qw = facet_rule_points(np.array([x0, x1, x2]), self.qdeg)
                        vals = call(e, qp)
                        radial = (qp - cen) / hf
                        for j, w in enumerate(
                            (
                                np.repeat([t1], len(qp), axis=0),
                                np.repeat([t2], len(qp), axis=0),
                                radial,
                            )
                        ):
                            g = self.face_offset + f * self.per_face + j
                            if not seen[g]:
                                out[g] = np.sum(qw * np.sum(vals * w, axis=1)) / area
                                seen[g] = True
        return out


class StressNNSpace(FESpace):
    """Stress space: symmetric, degree k, normal-normal continuous."""

    def __init__(self, mesh, k):
        dim = mesh.dim
        expts = monomial_exponents(dim, k)
        super().__init__(mesh, npack(dim), expts)
        self.k = k
        self.builder = _StressBuilder(dim, k)
        nfun = self.ncomp * len(expts)
        self.per_facet = (k + 1) if dim == 2 else (k + 1) * (k + 2) // 2
        self.n_interior = nfun - (dim + 1) * self.per_facet
        self.interior_ids = _select_stress_interior(dim, k, self.n_interior)
        self._number_dofs()
        self._build_bases()

    def _number_dofs(self):
        mesh = self.mesh
        self.interior_offset = mesh.num_facets * self.per_facet
        self.ndof = self.interior_offset + mesh.num_elements * self.n_interior
        nloc = (mesh.dim + 1) * self.per_facet + self.n_interior
        self.elem_dofs = np.empty((mesh.num_elements, nloc), dtype=int)
        for e in range(mesh.num_elements):
            dofs = []
            for f in mesh.elem_facets[e]:
                dofs.extend(f * self.per_facet + j for j in range(self.per_facet))
            dofs.extend(
                self.interior_offset + e * self.n_interior + j
                for j in range(self.n_interior)
            )
            self.elem_dofs[e] = dofs

    def _build_bases(self):
        mesh = self.mesh
        cands = _stress_interior_candidates(mesh.dim, self.k)
        # keep each element's interior functional choice sticky across
        # rebuilds on the moved mesh: stored stress coefficients pair with
        # these functionals, so silently reselecting would reinterpret the
        # accumulated stress in a different basis
        prev = getattr(self, "elem_interior_ids", None)
        self.bases = []
        self.elem_interior_ids = []
        for e in range(mesh.num_elements):
            verts, center, h = _elem_geom(mesh, e)
            fvs = []
            for f in mesh.elem_facets[e]:
                vids = sorted(mesh.facet_verts[f])
                fvs.append(tuple(mesh.coords[v] for v in vids))
            facet_rows = self.builder.facet_functionals(verts, fvs)
            chosen = list(prev[e]) if prev is not None else self.interior_ids
            rows = list(facet_rows)
            for ci in chosen:
                S, ex = cands[ci]
                rows.append(self.builder.interior_row(verts, S, ex))
            if np.linalg.cond(np.vstack(rows)) > 1e10:
                # Special geometries (e.g. axis-aligned structured tets) can
                # defeat the generically unisolvent set; reselect on this
                # element by repeatedly taking the candidate with the largest
                # component outside the span of the rows picked so far.  This
                # always completes the basis (the candidate set spans the
                # complement) and is stable under small mesh perturbations,
                # where a fixed-order rank test may drop a needed candidate.
                chosen, rows = [], list(facet_rows)
                ntot = self.ncomp * len(self.expts)
                cand_rows = [
                    self.builder.interior_row(verts, S, ex) for S, ex in cands
                ]
                unused = list(range(len(cand_rows)))
                while len(rows) < ntot:
                    Q, _ = np.linalg.qr(np.vstack(rows).T)
                    best, best_res = None, -1.0
                    for ci in unused:
                        row = cand_rows[ci]
                        r = row - Q @ (Q.T @ row)
                        res = np.linalg.norm(r) / max(np.linalg.norm(row), 1e-300)
                        if res > best_res:
                            best, best_res = ci, res
                    rows.append(cand_rows[best])
                    chosen.append(best)
                    unused.remove(best)
            self.elem_interior_ids.append(chosen)
            self.bases.append(
                _build_dual_basis(rows, self.ncomp, self.expts, center, h, mesh.dim)
            )

    def dofs_on_tag(self, tag):
        fids = self.mesh.boundary_facets(tag)
        dofs = []
        for f in fids:
            dofs.extend(f * self.per_facet + j for j in range(self.per_facet))
        return np.array(sorted(dofs), dtype=int)


class LagrangeSpace(FESpace):
    """Continuous nodal Lagrange space of degree p with ncomp components.

    Used both for the electric potential (p = k + 1, scalar) and for the
    continuous displacement interpolant (p = k, vector).  Scalar shape
    functions are shared across components; ``elem_dofs`` refers to nodes
    and component c of node n is global dof n * ncomp + c.
    """

    def __init__(self, mesh, p, ncomp=1):
        expts = monomial_exponents(mesh.dim, p)
        super().__init__(mesh, 1, expts)
        self.p = p
        self.ncomps = ncomp
        self._build_nodes()
        self._build_bases()

    def _build_nodes(self):
        mesh, p = self.mesh, self.p
        dim = mesh.dim
        nodes = [mesh.coords[i].copy() for i in range(mesh.num_vertices)]
        self.vertex_nodes = np.arange(mesh.num_vertices)
        edge_nodes = {}
        if p >= 2:
            edges = mesh.facet_verts if dim == 2 else mesh.edge_verts
            for i, ev in enumerate(edges):
                a, b = sorted(int(v) for v in ev)
                ids = []
                for j in range(1, p):
                    t = j / p
                    nodes.append((1 - t) * mesh.coords[a] + t * mesh.coords[b])
                    ids.append(len(nodes) - 1)
                edge_nodes[i] = ids
        face_nodes = {}
        if dim == 3 and p >= 3:
            if p > 3:
                raise SpaceError("Lagrange degree > 3 not supported in 3D")
            for f in range(mesh.num_facets):
                nodes.append(mesh.coords[mesh.facet_verts[f]].mean(axis=0))
                face_nodes[f] = [len(nodes) - 1]
        interior_nodes = {}
        if dim == 2 and p >= 3:
            if p > 3:
                raise SpaceError("Lagrange degree > 3 not supported in 2D")
            for e in range(mesh.num_elements):
                nodes.append(mesh.coords[mesh.elems[e]].mean(axis=0))
                interior_nodes[e] = [len(nodes) - 1]
        self.node_coords = np.array(nodes)
        self.num_nodes = len(nodes)
        self.ndof = self.num_nodes * self.ncomps
        # element -> node table, canonical order
        nloc = len(self.expts)
        self.elem_dofs = np.empty((mesh.num_elements, nloc), dtype=int)
        for e in range(mesh.num_elements):
            ids = list(mesh.elems[e])
            if p >= 2:
                ents = mesh.elem_facets[e] if dim == 2 else mesh.elem_edges[e]
                for ent in ents:
                    ids.extend(edge_nodes[ent])
            if dim == 3 and p >= 3:
                for f in mesh.elem_facets[e]:
                    ids.extend(face_nodes[f])
            if dim == 2 and p >= 3:
                ids.extend(interior_nodes[e])
            self.elem_dofs[e] = ids

    def _build_bases(self):
        mesh = self.mesh
        self.bases = []
        for e in range(mesh.num_elements):
            verts, center, h = _elem_geom(mesh, e)
            pts = self.node_coords[self.elem_dofs[e]]
            xi = (pts - center) / h
            V = eval_monomials(xi, self.expts)
            cond = np.linalg.cond(V)
            if not np.isfinite(cond) or cond > 1e12:
                raise SpaceError(f"degenerate Lagrange element (cond={cond:.2e})")
            coeffs = np.linalg.inv(V).T.reshape(len(self.expts), 1, len(self.expts))
            self.bases.append(
                _ElementBasis(coeffs, center, h, self.expts, 1, mesh.dim)
            )

    def nodes_on_tag(self, tag):
        mesh = self.mesh
        fids = mesh.boundary_facets(tag)
        nodes = set()
        p, dim = self.p, mesh.dim
        edge_base = mesh.num_vertices
        if dim == 2:
            for f in fids:
                nodes.update(int(v) for v in mesh.facet_verts[f])
                if p >= 2:
                    nodes.update(edge_base + f * (p - 1) + j for j in range(p - 1))
        else:
            edge_lookup = {tuple(ev): i for i, ev in enumerate(mesh.edge_verts)}
            face_base = edge_base + (mesh.num_edges * (p - 1) if p >= 2 else 0)
            for f in fids:
                vs = sorted(int(v) for v in mesh.facet_verts[f])
                nodes.update(vs)
                if p >= 2:
                    for a, b in ((0, 1), (0, 2), (1, 2)):
                        ed = edge_lookup[(vs[a], vs[b])]
                        nodes.update(edge_base + ed * (p - 1) + j for j in range(p - 1))
                if p >= 3:
                    nodes.add(face_base + f)
        return np.array(sorted(nodes), dtype=int)

    def dofs_on_tag(self, tag):
        nodes = self.nodes_on_tag(tag)
        return np.concatenate(
            [nodes * self.ncomps + c for c in range(self.ncomps)]
        ) if len(nodes) else np.array([], dtype=int)

    def scalar_values(self, e, pts):
        return self.bases[e].values(pts)[:, :, 0]

    def scalar_gradients(self, e, pts):
        return self.bases[e].gradients(pts)[:, :, 0, :]

    def eval_vector_field(self, e, coeffs, pts):
        """Values of a vector field stored as (num_nodes, ncomps) or flat."""
        vals = self.scalar_values(e, pts)  # (nloc, nq)
        nodal = coeffs.reshape(self.num_nodes, self.ncomps)[self.elem_dofs[e]]
        return np.einsum("iq,ic->qc", vals, nodal)

    def eval_vector_gradient(self, e, coeffs, pts):
        grads = self.scalar_gradients(e, pts)  # (nloc, nq, d)
        nodal = coeffs.reshape(self.num_nodes, self.ncomps)[self.elem_dofs[e]]
        return np.einsum("iqd,ic->qcd", grads, nodal)


# ---------------------------------------------------------------------------
# space bundle and interpolation utilities


def stacked_basis(space):
    """Stack per-element basis data: (coeffs, centers, scales).

    coeffs has shape (ne, nloc, ncomp, nmono); valid while the mesh
    geometry is unchanged.
    """
    coeffs = np.stack([b.coeffs for b in space.bases])
    centers = np.stack([b.center for b in space.bases])
    scales = np.array([b.h for b in space.bases])
    return coeffs, centers, scales


class SpaceSet:
    """The displacement / stress / potential triple on one mesh.

    Also carries the continuous degree-k vector Lagrange space used for
    re-interpolating the discontinuous displacement update.
    """

    def __init__(self, mesh, k):
        if k not in (1, 2):
            raise SpaceError("polynomial order k must be 1 or 2")
        self.mesh = mesh
        self.k = k
        self.V = VectorTangentialSpace(mesh, k)
        self.S = StressNNSpace(mesh, k)
        self.W = LagrangeSpace(mesh, k + 1, ncomp=1)
        # mesh-motion space: always piecewise linear, because moving the
        # (affine) mesh can only ever realize the vertex part of an update;
        # a higher-order interpolant would leave F0 inconsistent with the
        # actual geometry and destabilize the outer iteration
        self.U = LagrangeSpace(mesh, 1, ncomp=mesh.dim)

    def rebuild(self):
        """Recompute all bases on the (moved) mesh; dof numbering is kept."""
        self.V._build_bases()
        self.S._build_bases()
        self.W._build_nodes()
        self.W._build_bases()
        self.U._build_nodes()
        self.U._build_bases()

    def ndofs(self):
        return self.V.ndof, self.S.ndof, self.W.ndof


def build_spaces(mesh, k, bc_tags=None):
    """Construct the mixed spaces; optionally validate boundary tag names."""
    if bc_tags:
        for tag in bc_tags:
            if tag not in mesh.tag_ids:
                raise SpaceError(
                    f"unknown boundary tag {tag!r}; available: {sorted(mesh.tag_ids)}"
                )
    return SpaceSet(mesh, k)


def interpolate_to_continuous(V, coeffs, U):
    """L2 projection of a V-field onto the continuous Lagrange space ``U``.

    The projection is computed component-wise through the scalar mass
    matrix of ``U``.  Being a genuine projection (idempotent in exact
    arithmetic), the continuous remainder of an already-projected field
    vanishes -- nodal averaging instead leaves an O(1)-in-h fraction
    behind, which shows up as a stagnation floor in the outer Newton
    loop.  Returns nodal values of shape (num_nodes, dim).
    """
    import scipy.sparse as sp
    from scipy.sparse.linalg import splu

    mesh = V.mesh
    qdeg = 2 * U.p + 2
    rp, rw = simplex_rule(mesh.dim, qdeg)
    nloc = U.elem_dofs.shape[1]
    rows, cols, mvals = [], [], []
    b = np.zeros((U.num_nodes, mesh.dim))
    for e in range(mesh.num_elements):
        nodes = U.elem_dofs[e]
        qp, qw = map_to_physical(mesh.coords[mesh.elems[e]], rp, rw)
        phi = U.scalar_values(e, qp)           # (nloc, nq)
        Me = np.einsum("iq,jq,q->ij", phi, phi, qw)
        v = V.eval_field(e, coeffs, qp)        # (nq, dim)
        b[nodes] += np.einsum("iq,q,qc->ic", phi, qw, v)
        rows.append(np.repeat(nodes, nloc))
        cols.append(np.tile(nodes, nloc))
        mvals.append(Me.ravel())
    M = sp.coo_matrix(
        (np.concatenate(mvals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(U.num_nodes, U.num_nodes)).tocsc()
    return splu(M).solve(b)


def l2_norms_of_update(spaces, u_coeffs, u_cont_nodal, qdeg=None):
    """Discrete L2 norms (‖Πu‖, ‖u − Πu‖) over the current mesh."""
    mesh = spaces.mesh
    qdeg = qdeg or 2 * spaces.k + 2
    rp, rw = simplex_rule(mesh.dim, qdeg)
    n_pi = 0.0
    n_jump = 0.0
    for e in range(mesh.num_elements):
        qp, qw = map_to_physical(mesh.coords[mesh.elems[e]], rp, rw)
        pi = spaces.U.eval_vector_field(e, u_cont_nodal, qp)
        u = spaces.V.eval_field(e, u_coeffs, qp)
        n_pi += np.sum(qw * np.sum(pi * pi, axis=1))
        n_jump += np.sum(qw * np.sum((u - pi) ** 2, axis=1))
    return float(np.sqrt(n_pi)), float(np.sqrt(n_jump))
