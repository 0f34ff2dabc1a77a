"""Assembly of the mixed linearized update system.

The unknown vector is ordered (u_Delta | tau_sym | phi_Delta).  The
bilinear form couples the compliance A = cbar^{-1} (with cbar the
spatial moduli augmented by the geometric stiffening term
cbar : eps = c : eps + sym(eps . tau0)), the electro-mechanical coupling
e, the dielectric tensor d, and the skew-gradient stiffening terms
proportional to the previous stress tau0.  The displacement enters
through the distributional strain pairing

    <tau, eps(u)> = sum_T ( int_T tau : eps(u) - int_dT tau_nn u.n )

which is well defined for tangentially continuous u and nn-continuous
tau.  An optional consistent stabilization -sum_T h_T^2 int div tau .
div dtau handles near incompressibility.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .materials import InvertedStateError, push_forward
from .quadrature import facet_rule_points, map_to_physical, simplex_rule
from .spaces import stacked_basis, eval_monomials, eval_monomial_grads
from .tensors import (
    mandel_weights, mandel_to_sym, npack, nskew, skew_basis,
)

_SYM_PAIRS = {2: [(0, 0), (1, 1), (0, 1)], 3: [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]}

# raw packed index layout of the divergence:  div_i = sum_j d sigma_ij / dx_j
_DIV_MAP = {
    2: [[(0, 0), (2, 1)], [(2, 0), (1, 1)]],
    3: [[(0, 0), (5, 1), (4, 2)], [(5, 0), (1, 1), (3, 2)], [(4, 0), (3, 1), (2, 2)]],
}


class AssemblyError(Exception):
    pass


class SingularModuliError(AssemblyError):
    def __init__(self, element, message=None):
        self.element = element
        super().__init__(message or f"singular tangent moduli on element {element}")


def _mandel_basis_tensors(dim):
    """Full tensors of the Mandel unit vectors, shape (npack, d, d)."""
    out = np.zeros((npack(dim), dim, dim))
    w = mandel_weights(dim)
    for c, (i, j) in enumerate(_SYM_PAIRS[dim]):
        out[c, i, j] += 1.0 / w[c]
        if i != j:
            out[c, j, i] += 1.0 / w[c]
    return out


class ElementData:
    """Stacked basis evaluations of all three spaces on the current mesh.

    Built once per geometry; arrays are indexed (element, local basis,
    quadrature point, ...).
    """

    def __init__(self, spaces, qdeg=None, fdeg=None):
        mesh = spaces.mesh
        k = spaces.k
        dim = mesh.dim
        self.spaces = spaces
        self.qdeg = qdeg or 2 * k + 2
        self.fdeg = fdeg or 2 * k + 2
        ne = mesh.num_elements

        rp, rw = simplex_rule(dim, self.qdeg)
        nq = len(rw)
        verts = mesh.coords[mesh.elems]                      # (ne, d+1, d)
        jac = np.swapaxes(verts[:, 1:, :] - verts[:, :1, :], 1, 2)  # (ne, d, d)
        det = np.abs(np.linalg.det(jac))
        self.qp = verts[:, 0, None, :] + np.einsum("qr,edr->eqd", rp, jac)
        self.qw = det[:, None] * rw[None, :]

        def _eval(space, want_grad):
            coeffs, centers, scales = stacked_basis(space)
            xi = (self.qp - centers[:, None, :]) / scales[:, None, None]
            mono = np.stack(
                [eval_monomials(xi[e], space.expts) for e in range(ne)]
            )  # (ne, nq, nmono)
            vals = np.einsum("eicm,eqm->eiqc", coeffs, mono)
            grads = None
            if want_grad:
                dmono = np.stack(
                    [
                        eval_monomial_grads(xi[e], space.expts, 1.0 / scales[e])
                        for e in range(ne)
                    ]
                )
                grads = np.einsum("eicm,eqmd->eiqcd", coeffs, dmono)
            return vals, grads

        # displacement space: values, strains (Mandel), skew components
        Vv, Vg = _eval(spaces.V, True)
        self.Vval = Vv
        w = mandel_weights(dim)
        pairs = _SYM_PAIRS[dim]
        eps = np.stack(
            [0.5 * (Vg[..., i, j] + Vg[..., j, i]) for (i, j) in pairs], axis=-1
        )
        self.Veps = eps * w
        K = skew_basis(dim)
        # components c with skw(grad u) = sum_c s_c K_c / ... : grad contracted
        # with K_c / 2 reproduces the packing of skew_components
        self.Vskw = 0.5 * np.einsum("eiqcd,kcd->eiqk", Vg, K)

        # stress space: Mandel values, divergence
        Sv, Sg = _eval(spaces.S, True)
        self.Sm = Sv * w
        div = np.zeros(Sv.shape[:3] + (dim,))
        for i, terms in enumerate(_DIV_MAP[dim]):
            for (c, j) in terms:
                div[..., i] += Sg[..., c, j]
        self.Sdiv = div

        # potential space: scalar gradients
        Wv, Wg = _eval(spaces.W, True)
        self.Wval = Wv[..., 0]
        self.Wgrad = Wg[..., 0, :]

        self._build_facet_data(mesh, spaces)

    def _build_facet_data(self, mesh, spaces):
        dim = mesh.dim
        ne = mesh.num_elements
        nlf = dim + 1
        # reference facet rule size
        probe = mesh.coords[mesh.facet_verts[mesh.elem_facets[0][0]]]
        nqf = len(facet_rule_points(probe, self.fdeg)[1])
        nVl = self.Vval.shape[1]
        nSl = self.Sm.shape[1]
        self.fw = np.empty((ne, nlf, nqf))
        self.fnormal = np.empty((ne, nlf, dim))
        self.Snn = np.empty((ne, nlf, nSl, nqf))
        self.Vn = np.empty((ne, nlf, nVl, nqf))
        self.fpts = np.empty((ne, nlf, nqf, dim))
        Vcoeffs, Vcen, Vh = stacked_basis(spaces.V)
        Scoeffs, Scen, Sh = stacked_basis(spaces.S)
        pairs = _SYM_PAIRS[dim]
        cen_el = mesh.coords[mesh.elems].mean(axis=1)
        for e in range(ne):
            for lf, f in enumerate(mesh.elem_facets[e]):
                fv = mesh.coords[mesh.facet_verts[f]]
                qp, qw = facet_rule_points(fv, self.fdeg)
                if dim == 2:
                    t = fv[1] - fv[0]
                    n = np.array([t[1], -t[0]])
                else:
                    n = np.cross(fv[1] - fv[0], fv[2] - fv[0])
                n = n / np.linalg.norm(n)
                if np.dot(n, fv.mean(axis=0) - cen_el[e]) < 0:
                    n = -n
                self.fw[e, lf] = qw
                self.fnormal[e, lf] = n
                self.fpts[e, lf] = qp
                xi = (qp - Scen[e]) / Sh[e]
                mono = eval_monomials(xi, spaces.S.expts)
                raw = np.einsum("icm,qm->iqc", Scoeffs[e], mono)
                nn = np.zeros(raw.shape[:2])
                for c, (i, j) in enumerate(pairs):
                    fac = 1.0 if i == j else 2.0
                    nn += raw[..., c] * (fac * n[i] * n[j])
                self.Snn[e, lf] = nn
                xi = (qp - Vcen[e]) / Vh[e]
                mono = eval_monomials(xi, spaces.V.expts)
                vv = np.einsum("icm,qm->iqc", Vcoeffs[e], mono)
                self.Vn[e, lf] = vv @ n


@dataclass
class QuadratureState:
    """Material and history data at every quadrature point.

    ``A`` is the inverted augmented compliance cbar^{-1}; ``A_lhs`` equals
    ``A`` unless the simplified tangent is requested, in which case the
    geometric stiffening is dropped from the left-hand side only.
    """

    F0: np.ndarray          # (ne, nq, d, d)
    J0: np.ndarray          # (ne, nq)
    tau0: np.ndarray        # (ne, nq, d, d) previous stress (from Sigma coeffs)
    tau0_bar: np.ndarray    # (ne, nq, npack) Mandel, material stress
    d0_bar: np.ndarray      # (ne, nq, d)
    A: np.ndarray           # (ne, nq, npack, npack)
    A_lhs: np.ndarray
    e: np.ndarray           # (ne, nq, d, npack)
    d: np.ndarray           # (ne, nq, d, d)
    Smap: np.ndarray        # (ne, nq, npack, nskew): s -> Mandel(sym(skw(s).tau0))
    N: np.ndarray           # (ne, nq, nskew, nskew)


def compute_quadrature_state(
    edata, law, F0, phi_coeffs, tau_coeffs, simplified_tangent=False
):
    """Evaluate moduli, history stress and geometric terms at all points.

    ``F0`` is the accumulated deformation gradient at the quadrature
    points, ``phi_coeffs`` the total potential in W on the current mesh,
    ``tau_coeffs`` the previous stress in Sigma (may be None for a
    stress-free state).
    """
    spaces = edata.spaces
    mesh = spaces.mesh
    dim = mesh.dim
    np_ = npack(dim)

    grad_phi = np.einsum("eiqd,ei->eqd", edata.Wgrad, phi_coeffs[spaces.W.elem_dofs])
    e_spatial = -grad_phi
    E = np.einsum("eqji,eqj->eqi", F0, e_spatial)  # E = F0^T e
    C = np.einsum("eqki,eqkj->eqij", F0, F0)
    J0 = np.linalg.det(F0)
    if np.any(J0 <= 0):
        raise InvertedStateError("accumulated deformation gradient not orientation-preserving")

    pkg = law.material_tangent(C, E)
    spat = push_forward(F0, J0, pkg)

    if tau_coeffs is None:
        tau0_m = np.zeros(edata.Sm.shape[0:1] + edata.Sm.shape[2:4])
    else:
        tau0_m = np.einsum("eiqc,ei->eqc", edata.Sm, tau_coeffs[spaces.S.elem_dofs])
    tau0 = mandel_to_sym(tau0_m)

    # geometric augmentation G: eps -> sym(eps . tau0) in Mandel form
    B = _mandel_basis_tensors(dim)
    w = mandel_weights(dim)
    pairs = _SYM_PAIRS[dim]
    M = 0.5 * (
        np.einsum("bij,eqjk->eqbik", B, tau0)
        + np.einsum("eqij,bjk->eqbik", tau0, B)
    )
    G = np.stack([w[c] * M[..., i, j] for c, (i, j) in enumerate(pairs)], axis=-1)
    G = np.swapaxes(G, -1, -2)  # (ne, nq, npack(row), npack(col))

    cbar = spat.c + G
    try:
        A = np.linalg.inv(cbar)
    except np.linalg.LinAlgError as exc:
        bad = int(np.argmin(np.abs(np.linalg.det(cbar)).min(axis=1)))
        raise SingularModuliError(bad) from exc
    if simplified_tangent:
        try:
            A_lhs = np.linalg.inv(spat.c)
        except np.linalg.LinAlgError as exc:
            bad = int(np.argmin(np.abs(np.linalg.det(spat.c)).min(axis=1)))
            raise SingularModuliError(bad) from exc
    else:
        A_lhs = A

    K = skew_basis(dim)
    Msk = np.einsum("aij,eqjl->eqail", K, tau0)
    Msk = 0.5 * (Msk + np.swapaxes(Msk, -1, -2))
    Smap = np.stack(
        [w[c] * Msk[..., i, j] for c, (i, j) in enumerate(pairs)], axis=-2
    )  # (ne, nq, npack, nskew)
    N = np.einsum("bij,eqjk,aik->eqab", K, tau0, K)

    tau0_bar_m = np.stack(
        [w[c] * spat.tau0[..., i, j] for c, (i, j) in enumerate(pairs)], axis=-1
    )
    return QuadratureState(
        F0=F0, J0=J0, tau0=tau0, tau0_bar=tau0_bar_m, d0_bar=spat.d0,
        A=A, A_lhs=A_lhs, e=spat.e, d=spat.d, Smap=Smap, N=N,
    )


@dataclass
class LinearizedSystem:
    K: sp.csr_matrix
    rhs: np.ndarray
    n_u: int
    n_tau: int
    n_phi: int
    constrained: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    values: np.ndarray = field(default_factory=lambda: np.array([]))

    @property
    def slices(self):
        return (
            slice(0, self.n_u),
            slice(self.n_u, self.n_u + self.n_tau),
            slice(self.n_u + self.n_tau, self.n_u + self.n_tau + self.n_phi),
        )


def _scatter(blocks, rows_map, cols_map, row_off, col_off, data, rows, cols):
    ne, nr, nc = blocks.shape
    r = np.repeat(rows_map, nc, axis=1) + row_off
    c = np.tile(cols_map, (1, nr)) + col_off
    data.append(blocks.reshape(-1))
    rows.append(r.reshape(-1))
    cols.append(c.reshape(-1))


def assemble_update_system(
    edata,
    qstate,
    volume_force=None,
    stabilization=True,
    boundary_un=None,
):
    """Assemble the full linearized update system.

    Parameters
    ----------
    edata : ElementData
        Basis evaluations on the current geometry.
    qstate : QuadratureState
        Moduli, history stress and geometric terms.
    volume_force : ndarray or None
        Constant spatial force density f (applied as (1/J0) f in the
        displacement equation and in the stabilization right-hand side).
    stabilization : bool
        Include the element-wise -h_T^2 div tau . div dtau term.
    boundary_un : list of (facet ids, callable) or None
        Prescribed normal displacement data on 'fixed' boundaries with
        inhomogeneous data; adds int dtau_nn u_bar.n on those facets.
        The callable receives the facet quadrature points, or
        ``(points, element)`` when it takes two arguments.
    """
    spaces = edata.spaces
    mesh = spaces.mesh
    qw = edata.qw
    A, AL = qstate.A, qstate.A_lhs

    n_u, n_tau, n_phi = spaces.V.ndof, spaces.S.ndof, spaces.W.ndof
    off_u, off_tau, off_phi = 0, n_u, n_u + n_tau
    Vmap, Smapd, Wmap = spaces.V.elem_dofs, spaces.S.elem_dofs, spaces.W.elem_dofs

    Sm, Veps, Vskw, Wg = edata.Sm, edata.Veps, edata.Vskw, edata.Wgrad
    SmapT = qstate.Smap  # (ne, nq, npack, nskew)
    WV = np.einsum("eqck,eiqk->eiqc", SmapT, Vskw)  # Mandel of sym(skw(du).tau0)

    data, rows, cols = [], [], []

    # --- tau-tau: -int dtau A tau (and stabilization)
    Ktt = -np.einsum("eq,eiqa,eqab,ejqb->eij", qw, Sm, AL, Sm, optimize=True)
    if stabilization:
        h2 = mesh.h[:, None] ** 2
        Ktt -= np.einsum(
            "eq,eiqd,ejqd->eij", qw * h2, edata.Sdiv, edata.Sdiv, optimize=True
        )
    _scatter(Ktt, Smapd, Smapd, off_tau, off_tau, data, rows, cols)

    # --- tau-phi: -int dtau A e^T grad(phi); symmetric transpose for phi-tau
    Ktp = -np.einsum("eq,eiqa,eqab,eqdb,ejqd->eij", qw, Sm, AL, qstate.e, Wg,
                     optimize=True)
    _scatter(Ktp, Smapd, Wmap, off_tau, off_phi, data, rows, cols)
    _scatter(np.swapaxes(Ktp, 1, 2), Wmap, Smapd, off_phi, off_tau, data, rows, cols)

    # --- phi-phi: +int grad(dphi) (d - e A e^T) grad(phi)
    dd = qstate.d - np.einsum("eqab,eqbc,eqdc->eqad", qstate.e, AL, qstate.e,
                              optimize=True)
    Kpp = np.einsum("eq,eiqa,eqab,ejqb->eij", qw, Wg, dd, Wg, optimize=True)
    _scatter(Kpp, Wmap, Wmap, off_phi, off_phi, data, rows, cols)

    # --- pairing <eps(u), dtau> = int tau:eps - sum_f int tau_nn u.n
    P = np.einsum("eq,eiqa,ejqa->eij", qw, Sm, Veps, optimize=True)
    P -= np.einsum("elq,eliq,eljq->eij", edata.fw, edata.Snn, edata.Vn,
                   optimize=True)
    # --- tau-u: pairing + geometric +int dtau A sym(skw(du) tau0)
    Ktu = P + np.einsum("eq,eiqa,eqab,ejqb->eij", qw, Sm, AL, WV, optimize=True)
    _scatter(Ktu, Smapd, Vmap, off_tau, off_u, data, rows, cols)
    _scatter(np.swapaxes(Ktu, 1, 2), Vmap, Smapd, off_u, off_tau, data, rows, cols)

    # --- phi-u: +int grad(dphi) e A sym(skw(du) tau0); and transpose
    Kpu = np.einsum("eq,eiqd,eqda,eqab,ejqb->eij", qw, Wg, qstate.e, AL, WV,
                    optimize=True)
    _scatter(Kpu, Wmap, Vmap, off_phi, off_u, data, rows, cols)
    _scatter(np.swapaxes(Kpu, 1, 2), Vmap, Wmap, off_u, off_phi, data, rows, cols)

    # --- u-u: -int (skw(du).tau0):skw(ddu) - int W(ddu) A W(du)
    Kuu = -np.einsum("eq,eiqa,eqab,ejqb->eij", qw, Vskw, qstate.N, Vskw,
                     optimize=True)
    Kuu -= np.einsum("eq,eiqa,eqab,ejqb->eij", qw, WV, AL, WV, optimize=True)
    _scatter(Kuu, Vmap, Vmap, off_u, off_u, data, rows, cols)

    # --- right-hand side
    ndof = n_u + n_tau + n_phi
    rhs = np.zeros(ndof)
    tb = qstate.tau0_bar
    r_tau = -np.einsum("eq,eiqa,eqab,eqb->ei", qw, Sm, A, tb, optimize=True)
    r_u = np.einsum("eq,eiqa,eqab,eqb->ei", qw, WV, A, tb, optimize=True)
    r_phi = -np.einsum(
        "eq,eiqa,eqa->ei", qw, Wg,
        qstate.d0_bar + np.einsum("eqab,eqbc,eqc->eqa", qstate.e, A, tb,
                                  optimize=True),
        optimize=True,
    )
    if volume_force is not None:
        f = np.asarray(volume_force, dtype=float)
        fj = f[None, None, :] / qstate.J0[..., None]
        r_u += np.einsum("eq,eiqd,eqd->ei", qw, edata.Vval, fj, optimize=True)
        if stabilization:
            h2 = mesh.h[:, None] ** 2
            r_tau += np.einsum("eq,eiqd,eqd->ei", qw * h2, edata.Sdiv, fj,
                               optimize=True)
    np.add.at(rhs, (Smapd + off_tau).reshape(-1), r_tau.reshape(-1))
    np.add.at(rhs, (Vmap + off_u).reshape(-1), r_u.reshape(-1))
    np.add.at(rhs, (Wmap + off_phi).reshape(-1), r_phi.reshape(-1))

    if boundary_un:
        _add_boundary_un(edata, boundary_un, rhs, off_tau)

    K = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof),
    ).tocsr()
    return LinearizedSystem(K=K, rhs=rhs, n_u=n_u, n_tau=n_tau, n_phi=n_phi)


def _eval_facet_data(func, qp, e):
    """Call boundary data as func(qp) or func(qp, e) depending on arity."""
    try:
        npos = sum(
            p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)
            for p in inspect.signature(func).parameters.values()
        )
    except (TypeError, ValueError):
        npos = 1
    return func(qp, e) if npos >= 2 else func(qp)


def _add_boundary_un(edata, boundary_un, rhs, off_tau):
    """RHS term -int_gamma dtau_nn (u_bar . n) for prescribed boundary data.

    Together with the boundary part -int dtau_nn u.n kept inside the
    pairing on the left, the dtau equation weakly enforces u.n = u_bar.n
    on the tagged facets.
    """
    spaces = edata.spaces
    mesh = spaces.mesh
    for fids, func in boundary_un:
        fidset = set(int(f) for f in fids)
        for e in range(mesh.num_elements):
            for lf, f in enumerate(mesh.elem_facets[e]):
                if f not in fidset or mesh.facet_elems[f][1] != -1:
                    continue
                qp = edata.fpts[e, lf]
                n = edata.fnormal[e, lf]
                ubar_n = _eval_facet_data(func, qp, e) @ n
                contrib = -np.einsum(
                    "iq,q,q->i", edata.Snn[e, lf], edata.fw[e, lf], ubar_n
                )
                np.add.at(rhs, spaces.S.elem_dofs[e] + off_tau, contrib)


def assemble_small_strain(
    edata, law, volume_force=None, stabilization=False, boundary_un=None
):
    """Linear small-strain electro-elastic system at the reference state."""
    spaces = edata.spaces
    mesh = spaces.mesh
    ne = mesh.num_elements
    nq = edata.qw.shape[1]
    dim = mesh.dim
    F0 = np.broadcast_to(np.eye(dim), (ne, nq, dim, dim)).copy()
    phi0 = np.zeros(spaces.W.ndof)
    qstate = compute_quadrature_state(edata, law, F0, phi0, None)
    return assemble_update_system(
        edata, qstate, volume_force=volume_force, stabilization=stabilization,
        boundary_un=boundary_un,
    )


def apply_bcs(system, dofs, values):
    """Constrain dofs to values by symmetric elimination with RHS correction.

    ``dofs`` are global indices in the combined (u | tau | phi) vector.
    The constrained rows/columns are zeroed, the diagonal set to 1 and
    the RHS adjusted so the reduced system stays symmetric.
    """
    dofs = np.asarray(dofs, dtype=int)
    values = np.asarray(values, dtype=float)
    if len(dofs) != len(values):
        raise AssemblyError("dof/value length mismatch")
    if len(np.unique(dofs)) != len(dofs):
        # conflicting prescriptions are allowed only when values agree
        order = np.argsort(dofs)
        ds, vs = dofs[order], values[order]
        same = ds[1:] == ds[:-1]
        if np.any(same & (np.abs(vs[1:] - vs[:-1]) > 1e-12 * (1 + np.abs(vs[1:])))):
            raise AssemblyError("conflicting prescribed values on a dof")
        keep = np.concatenate([[True], ~same])
        dofs, values = ds[keep], vs[keep]
    K = system.K
    ndof = K.shape[0]
    x = np.zeros(ndof)
    x[dofs] = values
    system.rhs -= K @ x
    mask = np.ones(ndof, dtype=bool)
    mask[dofs] = False
    # zero rows and columns, unit diagonal
    D = sp.diags(mask.astype(float))
    K = D @ K @ D + sp.diags((~mask).astype(float))
    system.K = K.tocsr()
    system.rhs[dofs] = values
    system.constrained = dofs
    system.values = values


def pairing_apply(edata, tau_coeffs, u_coeffs, form=1):
    """Evaluate the distributional pairing <tau, eps(u)> in either form.

    form=1: sum_T ( int_T tau : eps(u) - int_dT tau_nn u.n )
    form=2: -sum_T ( int_T div tau . u - int_dT tau_nt . u_t )
    """
    spaces = edata.spaces
    mesh = spaces.mesh
    tau_l = tau_coeffs[spaces.S.elem_dofs]
    u_l = u_coeffs[spaces.V.elem_dofs]
    if form == 1:
        vol = np.einsum("eq,eiqa,ei,ejqa,ej->", edata.qw, edata.Sm, tau_l,
                        edata.Veps, u_l, optimize=True)
        srf = np.einsum("elq,eliq,ei,eljq,ej->", edata.fw, edata.Snn, tau_l,
                        edata.Vn, u_l, optimize=True)
        return float(vol - srf)
    if form == 2:
        vol = np.einsum("eq,eiqd,ei,ejqd,ej->", edata.qw, edata.Sdiv, tau_l,
                        edata.Vval, u_l, optimize=True)
        srf = 0.0
        # tangential stress vector against tangential displacement per facet
        Scoeffs, Scen, Sh = stacked_basis(spaces.S)
        Vcoeffs, Vcen, Vh = stacked_basis(spaces.V)
        pairs = _SYM_PAIRS[mesh.dim]
        for e in range(mesh.num_elements):
            for lf in range(mesh.dim + 1):
                qp = edata.fpts[e, lf]
                n = edata.fnormal[e, lf]
                xi = (qp - Scen[e]) / Sh[e]
                raw = np.einsum(
                    "icm,qm->iqc", Scoeffs[e], eval_monomials(xi, spaces.S.expts)
                )
                sig = np.einsum("i,iqc->qc", tau_l[e], raw)
                full = np.zeros((len(qp), mesh.dim, mesh.dim))
                for c, (i, j) in enumerate(pairs):
                    full[:, i, j] += sig[:, c]
                    if i != j:
                        full[:, j, i] += sig[:, c]
                sn = full @ n
                snt = sn - np.outer(sn @ n, n)
                xi = (qp - Vcen[e]) / Vh[e]
                vv = np.einsum(
                    "icm,qm->iqc", Vcoeffs[e], eval_monomials(xi, spaces.V.expts)
                )
                u = np.einsum("i,iqc->qc", u_l[e], vv)
                ut = u - np.outer(u @ n, n)
                srf += np.sum(edata.fw[e, lf] * np.sum(snt * ut, axis=1))
        return float(-(vol - srf))
    raise ValueError("form must be 1 or 2")


def compute_skew_residual(edata, qstate, u_coeffs, tau_coeffs, phi_coeffs):
    """Quadrature-point skew stress of the linearized split and its norms.

    Returns (tau_skw at points (ne, nq, d, d), ‖tau_skw‖_L2, ‖tau_sym‖_L2).
    """
    spaces = edata.spaces
    dim = spaces.mesh.dim
    s = np.einsum("eiqk,ei->eqk", edata.Vskw, u_coeffs[spaces.V.elem_dofs])
    tau_m = np.einsum("eiqa,ei->eqa", edata.Sm, tau_coeffs[spaces.S.elem_dofs])
    gphi = np.einsum("eiqd,ei->eqd", edata.Wgrad, phi_coeffs[spaces.W.elem_dofs])
    inner = tau_m - qstate.tau0_bar - np.einsum("eqak,eqk->eqa", qstate.Smap, s)
    inner += np.einsum("eqda,eqd->eqa", qstate.e, gphi)
    eps_like = np.einsum("eqab,eqb->eqa", qstate.A, inner)
    K = skew_basis(dim)
    total = np.einsum("eqk,kij->eqij", s, K) + mandel_to_sym(eps_like)
    prod = np.einsum("eqij,eqjk->eqik", total, qstate.tau0)
    tau_skw = 0.5 * (prod - np.swapaxes(prod, -1, -2))
    tau_sym = mandel_to_sym(tau_m)
    nskw = np.sqrt(np.einsum("eq,eqij,eqij->", edata.qw, tau_skw, tau_skw))
    nsym = np.sqrt(np.einsum("eq,eqij,eqij->", edata.qw, tau_sym, tau_sym))
    return tau_skw, float(nskw), float(nsym)
