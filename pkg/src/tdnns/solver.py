"""Updated-Lagrangian Newton driver with voltage load stepping.

Per load increment the linearized mixed system is assembled on the
current geometry and solved; the discontinuous displacement update is
re-interpolated by a continuous field which moves the mesh, the
accumulated deformation gradient is updated multiplicatively
(F0 <- (I + grad Pi u) F0), and the stress coefficients are adopted as
the new history stress.  The iteration stops when the interpolated
update is dominated by the discontinuous remainder (factor 10), i.e.
when the discretization error dominates the nonlinear residual.
Failed increments (inverted elements, singular systems, iteration cap)
are retried with halved voltage increments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    AssemblyError, ElementData, apply_bcs, assemble_update_system,
    compute_quadrature_state, compute_skew_residual,
)
from .materials import InvertedStateError
from .mesh import InvertedElementError
from .spaces import SpaceSet, interpolate_to_continuous, l2_norms_of_update


class SolverError(Exception):
    pass


class SingularMatrixError(SolverError):
    pass


class IncrementUnderflowError(SolverError):
    def __init__(self, report, message):
        self.report = report
        super().__init__(message)


def solve_linear(system):
    """Direct solve of the assembled symmetric indefinite system.

    Contract: relative residual below 1e-10 (measured on the
    equilibrated system), otherwise an error is raised.  Sparse LU is
    used; the matrix is a saddle point problem so no positive-definite
    factorization applies.

    The displacement, stress and potential blocks can differ by many
    orders of magnitude when SI units meet the vacuum permittivity, so
    the system is symmetrically equilibrated before factorization.  The
    scale of each row is its largest absolute entry (the diagonal is
    useless here: saddle point rows may have none), and the symmetric
    scaling uses its inverse square root.
    """
    K = system.K.tocsc()
    d = np.abs(K).max(axis=1).toarray().ravel()
    scale = 1.0 / np.sqrt(np.where(d > 0.0, d, 1.0))
    D = sp.diags(scale)
    Ks = (D @ K @ D).tocsc()
    bs = scale * system.rhs
    try:
        lu = spla.splu(Ks)
        y = lu.solve(bs)
        # two rounds of iterative refinement: flat, nearly incompressible
        # elements leave the factorization with a roundoff floor that can
        # exceed the outer iteration's absolute stopping floor
        for _ in range(2):
            y = y + lu.solve(bs - Ks @ y)
    except (RuntimeError, ValueError) as exc:
        raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(y)):
        raise SingularMatrixError("non-finite solution from factorization")
    bnorm = np.linalg.norm(bs)
    if bnorm == 0.0:
        return np.zeros_like(bs)
    # backward-error test: the equilibrated matrix has unit-scale rows,
    # so ‖y‖ is the right yardstick when the rhs is nearly converged out
    res = np.linalg.norm(Ks @ y - bs)
    if res > 1e-10 * (bnorm + np.linalg.norm(y)):
        raise SingularMatrixError(
            f"linear solve residual {res:.3e} exceeds tolerance "
            f"(rhs norm {bnorm:.3e})"
        )
    return scale * y


class DeformationState:
    """Geometry, accumulated fields and quadrature history of the solve."""

    def __init__(self, mesh, law, k, qdeg=None):
        self.mesh = mesh
        self.law = law
        self.spaces = SpaceSet(mesh, k)
        self.edata = ElementData(self.spaces, qdeg=qdeg)
        ne, nq = self.edata.qw.shape
        dim = mesh.dim
        self.F0 = np.broadcast_to(np.eye(dim), (ne, nq, dim, dim)).copy()
        self.J0 = np.ones((ne, nq))
        self.phi0 = np.zeros(self.spaces.W.ndof)
        self.tau0 = None  # Sigma coefficients; None == stress free
        self.u_total = np.zeros((self.spaces.U.num_nodes, dim))
        self.scale = float(np.linalg.norm(mesh.coords.max(axis=0) - mesh.coords.min(axis=0)))

    def quadrature_state(self, simplified_tangent=False):
        return compute_quadrature_state(
            self.edata, self.law, self.F0, self.phi0, self.tau0,
            simplified_tangent=simplified_tangent,
        )


@dataclass
class StepRecord:
    step: int
    voltage: float
    iterations: int
    norms: list          # per iteration: [‖Πu‖, ‖u−Πu‖]
    skew_norms: list     # per iteration: [‖τ^skw‖, ‖τ^sym‖]
    probes: list         # per probe: displacement vector at end of step
    halvings: int = 0

    def to_json(self):
        return json.dumps({
            "step": self.step,
            "voltage": self.voltage,
            "iterations": self.iterations,
            "norms": [[round(a, 12), round(b, 12)] for a, b in self.norms],
            "skew_norms": [[round(a, 14), round(b, 14)] for a, b in self.skew_norms],
            "probes": [[round(float(c), 12) for c in p] for p in self.probes],
            "halvings": self.halvings,
        })


@dataclass
class SolveReport:
    steps: list = field(default_factory=list)

    def write(self, fh):
        for rec in self.steps:
            fh.write(rec.to_json() + "\n")

    def total_iterations(self):
        return sum(r.iterations for r in self.steps)


def resolve_bc_dofs(state, bcs, voltages):
    """Translate tag-level BCs into constrained global dofs and values.

    ``bcs`` maps tag -> kind.  Kinds: "fixed" (tangential displacement
    clamped, normal displacement enforced weakly), "free" (zero normal
    stress), "symmetry" (nothing constrained: u.n = 0 weakly, zero
    tangential traction naturally), "electrode" (potential prescribed;
    mechanically free unless combined).  Kinds combine with "+", e.g.
    "fixed+electrode".  ``voltages`` maps electrode tags to target total
    voltages; the constrained value of the potential increment is target
    minus the accumulated potential at each node.
    """
    spaces = state.spaces
    n_u, n_tau = spaces.V.ndof, spaces.S.ndof
    dofs, values = [], []
    restore = None
    for tag, kind in bcs.items():
        parts = set(kind.split("+"))
        unknown = parts - {"fixed", "free", "electrode", "symmetry"}
        if unknown:
            raise SolverError(f"unknown BC kind {kind!r} on tag {tag!r}")
        if "fixed" in parts and "free" in parts:
            raise SolverError(f"tag {tag!r} cannot be both fixed and free")
        if parts == {"electrode"}:
            parts.add("free")
        if "fixed" in parts:
            d = spaces.V.dofs_on_tag(tag)
            dofs.extend(d)
            # prescribe the increment that returns the (interpolation-
            # shifted) boundary to its original position, not zero: the
            # constraint must not drift with the accumulated state
            if restore is None:
                restore = spaces.V.interpolate(
                    lambda e, pts: -spaces.U.eval_vector_field(
                        e, state.u_total, pts),
                    elementwise=True,
                ) if np.any(state.u_total) else np.zeros(spaces.V.ndof)
            values.extend(restore[d])
        if "free" in parts:
            d = spaces.S.dofs_on_tag(tag) + n_u
            dofs.extend(d)
            values.extend(np.zeros(len(d)))
        if "electrode" in parts:
            nodes = spaces.W.nodes_on_tag(tag)
            target = voltages.get(tag, 0.0)
            dofs.extend(nodes + n_u + n_tau)
            values.extend(target - state.phi0[nodes])
    if not any(d >= n_u + n_tau for d in dofs):
        # no electrode anywhere: the potential is determined only up to a
        # constant, so ground an arbitrary node
        dofs.append(n_u + n_tau)
        values.append(0.0)
    return np.array(dofs, dtype=int), np.array(values)


def _restoring_boundary_data(state, bcs):
    """Weak u.n data pulling fixed/symmetry boundaries back to their
    original surfaces (the accumulated interpolation shift would otherwise
    accumulate freely, since increments are only constrained relative to
    the current geometry)."""
    fids = []
    for tag, kind in bcs.items():
        parts = set(kind.split("+"))
        if "fixed" in parts or "symmetry" in parts:
            fids.extend(int(f) for f in state.mesh.boundary_facets(tag))
    if not fids or not np.any(state.u_total):
        return None
    spaces = state.spaces

    def ubar(pts, e):
        return -spaces.U.eval_vector_field(e, state.u_total, pts)

    return [(fids, ubar)]


def _constrain_interpolant(state, bcs, pin):
    """Pin the mesh-motion interpolant to the geometric boundary data.

    The discontinuous solve controls the boundary displacement only
    weakly (through the normal-normal stress test functions), which is
    not enough for the *mesh motion*: projected vertex updates would
    walk constrained vertices off fixed positions or symmetry planes,
    and the resulting drift feeds back through the re-interpolation as
    a growing mode.  Fixed vertices are returned to their original
    position exactly; symmetry vertices keep only their in-plane motion
    (the plane normal taken from the current, essentially undrifted,
    boundary facets).
    """
    spaces = state.spaces
    mesh = state.mesh
    ut = state.u_total
    for tag, kind in bcs.items():
        parts = set(kind.split("+"))
        if "fixed" in parts:
            nodes = spaces.U.nodes_on_tag(tag)
            pin[nodes] = -ut[nodes]
        elif "symmetry" in parts:
            normals = {}
            counts = {}
            for fid in mesh.boundary_facets(tag):
                n = mesh.facet_normal(fid)
                for v in mesh.facet_verts[fid]:
                    v = int(v)
                    normals[v] = normals.get(v, 0.0) + n
                    counts[v] = counts.get(v, 0) + 1
            for v, nsum in normals.items():
                n = nsum / np.linalg.norm(nsum)
                pin[v] -= (pin[v] @ n + ut[v] @ n) * n
    return pin


def newton_step(state, bcs, voltages, volume_force=None, stabilization=True,
                simplified_tangent=False):
    """One assembly + solve on the current geometry.

    Returns (u_coeffs, tau_coeffs, phi_coeffs, pi_nodal, norms, skew_norms).
    """
    qstate = state.quadrature_state(simplified_tangent=simplified_tangent)
    boundary_un = _restoring_boundary_data(state, bcs)
    system = assemble_update_system(
        state.edata, qstate, volume_force=volume_force,
        stabilization=stabilization, boundary_un=boundary_un,
    )
    dofs, values = resolve_bc_dofs(state, bcs, voltages)
    apply_bcs(system, dofs, values)
    x = solve_linear(system)
    su, st, sp = system.slices
    u, tau, phi = x[su], x[st], x[sp]
    pi_nodal = interpolate_to_continuous(state.spaces.V, u, state.spaces.U)
    pi_nodal = _constrain_interpolant(state, bcs, pi_nodal)
    norms = l2_norms_of_update(state.spaces, u, pi_nodal)
    _, nskw, nsym = compute_skew_residual(state.edata, qstate, u, tau, phi)
    return u, tau, phi, pi_nodal, norms, (nskw, nsym)


def stop_check(norms, scale):
    """Factor-of-10 dominance rule with an absolute floor."""
    n_pi, n_jump = norms
    total = np.hypot(n_pi, n_jump)
    if total <= 1e-14 * scale:
        return True
    return n_pi <= 0.1 * n_jump


def accept_update(state, u, tau, phi, pi_nodal, relax=1.0):
    """Move the mesh by the continuous interpolant and transfer state.

    ``relax`` scales the whole state transfer (mesh motion, potential and
    stress adoption).  A value below one damps the outer fixed-point map
    without changing its fixed point; the driver engages it when
    successive mesh updates reverse direction, which happens through a
    slowly decaying sign-alternating mode carried by vertices sliding
    tangentially along free curved boundaries.

    On an inverted element the mesh module rolls the coordinates back
    and the error propagates to the caller, which cuts the increment.
    """
    spaces = state.spaces
    mesh = state.mesh
    if not np.any(pi_nodal) and not np.any(phi) and tau is None:
        return
    if relax != 1.0:
        pi_nodal = relax * pi_nodal
        phi = relax * phi
        tau = (1.0 - relax) * state.tau0 + relax * tau \
            if state.tau0 is not None else tau
    # gradient of the continuous update at the (pre-move) quadrature points
    grad_pi = np.stack([
        spaces.U.eval_vector_gradient(e, pi_nodal, state.edata.qp[e])
        for e in range(mesh.num_elements)
    ])
    dim = mesh.dim
    F_delta = np.broadcast_to(np.eye(dim), grad_pi.shape) + grad_pi
    F0_new = np.einsum("eqij,eqjk->eqik", F_delta, state.F0)
    J0_new = np.linalg.det(F0_new)
    if np.any(J0_new <= 0):
        bad = int(np.argwhere(J0_new <= 0)[0][0])
        raise InvertedElementError(bad)
    vertex_disp = pi_nodal[: mesh.num_vertices]
    mesh.move_vertices(vertex_disp)  # raises + rolls back on inversion
    state.F0 = F0_new
    state.J0 = J0_new
    state.phi0 = state.phi0 + phi
    state.tau0 = tau.copy()
    state.u_total = state.u_total + pi_nodal
    spaces.rebuild()
    state.edata = ElementData(spaces, qdeg=state.edata.qdeg)


class ProbeSet:
    """Material points tracked through the deformation.

    Each probe is located once in the initial mesh (element + reference
    coordinates); its displacement is read from the accumulated
    continuous displacement field at the convected location.
    """

    def __init__(self, mesh, points):
        self.items = []
        pts = np.atleast_2d(np.asarray(points, dtype=float)) if len(points) else []
        for p in pts:
            self.items.append(self._locate(mesh, p))

    @staticmethod
    def _locate(mesh, p):
        for e in range(mesh.num_elements):
            verts = mesh.coords[mesh.elems[e]]
            T = (verts[1:] - verts[0]).T
            try:
                ref = np.linalg.solve(T, p - verts[0])
            except np.linalg.LinAlgError:
                continue
            if np.all(ref >= -1e-9) and ref.sum() <= 1 + 1e-9:
                return (e, ref)
        raise SolverError(f"probe point {p} not inside the mesh")

    def displacements(self, state):
        out = []
        for e, ref in self.items:
            verts = state.mesh.coords[state.mesh.elems[e]]
            x = verts[0] + (verts[1:] - verts[0]).T @ ref
            u = state.spaces.U.eval_vector_field(e, state.u_total, x[None, :])[0]
            out.append(u)
        return out


def run_load_stepping(
    state,
    bcs,
    schedule,
    volume_force=None,
    stabilization=True,
    simplified_tangent=False,
    probes=None,
    max_iter=25,
    report_fh=None,
):
    """Ramp electrode voltages through ``schedule`` with Newton iterations.

    ``schedule`` is a list of dicts tag -> voltage (one entry per load
    step, strictly ordered per tag).  Increments are halved on failure
    (inverted element, singular matrix, iteration cap, monotonicity
    breakdown) and doubled back after two clean sub-steps.
    """
    probes = probes if probes is not None else ProbeSet(state.mesh, [])
    report = SolveReport()
    current = {tag: 0.0 for tag, kind in bcs.items()
               if "electrode" in kind.split("+")}
    step_no = 0
    for entry in schedule:
        start = dict(current)
        targets = dict(current)
        targets.update(entry)
        alpha = 1.0
        progress = 0.0
        clean = 0
        halvings = 0
        while progress < 1.0 - 1e-12:
            next_progress = min(progress + alpha, 1.0)
            sub = {
                tag: start[tag] + (targets[tag] - start[tag]) * next_progress
                for tag in current
            }
            ok, rec = _run_one_increment(
                state, bcs, sub, volume_force, stabilization,
                simplified_tangent, probes, max_iter, step_no, halvings,
            )
            if ok:
                progress = next_progress
                current = sub
                step_no += 1
                report.steps.append(rec)
                if report_fh is not None:
                    report_fh.write(rec.to_json() + "\n")
                    report_fh.flush()
                clean += 1
                if clean >= 2 and alpha < 1.0 - 1e-12:
                    alpha = min(2 * alpha, 1.0)
                    clean = 0
            else:
                alpha *= 0.5
                halvings += 1
                clean = 0
                if alpha < 1e-6:
                    raise IncrementUnderflowError(
                        report, "voltage increment underflow after repeated failures"
                    )
    return report


def _snapshot(state):
    return (
        state.mesh.coords.copy(), state.F0.copy(), state.J0.copy(),
        state.phi0.copy(),
        None if state.tau0 is None else state.tau0.copy(),
        state.u_total.copy(),
    )


def _restore(state, snap):
    coords, F0, J0, phi0, tau0, u_total = snap
    delta = coords - state.mesh.coords
    if np.any(delta):
        state.mesh.move_vertices(delta)
        state.spaces.rebuild()
        state.edata = ElementData(state.spaces, qdeg=state.edata.qdeg)
    state.F0, state.J0 = F0, J0
    state.phi0, state.tau0, state.u_total = phi0, tau0, u_total


def _run_one_increment(state, bcs, voltages, volume_force, stabilization,
                       simplified_tangent, probes, max_iter, step_no, halvings):
    snap = _snapshot(state)
    norms_hist = []
    skew_hist = []
    rises = 0
    pin_prev = None
    theta = 1.0
    for it in range(1, max_iter + 1):
        try:
            u, tau, phi, pi_nodal, norms, skew = newton_step(
                state, bcs, voltages, volume_force=volume_force,
                stabilization=stabilization,
                simplified_tangent=simplified_tangent,
            )
        except (SingularMatrixError, InvertedStateError, AssemblyError):
            _restore(state, snap)
            return False, None
        norms_hist.append(list(norms))
        skew_hist.append(list(skew))
        if it > 2 and norms[0] > norms_hist[-2][0] * (1 + 1e-9):
            rises += 1
            if rises > 1:
                _restore(state, snap)
                return False, None
        # damp the state transfer when consecutive mesh updates reverse
        # direction (an alternating slow mode would otherwise need dozens
        # of iterations to clear the stopping threshold)
        pin_flat = pi_nodal.ravel()
        theta = 1.0
        if pin_prev is not None:
            denom = float(pin_prev @ pin_prev)
            if denom > 0.0:
                lam = float(pin_prev @ pin_flat) / denom
                if lam < -0.2:
                    theta = min(max(1.0 / (1.0 - lam), 0.25), 1.0)
                elif 0.5 < lam < 0.99:
                    # slow monotone mode: extrapolate along it (same fixed
                    # point, shorter tail); cap to stay robust against a
                    # noisy rate estimate
                    theta = min(1.0 / (1.0 - lam), 4.0)
        pin_prev = theta * pin_flat
        try:
            accept_update(state, u, tau, phi, pi_nodal, relax=theta)
        except (InvertedElementError, InvertedStateError):
            _restore(state, snap)
            return False, None
        # A freshly applied potential increment only enters the coupling
        # terms after phi0 has been updated, so a vanishing displacement
        # update on the first iteration is not yet evidence of equilibrium.
        phi_ref = max(np.linalg.norm(state.phi0), max(
            (abs(v) for v in voltages.values()), default=0.0))
        settled = it >= 2 or np.linalg.norm(phi) <= 1e-10 * max(phi_ref, 1e-30)
        if settled and stop_check(norms, state.scale):
            rec = StepRecord(
                step=step_no,
                voltage=max(voltages.values(), key=abs) if voltages else 0.0,
                iterations=it,
                norms=norms_hist,
                skew_norms=skew_hist,
                probes=[np.asarray(p) for p in probes.displacements(state)],
                halvings=halvings,
            )
            return True, rec
    _restore(state, snap)
    return False, None
