"""Command line front end: solve scenarios, verify, study convergence.

Subcommands
-----------
solve        run the load schedule of a scenario, write a report and a
             VTK file per converged load step
verify       run one of the built-in verification suites
convergence  refinement study on a structured-generator scenario
info         mesh statistics and dof counts without solving

The environment variable ``TDNNS_NUM_THREADS`` (if set) is forwarded to
the BLAS thread-count variables before numpy gets imported by a solve.
"""

from __future__ import annotations

import argparse
import os
import sys


def _apply_thread_env():
    n = os.environ.get("TDNNS_NUM_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


_apply_thread_env()

import numpy as np  # noqa: E402

from .materials import fd_oracle, make_law  # noqa: E402
from .mesh import generate_structured  # noqa: E402
from .scenario import ScenarioError, load_scenario, dump_scenario  # noqa: E402
from .solver import (  # noqa: E402
    DeformationState,
    ProbeSet,
    SolverError,
    run_load_stepping,
)
from .spaces import SpaceSet  # noqa: E402
from .vtk_io import write_vtk  # noqa: E402


def _build_state(sc, order=None):
    k = order if order is not None else sc.order
    state = DeformationState(sc.mesh, sc.law, k=k)
    return state


def cmd_solve(args):
    sc = load_scenario(args.config)
    outdir = args.out or sc.output_dir
    os.makedirs(outdir, exist_ok=True)
    print(dump_scenario(sc), end="")
    schedule = sc.voltage_schedule()
    if args.max_steps is not None:
        schedule = schedule[: args.max_steps]
    state = _build_state(sc, args.order)
    probes = ProbeSet(sc.mesh, sc.probe_points)
    report_path = os.path.join(outdir, "report.jsonl")
    total = 0
    with open(report_path, "w") as fh:
        for i, entry in enumerate(schedule):
            rep = run_load_stepping(
                state, sc.boundary, [entry],
                volume_force=sc.volume_force,
                stabilization=sc.stabilization,
                simplified_tangent=sc.simplified_tangent,
                probes=probes,
                report_fh=fh,
            )
            total += rep.total_iterations()
            for r in rep.steps:
                print(f"step {i}: V={r.voltage:g} "
                      f"iterations={r.iterations} halvings={r.halvings}")
            write_vtk(state, os.path.join(outdir, f"state_{i:03d}.vtk"))
    print(f"total Newton iterations: {total}")
    print(f"report: {report_path}")
    return 0


def _suite_tangent():
    rng = np.random.default_rng(42)
    worst = 0.0
    cases = [
        (make_law("neo-hookean-coupled", mu=5.0, lam=20.0 / 3.0,
                  c1=10.0, c2=6.0), 1.0, 1e-4, None),
        # smaller C-step: the lambda-dominated energy makes the truncation
        # error of the stress difference scale like lambda * h^2
        (make_law("neo-hookean-dielectric", mu=20689.0, lam=1e8, chi=3.7),
         1e7, 3e-5, 3e6),
    ]
    for law, emag, h, h_E in cases:
        for trial in range(20):
            dim = 2 if trial % 2 else 3
            A = rng.uniform(-0.2, 0.2, (dim, dim))
            C = (np.eye(dim) + A).T @ (np.eye(dim) + A)
            E = rng.uniform(-emag, emag, dim)
            ana = law.material_tangent(C, E)
            fd = fd_oracle(law, C, E, h, h_E=h_E)
            for name in ("T", "D", "C4", "E3", "Dmat"):
                a, b = getattr(ana, name), getattr(fd, name)
                den = max(np.abs(a).max(), np.abs(b).max(), 1e-30)
                worst = max(worst, np.abs(a - b).max() / den)
    print(f"tangent suite: max relative error {worst:.3e}")
    return worst < 1e-6


def _suite_patch():
    from scipy.sparse.linalg import splu

    from .assembly import ElementData, apply_bcs, assemble_small_strain

    law = make_law("neo-hookean-coupled", mu=5.0, lam=20.0 / 3.0,
                   c1=10.0, c2=6.0)
    mesh = generate_structured(
        "rectangle", (1.0, 1.0), (2, 2),
        tags={"all": ("x0", "x1", "y0", "y1")})
    worst = 0.0
    for k in (1, 2):
        spaces = SpaceSet(mesh, k)
        ed = ElementData(spaces)
        Amat = np.array([[0.3, 0.1], [0.05, -0.2]])

        def ubar(pts):
            return pts @ Amat.T

        system = assemble_small_strain(
            ed, law, boundary_un=[(mesh.boundary_facets(), ubar)])
        vd = spaces.V.dofs_on_tag("all")
        uvals = spaces.V.interpolate(ubar)
        dofs = np.concatenate([
            vd, system.n_u + system.n_tau + np.arange(system.n_phi)])
        vals = np.concatenate([uvals[vd], np.zeros(system.n_phi)])
        apply_bcs(system, dofs, vals)
        x = splu(system.K.tocsc()).solve(system.rhs)
        tau = x[system.slices[1]]
        tm = np.einsum("eiqa,ei->eqa", ed.Sm, tau[spaces.S.elem_dofs])
        worst = max(worst, np.abs(tm - tm.mean(axis=(0, 1))).max()
                    / np.abs(tm).max())
    print(f"patch suite: max stress spread {worst:.3e}")
    return worst < 1e-10


def _suite_pairing():
    from .assembly import ElementData, pairing_apply
    from .mesh import Mesh

    mesh = Mesh(
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        np.array([[0, 1, 2], [0, 2, 3]]))
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in (1, 2):
        spaces = SpaceSet(mesh, k)
        ed = ElementData(spaces, qdeg=2 * k + 4, fdeg=2 * k + 4)
        for _ in range(10):
            tc = rng.standard_normal(spaces.S.ndof)
            uc = rng.standard_normal(spaces.V.ndof)
            p1 = pairing_apply(ed, tc, uc, form=1)
            p2 = pairing_apply(ed, tc, uc, form=2)
            worst = max(worst, abs(p1 - p2) / max(abs(p1), 1e-14))
    print(f"pairing suite: max relative mismatch {worst:.3e}")
    return worst < 1e-12


_SUITES = {
    "tangent": _suite_tangent,
    "patch": _suite_patch,
    "pairing": _suite_pairing,
}


def cmd_verify(args):
    names = list(_SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        passed = _SUITES[name]()
        print(f"suite {name}: {'PASS' if passed else 'FAIL'}")
        ok &= passed
    return 0 if ok else 1


def cmd_convergence(args):
    sc = load_scenario(args.config)
    if "generate" not in sc.mesh_source:
        print("convergence requires a structured-generator mesh", file=sys.stderr)
        return 1
    if not sc.probe_points:
        print("convergence requires at least one probe point", file=sys.stderr)
        return 1
    kind = sc.mesh_source["generate"].strip()
    extents = tuple(float(t) for t in sc.mesh_source["extents"].split())
    base = tuple(int(t) for t in sc.mesh_source["subdivisions"].split())
    tags = {}
    for item in sc.mesh_source.get("tags", "").split():
        name, where = item.split(":", 1)
        tags[name] = tuple(where.split(",")) if "," in where else where
    schedule = sc.voltage_schedule()
    if args.max_steps is not None:
        schedule = schedule[: args.max_steps]
    k = args.order if args.order is not None else sc.order
    levels = 3
    results = []
    for lvl in range(levels):
        sub = tuple(n * 2**lvl for n in base)
        mesh = generate_structured(kind, extents, sub, tags=tags)
        state = DeformationState(mesh, sc.law, k=k)
        probes = ProbeSet(mesh, sc.probe_points)
        rep = run_load_stepping(
            state, sc.boundary, schedule,
            volume_force=sc.volume_force,
            stabilization=sc.stabilization,
            simplified_tangent=sc.simplified_tangent,
            probes=probes,
        )
        u = np.array(rep.steps[-1].probes)
        results.append((sub, mesh.num_elements, u))
        print(f"level {lvl}: subdivisions={sub} elements={mesh.num_elements}")
    ref = results[-1][2]
    print(f"{'level':>5} {'elements':>9} {'probe error':>14}")
    for lvl, (sub, ne, u) in enumerate(results[:-1]):
        err = np.linalg.norm(u - ref)
        print(f"{lvl:>5} {ne:>9} {err:>14.6e}")
    print(f"{levels - 1:>5} {results[-1][1]:>9} {'(reference)':>14}")
    return 0


def cmd_info(args):
    sc = load_scenario(args.config)
    mesh = sc.mesh
    k = args.order if args.order is not None else sc.order
    spaces = SpaceSet(mesh, k)
    print(f"mesh: dim={mesh.dim} vertices={mesh.num_vertices} "
          f"elements={mesh.num_elements} facets={mesh.num_facets}")
    print(f"element size: h_min={mesh.h.min():.6g} h_max={mesh.h.max():.6g}")
    print(f"tags: {', '.join(sorted(mesh.tag_ids)) or '(none)'}")
    print(f"order k={k}")
    print(f"dofs: V={spaces.V.ndof} Sigma={spaces.S.ndof} W={spaces.W.ndof} "
          f"total={spaces.V.ndof + spaces.S.ndof + spaces.W.ndof}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="tdnns",
        description="Mixed TDNNS solver for electro-active polymers")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run a scenario's load schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--order", type=int, choices=(1, 2))
    p.add_argument("--out")
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", default="all",
                   choices=sorted(_SUITES) + ["all"])
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("convergence", help="refinement study")
    p.add_argument("--config", required=True)
    p.add_argument("--order", type=int, choices=(1, 2))
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("info", help="mesh and dof statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--order", type=int, choices=(1, 2))
    p.set_defaults(func=cmd_info)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, SolverError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
