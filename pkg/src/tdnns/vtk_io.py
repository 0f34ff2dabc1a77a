"""Legacy VTK (ASCII, file version 3.0) output of a deformation state.

One unstructured grid per call: deformed vertex coordinates, the
accumulated displacement and potential as point data, and the stress
components as cell data.  Stress lives in a normal-normal continuous
space whose interior values are genuinely discontinuous across elements,
so it is sampled once per element at the centroid and written as cell
data rather than smoothed to the points.
"""

from __future__ import annotations

import numpy as np

_CELL_TYPE = {2: 5, 3: 10}  # VTK_TRIANGLE, VTK_TETRA


def _fmt(x):
    return f"{float(x):.9g}"


def _von_mises(tau, dim):
    """von Mises equivalent of a raw-packed stress (2D treated as plane)."""
    if dim == 2:
        sxx, syy, sxy = tau
        szz = 0.0
        return np.sqrt(
            0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2)
            + 3.0 * sxy**2
        )
    sxx, syy, szz, syz, sxz, sxy = tau
    return np.sqrt(
        0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2)
        + 3.0 * (sxy**2 + syz**2 + sxz**2)
    )


def write_vtk(state, path, title="tdnns state"):
    """Write the current state of a :class:`DeformationState` to ``path``.

    Point data: ``displacement`` (3-vector, zero-padded in 2D),
    ``potential`` and ``E_magnitude`` (adjacent-element average of
    ``|grad phi|``).  Cell data: ``tau_xx``, ``tau_xy`` and
    ``tau_von_mises`` sampled at element centroids.
    """
    mesh = state.mesh
    spaces = state.spaces
    dim = mesh.dim
    nv = mesh.num_vertices
    ne = mesh.num_elements

    coords = np.zeros((nv, 3))
    coords[:, :dim] = mesh.coords
    disp = np.zeros((nv, 3))
    disp[:, :dim] = np.asarray(state.u_total)[:nv]
    phi = np.asarray(state.phi0)[:nv]

    # |E| averaged from the elements around each vertex (grad phi jumps)
    emag = np.zeros(nv)
    hits = np.zeros(nv)
    for e in range(ne):
        vids = mesh.elems[e]
        gbasis = spaces.W.scalar_gradients(e, mesh.coords[vids])
        grads = np.einsum(
            "i,iqd->qd", state.phi0[spaces.W.elem_dofs[e]], gbasis)
        emag[vids] += np.linalg.norm(grads, axis=1)
        hits[vids] += 1.0
    emag /= np.maximum(hits, 1.0)

    tau_xx = np.zeros(ne)
    tau_xy = np.zeros(ne)
    tau_vm = np.zeros(ne)
    if state.tau0 is not None:
        for e in range(ne):
            cen = mesh.coords[mesh.elems[e]].mean(axis=0)[None, :]
            t = spaces.S.eval_field(e, state.tau0, cen)[0]
            tau_xx[e] = t[0]
            tau_xy[e] = t[-1]  # raw packing puts the xy entry last
            tau_vm[e] = _von_mises(t, dim)

    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} float",
    ]
    for p in coords:
        lines.append(" ".join(_fmt(c) for c in p))
    nloc = dim + 1
    lines.append(f"CELLS {ne} {ne * (nloc + 1)}")
    for conn in mesh.elems:
        lines.append(" ".join([str(nloc)] + [str(int(v)) for v in conn]))
    lines.append(f"CELL_TYPES {ne}")
    lines.extend([str(_CELL_TYPE[dim])] * ne)

    lines.append(f"POINT_DATA {nv}")
    lines.append("VECTORS displacement float")
    for d in disp:
        lines.append(" ".join(_fmt(c) for c in d))
    lines.append("SCALARS potential float 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(_fmt(v) for v in phi)
    lines.append("SCALARS E_magnitude float 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(_fmt(v) for v in emag)

    lines.append(f"CELL_DATA {ne}")
    for name, arr in (
        ("tau_xx", tau_xx),
        ("tau_xy", tau_xy),
        ("tau_von_mises", tau_vm),
    ):
        lines.append(f"SCALARS {name} float 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in arr)

    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_summary(path):
    """Minimal independent re-parse of an emitted file (for verification).

    Returns a dict with point/cell counts and the field names found.
    """
    npoints = ncells = None
    fields = []
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "POINTS":
                npoints = int(tok[1])
            elif tok[0] == "CELLS":
                ncells = int(tok[1])
            elif tok[0] in ("SCALARS", "VECTORS"):
                fields.append(tok[1])
    return {"points": npoints, "cells": ncells, "fields": fields}
