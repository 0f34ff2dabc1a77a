"""Scenario configuration: sectioned key-value files describing a run.

A scenario file is INI-style text with the sections

* ``[mesh]``      -- either ``file = path/to/mesh.msh`` or a structured
  generator spec (``generate``, ``extents``, ``subdivisions``, ``tags``)
* ``[units]``     -- free-text unit system declaration (echoed, not used)
* ``[material]``  -- ``law`` plus the parameters of that law
* ``[boundary]``  -- tag = kind, kinds combined with "+"
  (``fixed``, ``free``, ``electrode``, ``symmetry``)
* ``[schedule]``  -- tag = strictly monotone list of voltages
* ``[solver]``    -- ``order``, ``stabilization``, ``simplified_tangent``,
  ``max_newton``
* ``[loading]``   -- ``volume_force`` vector (perturbation, may be zero)
* ``[probes]``    -- ``points`` = semicolon-separated coordinate tuples
* ``[output]``    -- ``directory``

Only ``[mesh]``, ``[material]`` and ``[boundary]`` are mandatory.
Unknown sections or keys are rejected, never silently ignored.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .materials import make_law
from .mesh import generate_structured, read_gmsh

_LAW_PARAMS = {
    "neo-hookean-coupled": ({"mu", "lam", "c1", "c2"}, set()),
    "neo-hookean-dielectric": ({"mu", "lam", "chi"}, {"eps0"}),
}

_KNOWN_KEYS = {
    "mesh": {"file", "generate", "extents", "subdivisions", "tags"},
    "units": {"system"},
    "material": {"law"},  # law parameters validated separately
    "boundary": None,     # keys are mesh tags
    "schedule": None,     # keys are electrode tags
    "solver": {"order", "stabilization", "simplified_tangent", "max_newton"},
    "loading": {"volume_force"},
    "probes": {"points"},
    "output": {"directory"},
}

_BC_KINDS = {"fixed", "free", "electrode", "symmetry"}


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    """Validated run description together with the loaded mesh and law."""

    mesh_source: dict
    unit_system: str
    law_id: str
    law_params: dict
    boundary: dict
    schedule: dict
    order: int
    stabilization: bool
    simplified_tangent: bool
    max_newton: int
    volume_force: np.ndarray | None
    probe_points: list
    output_dir: str
    mesh: object = field(default=None, repr=False)
    law: object = field(default=None, repr=False)

    def voltage_schedule(self):
        """Per-step voltage targets as a list of tag -> value dicts."""
        if not self.schedule:
            return []
        nstep = max(len(v) for v in self.schedule.values())
        steps = []
        for i in range(nstep):
            steps.append({
                tag: vals[min(i, len(vals) - 1)]
                for tag, vals in self.schedule.items()
            })
        return steps


def _floats(text):
    return [float(tok) for tok in text.replace(",", " ").split()]


def _bool(text, key):
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ScenarioError(f"cannot interpret {key} = {text!r} as a switch")


def _build_mesh(msect, base_dir):
    if "file" in msect:
        extra = set(msect) - {"file"}
        if extra:
            raise ScenarioError(
                f"[mesh] mixes 'file' with generator keys {sorted(extra)}")
        path = msect["file"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return read_gmsh(path), {"file": msect["file"]}
    missing = {"generate", "extents", "subdivisions"} - set(msect)
    if missing:
        raise ScenarioError(f"[mesh] missing keys {sorted(missing)}")
    kind = msect["generate"].strip()
    extents = tuple(_floats(msect["extents"]))
    subdiv = tuple(int(round(v)) for v in _floats(msect["subdivisions"]))
    tags = {}
    for item in msect.get("tags", "").split():
        if ":" not in item:
            raise ScenarioError(f"[mesh] tag entry {item!r} is not name:where")
        name, where = item.split(":", 1)
        tags[name] = tuple(where.split(",")) if "," in where else where
    mesh = generate_structured(kind, extents, subdiv, tags=tags)
    return mesh, dict(msect)


def load_scenario(path):
    """Parse, validate and instantiate a scenario file.

    Raises :class:`ScenarioError` on unknown keys, missing mandatory
    keys, malformed values, or boundary tags absent from the mesh.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    with open(path) as fh:
        cp.read_file(fh, source=path)

    for sect in cp.sections():
        if sect not in _KNOWN_KEYS:
            raise ScenarioError(
                f"unknown section [{sect}]; known: {sorted(_KNOWN_KEYS)}")
        allowed = _KNOWN_KEYS[sect]
        if allowed is not None and sect != "material":
            extra = set(cp[sect]) - allowed
            if extra:
                raise ScenarioError(
                    f"unknown keys {sorted(extra)} in [{sect}]; "
                    f"allowed: {sorted(allowed)}")
    for mandatory in ("mesh", "material", "boundary"):
        if mandatory not in cp:
            raise ScenarioError(f"missing mandatory section [{mandatory}]")

    mesh, mesh_source = _build_mesh(dict(cp["mesh"]), os.path.dirname(path))

    mat = dict(cp["material"])
    law_id = mat.pop("law", None)
    if law_id is None:
        raise ScenarioError("[material] requires a 'law' key")
    law_id = law_id.strip()
    if law_id not in _LAW_PARAMS:
        raise ScenarioError(
            f"unknown material law {law_id!r}; known: {sorted(_LAW_PARAMS)}")
    required, optional = _LAW_PARAMS[law_id]
    extra = set(mat) - required - optional
    if extra:
        raise ScenarioError(
            f"unknown keys {sorted(extra)} in [material] for law {law_id!r}")
    missing = required - set(mat)
    if missing:
        raise ScenarioError(f"[material] missing parameters {sorted(missing)}")
    law_params = {k: float(v) for k, v in mat.items()}
    law = make_law(law_id, **law_params)

    mesh_tags = set(mesh.tag_ids)
    boundary = {}
    for tag, kind in cp["boundary"].items():
        kind = kind.strip()
        if tag not in mesh_tags:
            raise ScenarioError(
                f"boundary tag {tag!r} not present in mesh; "
                f"available tags: {sorted(mesh_tags)}")
        bad = set(kind.split("+")) - _BC_KINDS
        if bad:
            raise ScenarioError(
                f"unknown BC kind(s) {sorted(bad)} on tag {tag!r}")
        boundary[tag] = kind

    schedule = {}
    if "schedule" in cp:
        for tag, text in cp["schedule"].items():
            if tag not in boundary or "electrode" not in boundary[tag]:
                raise ScenarioError(
                    f"[schedule] tag {tag!r} is not an electrode boundary")
            vals = _floats(text)
            if not vals:
                raise ScenarioError(f"[schedule] {tag} has no voltages")
            diffs = np.diff([0.0] + vals)
            if not (np.all(diffs > 0) or np.all(diffs < 0)):
                raise ScenarioError(
                    f"[schedule] {tag} voltages must be strictly monotone "
                    f"starting from 0, got {vals}")
            schedule[tag] = vals

    sol = dict(cp["solver"]) if "solver" in cp else {}
    order = int(sol.get("order", "1"))
    if order not in (1, 2):
        raise ScenarioError(f"order must be 1 or 2, got {order}")
    stabilization = _bool(sol.get("stabilization", "on"), "stabilization")
    simplified = _bool(sol.get("simplified_tangent", "off"),
                       "simplified_tangent")
    max_newton = int(sol.get("max_newton", "25"))

    volume_force = None
    if "loading" in cp and "volume_force" in cp["loading"]:
        vf = np.array(_floats(cp["loading"]["volume_force"]))
        if vf.shape != (mesh.dim,):
            raise ScenarioError(
                f"volume_force needs {mesh.dim} components, got {vf.size}")
        if np.any(vf):
            volume_force = vf

    probe_points = []
    if "probes" in cp and "points" in cp["probes"]:
        for chunk in cp["probes"]["points"].split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            p = _floats(chunk)
            if len(p) != mesh.dim:
                raise ScenarioError(
                    f"probe point {chunk!r} needs {mesh.dim} coordinates")
            probe_points.append(p)

    return Scenario(
        mesh_source=mesh_source,
        unit_system=cp["units"].get("system", "unspecified")
        if "units" in cp else "unspecified",
        law_id=law_id,
        law_params=law_params,
        boundary=boundary,
        schedule=schedule,
        order=order,
        stabilization=stabilization,
        simplified_tangent=simplified,
        max_newton=max_newton,
        volume_force=volume_force,
        probe_points=probe_points,
        output_dir=cp["output"].get("directory", "out")
        if "output" in cp else "out",
        mesh=mesh,
        law=law,
    )


def dump_scenario(sc):
    """Echo a scenario back as config text (round-trips through parsing)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["mesh"] = {k: str(v) for k, v in sc.mesh_source.items()}
    cp["units"] = {"system": sc.unit_system}
    cp["material"] = {"law": sc.law_id}
    for k, v in sc.law_params.items():
        cp["material"][k] = repr(v)
    cp["boundary"] = dict(sc.boundary)
    if sc.schedule:
        cp["schedule"] = {
            tag: " ".join(repr(v) for v in vals)
            for tag, vals in sc.schedule.items()
        }
    cp["solver"] = {
        "order": str(sc.order),
        "stabilization": "on" if sc.stabilization else "off",
        "simplified_tangent": "on" if sc.simplified_tangent else "off",
        "max_newton": str(sc.max_newton),
    }
    if sc.volume_force is not None:
        cp["loading"] = {
            "volume_force": " ".join(repr(v) for v in sc.volume_force)
        }
    if sc.probe_points:
        cp["probes"] = {
            "points": "; ".join(
                " ".join(repr(c) for c in p) for p in sc.probe_points
            )
        }
    cp["output"] = {"directory": sc.output_dir}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
