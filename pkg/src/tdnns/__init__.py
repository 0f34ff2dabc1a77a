"""Mixed TDNNS finite elements for large-deformation electro-elasticity.

The package couples tangentially continuous displacement elements with
normal-normal continuous symmetric stress elements and a standard
continuous potential space, and drives the resulting saddle-point
systems through an updated-Lagrangian Newton/load-stepping loop.
"""

from .assembly import (
    AssemblyError,
    ElementData,
    LinearizedSystem,
    SingularModuliError,
    apply_bcs,
    assemble_small_strain,
    assemble_update_system,
    compute_quadrature_state,
    compute_skew_residual,
    pairing_apply,
)
from .materials import (
    InvertedStateError,
    MaterialLaw,
    NeoHookeanCoupled,
    NeoHookeanDielectric,
    fd_oracle,
    make_law,
    push_forward,
)
from .mesh import (
    InvertedElementError,
    Mesh,
    MeshError,
    generate_structured,
    read_gmsh,
    write_gmsh,
)
from .scenario import Scenario, ScenarioError, dump_scenario, load_scenario
from .solver import (
    DeformationState,
    IncrementUnderflowError,
    ProbeSet,
    SolveReport,
    SolverError,
    StepRecord,
    newton_step,
    run_load_stepping,
)
from .spaces import (
    LagrangeSpace,
    SpaceSet,
    StressNNSpace,
    VectorTangentialSpace,
    build_spaces,
    interpolate_to_continuous,
)
from .vtk_io import write_vtk

__version__ = "0.1.0"

__all__ = [
    "AssemblyError",
    "DeformationState",
    "ElementData",
    "IncrementUnderflowError",
    "InvertedElementError",
    "InvertedStateError",
    "LagrangeSpace",
    "LinearizedSystem",
    "MaterialLaw",
    "Mesh",
    "MeshError",
    "NeoHookeanCoupled",
    "NeoHookeanDielectric",
    "ProbeSet",
    "Scenario",
    "ScenarioError",
    "SingularModuliError",
    "SolveReport",
    "SolverError",
    "SpaceSet",
    "StepRecord",
    "StressNNSpace",
    "VectorTangentialSpace",
    "apply_bcs",
    "assemble_small_strain",
    "assemble_update_system",
    "build_spaces",
    "compute_quadrature_state",
    "compute_skew_residual",
    "dump_scenario",
    "fd_oracle",
    "generate_structured",
    "interpolate_to_continuous",
    "load_scenario",
    "make_law",
    "newton_step",
    "pairing_apply",
    "push_forward",
    "read_gmsh",
    "run_load_stepping",
    "write_gmsh",
    "write_vtk",
]
