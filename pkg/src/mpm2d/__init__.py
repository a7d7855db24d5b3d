"""2D Material Point Method simulation with a pseudo-implicit macro-step
integrator: explicit MLS-MPM substeps feed secant particle targets from
which the macro-step grid velocity field is reconstructed, either by a
closed-form lumped transfer or a full weighted least-squares solve.
"""

from .errors import (
    CflViolationError,
    CgConvergenceError,
    DegenerateDeformationError,
    EmptySystemError,
    MpmError,
    OutOfDomainError,
    SceneValidationError,
)
from .explicit import (
    Particles,
    SimState,
    apic_gather,
    apic_scatter,
    g2p,
    grid_update,
    p2g,
    stable_dt,
    substep,
)
from .kernels import Grid, GridSpec, Stencil, apply_boundary, bspline_weights_1d, stencil
from .materials import Material, Svd2, elastic_energy_density, pk1_fixed_corotated, svd2x2
from .scene import (
    Diagnostics,
    Region,
    SceneConfig,
    build_state,
    compute_diagnostics,
    load_scene,
    parse_config,
    sample_particles,
)
from .secant import (
    LsSystem,
    MacroStepReport,
    SecantTargets,
    assemble_ls_system,
    finish_macro_transfer,
    ls_objective,
    macro_step,
    reconstruct_lumped,
    reconstruct_macro_field,
    run_substeps,
    secant_targets,
    solve_cg,
)
from .driver import FrameResult, run_frames
from .io import diff_runs, read_frame, write_frame

__all__ = [
    "CflViolationError",
    "CgConvergenceError",
    "DegenerateDeformationError",
    "EmptySystemError",
    "MpmError",
    "OutOfDomainError",
    "SceneValidationError",
    "Particles",
    "SimState",
    "apic_gather",
    "apic_scatter",
    "g2p",
    "grid_update",
    "p2g",
    "stable_dt",
    "substep",
    "Grid",
    "GridSpec",
    "Stencil",
    "apply_boundary",
    "bspline_weights_1d",
    "stencil",
    "Material",
    "Svd2",
    "elastic_energy_density",
    "pk1_fixed_corotated",
    "svd2x2",
    "Diagnostics",
    "Region",
    "SceneConfig",
    "build_state",
    "compute_diagnostics",
    "load_scene",
    "parse_config",
    "sample_particles",
    "LsSystem",
    "MacroStepReport",
    "SecantTargets",
    "assemble_ls_system",
    "finish_macro_transfer",
    "ls_objective",
    "macro_step",
    "reconstruct_lumped",
    "reconstruct_macro_field",
    "run_substeps",
    "secant_targets",
    "solve_cg",
    "FrameResult",
    "run_frames",
    "diff_runs",
    "read_frame",
    "write_frame",
]

__version__ = "0.1.0"
