"""Matrix-free tensor-product finite elements for boundary value tracking optimal control."""
from .errors import (
    ConfigurationError,
    DimensionError,
    DivergenceError,
    InvalidMeshError,
    NotSPDError,
    OracleSizeError,
    SolverError,
)
from .mesh1d import (
    Mesh1D,
    Modified1DBasis,
    QuadratureRule,
    Tri1D,
    assemble_mass_1d,
    assemble_mass_1d_interior,
    assemble_stiffness_1d,
    assemble_stiffness_1d_interior,
    build_basis,
    build_mesh,
    gauss_rule,
    interp_Ih,
    project_Qh,
)
from .ocp import (
    ConvergenceTable,
    OcpConfig,
    StateSolution,
    Target,
    assemble_boundary_rhs,
    boundary_l2_error,
    pre_saturation_window,
    recover_control,
    rho_sweep,
    run_convergence_study,
    solve_ocp,
)
from .solvers import (
    GMGPreconditioner,
    SolveReport,
    SolverConfig,
    build_schur,
    cg,
    dense_lu_solve,
    gmg_vcycle,
    reconstruct_interior,
)
from .tensor import (
    TensorSpace,
    build_boundary_mass,
    build_h1_operator,
    build_interior_h1_operator,
    extract_block,
    partition_dofs,
    project_Ph,
)

from .tables import emit_table, parse_csv
from .appendix import verify_appendix

__version__ = "0.1.0"
