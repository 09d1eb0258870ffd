"""Sign-changing Yamabe solutions on spheres via optimal interval partitions.

Functions invariant under O(m) x O(n) acting on S^N (N = m + n - 1) are
profiles on the orbit interval [0, pi].  This package computes least-energy
profiles on subintervals, optimal partitions of [0, pi] into M pieces, the
glued M-nodal solutions, and the competitive-system continuation whose
segregated limit reproduces the optimal partition.
"""
from .discretization import (
    Mesh,
    OrbitGrid,
    ReducedFunction,
    build_grid,
    reduced_residual,
    weighted_crit_integral,
    weighted_h1_normsq,
    weighted_overlap,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DegeneracyError,
    DegenerateInputError,
    DomainError,
    GridMismatchError,
    PartitionError,
    ProjectionError,
    ResolutionError,
    SegregationError,
)
from .geometry import (
    SymmetryConfig,
    boundary_radii,
    orbit_map,
    sphere_area,
    weight_h,
)
from .partition import (
    IntervalCache,
    IntervalPartition,
    NodalSolution,
    assemble_nodal,
    optimize_partition,
    partition_energy,
    verify_comparison,
    verify_monotone_in_M,
    verify_subadditivity,
)
from .scalar import (
    ScalarSolution,
    SolverOptions,
    least_energy_on_interval,
    nehari_scale,
    shoot_reduced_ode,
    shoot_to_zero,
)
from .system import (
    CouplingMatrix,
    EnergyReport,
    SystemState,
    extract_supports,
    lambda_continuation,
    minimize_system,
    project_to_system_nehari,
    system_energy,
    system_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "assemble_nodal",
    "boundary_radii",
    "build_grid",
    "ConfigError",
    "ConvergenceError",
    "CouplingMatrix",
    "DegeneracyError",
    "DegenerateInputError",
    "DomainError",
    "EnergyReport",
    "extract_supports",
    "GridMismatchError",
    "IntervalCache",
    "IntervalPartition",
    "lambda_continuation",
    "least_energy_on_interval",
    "Mesh",
    "minimize_system",
    "nehari_scale",
    "NodalSolution",
    "optimize_partition",
    "orbit_map",
    "OrbitGrid",
    "partition_energy",
    "PartitionError",
    "project_to_system_nehari",
    "ProjectionError",
    "reduced_residual",
    "ReducedFunction",
    "ResolutionError",
    "ScalarSolution",
    "SegregationError",
    "shoot_reduced_ode",
    "shoot_to_zero",
    "SolverOptions",
    "sphere_area",
    "SymmetryConfig",
    "system_energy",
    "system_gradient",
    "SystemState",
    "verify_comparison",
    "verify_monotone_in_M",
    "verify_subadditivity",
    "weight_h",
    "weighted_crit_integral",
    "weighted_h1_normsq",
    "weighted_overlap",
    "__version__",
]
