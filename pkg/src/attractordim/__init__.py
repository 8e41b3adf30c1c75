"""Dimension bounds and tangent-volume diagnostics for reaction-diffusion
dynamics on box domains."""

__version__ = "0.1.0"

from .domain import (
    Field,
    Grid,
    NonlinearitySpec,
    SymmetricOperator,
    assemble_operator,
    build_grid,
    constant_field,
    field_from_function,
    h1_norm,
    l2_norm,
    lp_norm,
    nemytskii,
    norm,
    rayleigh_extremes,
    read_field,
    uniform_local_norm,
    write_field,
)
from .semiflow import (
    EquilibriumResult,
    SemiflowConfig,
    Trajectory,
    evolve,
    find_equilibrium,
    lyapunov_value,
    pair_diagnostics,
    step,
)
from .spectral import (
    BoundReport,
    ConstantsTable,
    SpectralConfig,
    assemble_shifted_operator,
    attractor_radius,
    clr_bound,
    count_below,
    default_constants,
    dominating_potential,
    hausdorff_bound,
    lambda_min_coercivity,
    lieb_thirring_residual,
    lowest_eigs,
    proper_values,
    subspace_compression_check,
)
from .tangent import (
    DimensionReport,
    TangentBundle,
    cocycle_residual,
    differentiability_residual,
    dimension_estimate,
    linearized_operator,
    propagate_tangents,
    trace_on_subspace,
    volume_ode_residual,
)
