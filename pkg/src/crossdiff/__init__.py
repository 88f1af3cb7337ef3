"""Finite volume solver for two-species nonlocal cross-diffusion in 1D."""

from .integrators import (
    BlowUpError,
    FixedPointError,
    FixedPointReport,
    SingularSystemError,
    TimeGrid,
    Trajectory,
    check_cfl,
    integrate,
    stable_substep,
    step_implicit,
    step_rk4,
    tridiagonal_solve,
)
from .kernels import (
    AbsoluteValueKernel,
    ConvolutionMatrix,
    ExtrapolationError,
    GaussianKernel,
    KernelSpec,
    QuadraticKernel,
    TabulatedKernel,
    ZeroKernel,
    evaluate_kernel,
    kernel_from_dict,
    lipschitz_norm,
    precompute_weights,
)
from .mesh import Mesh1D, build_graded_mesh, build_uniform_mesh
from .scheme import KernelSet, Model, assemble_fields, assemble_fluxes, rhs
from .state import (
    DiagnosticsRecord,
    State,
    compute_diagnostics,
    energy_bound_constant,
    entropy,
    log_mean,
    project_initial_data,
)

__version__ = "0.1.0"
