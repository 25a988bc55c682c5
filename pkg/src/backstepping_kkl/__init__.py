"""Backstepping-KKL boundary observer for an ODE driving a heat equation.

Modules: ``grid`` (fields and discrete calculus), ``cascade`` (plant
simulation), ``kernel`` (closed-form backstepping kernel and transform),
``kkl`` (the map T0), ``observer`` (target system and left inverse),
``oracles`` (Green's function cross-checks), ``experiments`` and ``cli``.
"""
from .cascade import CascadeParams, CascadeState, OdeModel, Trajectory, check_assumption2, flow, simulate_cascade, step_ode
from .errors import (
    BkklError,
    ConfigError,
    EmptySearchBox,
    GridMismatch,
    NonFiniteState,
    NonPositiveGamma,
    RankDeficientLS,
    SingularBVP,
    SolverFailure,
)
from .grid import SpatialField, SpatialGrid, TimeGrid, l2_norm, second_difference
from .kernel import (
    KernelTable,
    TransformMatrix,
    apply_inverse_transform,
    apply_transform,
    build_kernel_table,
    build_transform,
    kernel_pde_residual,
)
from .kkl import T0Strategy, flow_property_check, solve_ansatz_bvp, t0_analytic_example1, t0_burn_in
from .models import model_from_expressions, oscillator_model, parameter_estimation_model
from .observer import (
    InversionConfig,
    InversionResult,
    ModeBasis,
    SteadyManifold,
    TargetState,
    forward_map,
    hmap_injectivity_probe,
    invert_map,
    run_observer,
    run_target,
    step_target,
)

__version__ = "0.1.0"
