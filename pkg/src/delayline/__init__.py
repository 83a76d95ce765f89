"""Predictor-feedback boundary control of transport-delayed plants.

A numerical laboratory for plants actuated through an advection line whose
speed depends on a moving-window integral of the plant state: closed-loop
simulation (first-order upwind + forward Euler), multi-layer predictor
marching, softened bang-bang gain synthesis, and numerical verification of
the structural transform identities.
"""

from .control import (
    BangBangGains,
    SafetyCertificate,
    bang_bang,
    control_flux,
    control_linear_recycle,
    s_min,
    safety_check,
    solve_gains,
)
from .core import (
    BoundaryKind,
    Grid,
    HistoryBuffer,
    PlantModel,
    SpatialProfile,
    interp_history,
    window_integral,
)
from .predictor import (
    CharacteristicMap,
    PredictorBundle,
    compute_delay,
    find_gamma_cutoff,
    kernel_K,
    kernel_L,
    march_predictors,
    update_xi,
)
from .sim import (
    RunLog,
    Scenario,
    SimConfig,
    buffer_step,
    ode_step_general,
    pde_step,
    run_closed_loop,
)
from .verify import (
    TargetDiagnostics,
    classical_predictor_reference,
    inverse_transform_u,
    target_explicit,
    transform_w,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
