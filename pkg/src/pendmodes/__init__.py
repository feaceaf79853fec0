"""Brake-orbit modal analysis and weak-actuator swing-up control of a
gravity-loaded double pendulum."""

from .dynamics import (
    LinearModes,
    PendulumParams,
    State,
    energy,
    forward_dynamics,
    gravity,
    linear_modes,
    linearize,
    mass_matrix,
    coriolis,
    max_potential_energy,
    potential,
    wrap_angle,
    wrap_distance,
)
from .integrate import (
    SHOOT_DT,
    SIM_DT,
    FlowJacobian,
    IntegrationBlowup,
    Trajectory,
    flow,
    flow_jacobian,
    step,
)
from .modal import (
    BrakeOrbit,
    ContinuationControls,
    ModeFamily,
    MultiplierRecord,
    characteristic_multipliers,
    continue_mode,
    critical_energy,
    find_brake_orbit,
    instability_onset,
    multiplier_grid,
)

__version__ = "0.1.0"
