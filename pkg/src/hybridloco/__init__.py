"""Simulator and training stack for a tilt-rotor bicopter with driven wheels."""

from .actuation import (
    ActuatorCommand,
    FitFailed,
    InvalidMap,
    PowerModel,
    ThrustMap,
    electrical_power,
    fit_power_poly,
    fit_thrust_map,
    omega_to_pwm,
    pwm_to_thrust,
)
from .config import ConfigError, load_calibration, load_config
from .contact import ContactParams, ContactState, detect_collisions, wheel_contact
from .env import (
    HybridEnv,
    Outcome,
    RewardBreakdown,
    StepResult,
    VectorEnv,
    goal_command,
    map_action,
    observation_layout,
    vector_step,
)
from .rigidbody import (
    InertialParams,
    NonFiniteState,
    RobotState,
    Wrench,
    integrate_step,
    projected_gravity,
    thrust_body_vector,
)
from .sim import Simulator
from .terrain import (
    CurriculumState,
    HeightField,
    InvalidSpec,
    SamplingFailed,
    TerrainSpec,
    add_micro_roughness,
    generate_inverted_pyramid,
    sample_height,
    sample_spawn_and_target,
    step_height,
)

__version__ = "0.1.0"
