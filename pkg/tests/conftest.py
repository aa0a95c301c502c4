import math

import numpy as np
import pytest

from hybridloco.baseline import DecoupledController
from hybridloco.config import (
    build_contact,
    build_inertial,
    build_servo_model,
    build_wheel_controller,
    load_calibration,
    load_config,
)
from hybridloco.rigidbody import RobotState, euler_zyx, rotation_about_y
from hybridloco.sim import Simulator


@pytest.fixture(scope="session")
def base_cfg():
    return load_config()


def make_scenario_sim(cfg, field, position=(0.0, 0.0, 0.07), yaw=0.0, pitch=0.0):
    state = RobotState.at_rest(position, yaw=yaw)
    if pitch:
        state.rotation = state.rotation @ rotation_about_y(pitch)
    return Simulator(
        state,
        build_inertial(cfg),
        build_contact(cfg),
        field,
        load_calibration(cfg)[0],
        wheel_ctrl=build_wheel_controller(cfg),
        servo_model=build_servo_model(cfg),
    )


def run_decoupled(cfg, dcfg, field, start_x, seconds=15.0, pitch0=0.0):
    """Closed-loop decoupled run at 50 Hz; reports pitch peak and mounting.

    `mounted_at` is the first time the base is past the riser at step
    height in any attitude (the presets drive on after cresting).
    """
    ctrl = DecoupledController(dcfg)
    sim = make_scenario_sim(cfg, field, position=(start_x, 0.0, 0.07), pitch=pitch0)
    peak = 0.0
    mounted_at = None
    for k in range(int(seconds * 50)):
        cmd = ctrl.command(sim.state, k * 0.02, 0.02)
        for _ in range(4):
            sim.substep(cmd)
        _, p, _ = euler_zyx(sim.state.rotation)
        peak = max(peak, abs(p))
        x, z = sim.state.position[0], sim.state.position[2]
        if mounted_at is None and x > 0.35 and 0.06 < z < 0.25:
            mounted_at = k * 0.02
    return math.degrees(peak), mounted_at, sim.state
