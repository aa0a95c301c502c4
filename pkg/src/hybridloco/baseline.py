"""Rule-based decoupled controller: symmetric throttle/tilt pitch hold.

Pitch is regulated by a PID on the symmetric propeller throttle while the
tilt servos track sigma_ref = -pitch + bias, keeping thrust roughly
world-vertical; wheels follow a scripted speed profile. The two shipped
presets mirror the comparison experiments: a standing pose (pitch ref 0)
and a nose-up climbing pose (pitch ref -80 deg).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .actuation import PWM_MAX, PWM_MIN, SERVO_ANGLE_MAX, ActuatorCommand
from .rigidbody import RobotState, euler_zyx


@dataclass(frozen=True)
class DecoupledConfig:
    pitch_ref: float  # rad, positive nose-down
    hold_pwm: float
    kp: float
    ki: float
    kd: float
    tilt_bias: float  # rad
    # wheel script rows: (time s, left rad/s, right rad/s); linear ramps
    wheel_script: tuple
    # extra tilt-law terms (both default 0 = the bare rule): the bare
    # attitude-slaved tilt has no stabilizing authority of its own, so the
    # standing preset needs position overcorrection and rate damping
    tilt_rate_gain: float = 0.0
    tilt_position_gain: float = 0.0

    def __post_init__(self):
        if not (PWM_MIN <= self.hold_pwm <= PWM_MAX):
            raise ValueError(f"hold_pwm {self.hold_pwm} outside [{PWM_MIN}, {PWM_MAX}]")

    @staticmethod
    def from_dict(d: dict) -> "DecoupledConfig":
        return DecoupledConfig(
            pitch_ref=math.radians(float(d["pitch_ref_deg"])),
            hold_pwm=float(d["hold_pwm"]),
            kp=float(d["kp"]),
            ki=float(d["ki"]),
            kd=float(d["kd"]),
            tilt_bias=float(d["tilt_bias"]),
            wheel_script=tuple(tuple(float(v) for v in row) for row in d["wheel_script"]),
            tilt_rate_gain=float(d.get("tilt_rate_gain", 0.0)),
            tilt_position_gain=float(d.get("tilt_position_gain", 0.0)),
        )


def script_wheel_refs(script, t: float) -> np.ndarray:
    times = [row[0] for row in script]
    left = [row[1] for row in script]
    right = [row[2] for row in script]
    return np.array([np.interp(t, times, left), np.interp(t, times, right)])


@dataclass
class DecoupledController:
    """Per-environment PID state for the decoupled baseline."""

    cfg: DecoupledConfig
    integral: float = 0.0
    prev_error: float = field(default=math.nan)

    def reset(self):
        self.integral = 0.0
        self.prev_error = math.nan

    def command(self, state: RobotState, t: float, dt: float) -> ActuatorCommand:
        return decoupled_command(state, self.cfg, t, self, dt)


def decoupled_command(
    state: RobotState,
    cfg: DecoupledConfig,
    t: float,
    pid: DecoupledController,
    dt: float,
) -> ActuatorCommand:
    """Symmetric throttle from the pitch PID, tilt = -pitch + bias."""
    _, pitch, _ = euler_zyx(state.rotation)
    error = cfg.pitch_ref - pitch

    # anti-windup: clamp the integral so ki * integral stays within the
    # available throttle span
    if cfg.ki > 0.0:
        cap = (PWM_MAX - PWM_MIN) / cfg.ki
        pid.integral = min(max(pid.integral + error * dt, -cap), cap)
    if math.isnan(pid.prev_error):
        derivative = 0.0
    else:
        derivative = (error - pid.prev_error) / dt
    pid.prev_error = error

    pwm = cfg.hold_pwm + cfg.kp * error + cfg.ki * pid.integral + cfg.kd * derivative
    pwm = min(max(pwm, PWM_MIN), PWM_MAX)

    pitch_rate = float(state.angular_velocity[1])
    tilt = (
        -pitch
        + cfg.tilt_bias
        - cfg.tilt_position_gain * (pitch - cfg.pitch_ref)
        - cfg.tilt_rate_gain * pitch_rate
    )
    tilt = min(max(tilt, -SERVO_ANGLE_MAX), SERVO_ANGLE_MAX)
    wheels = script_wheel_refs(cfg.wheel_script, t)
    return ActuatorCommand(
        pwm_prop=np.array([pwm, pwm]),
        wheel_rate_ref=wheels,
        servo_angle_ref=np.array([tilt, tilt]),
    )
