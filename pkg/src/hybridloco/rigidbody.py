"""6-DOF rigid-body dynamics of the robot base.

Conventions: inertial frame is z-up, body frame is x-forward / y-left /
z-up (FLU). ``rotation`` maps body coordinates into the inertial frame.
Pitch extracted from the ZYX Euler decomposition is positive nose-down.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteState(RuntimeError):
    """Integration produced NaN/Inf; the episode must terminate."""


def rotation_about_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_about_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues map of a rotation vector (axis * angle)."""
    x, y, z = float(w[0]), float(w[1]), float(w[2])
    theta2 = x * x + y * y + z * z
    theta = math.sqrt(theta2)
    if theta < 1e-8:
        # Taylor expansion; avoids 0/0 while staying C2-continuous.
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    # I + a*K + b*K^2 written out element-wise (K = hat(w))
    bxy, bxz, byz = b * x * y, b * x * z, b * y * z
    return np.array(
        [
            [1.0 - b * (y * y + z * z), bxy - a * z, bxz + a * y],
            [bxy + a * z, 1.0 - b * (x * x + z * z), byz - a * x],
            [bxz - a * y, byz + a * x, 1.0 - b * (x * x + y * y)],
        ]
    )


_EYE15 = 1.5 * np.eye(3)
_EYE15.setflags(write=False)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """One symmetric polar-projection step; quadratic in the drift."""
    return R @ (_EYE15 - 0.5 * (R.T @ R))


def cross3(a, b) -> np.ndarray:
    """Cross product for 3-vectors (much faster than np.cross here)."""
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    """(roll, pitch, yaw) with pitch positive nose-down (FLU body frame).

    R = Rz(yaw) @ Ry(pitch) @ Rx(roll), so R[2,0] = -sin(pitch); a hard
    forward wheel-torque reaction rears the nose up, driving pitch negative.
    """
    pitch = math.asin(max(-1.0, min(1.0, -float(R[2, 0]))))
    roll = math.atan2(float(R[2, 1]), float(R[2, 2]))
    yaw = math.atan2(float(R[1, 0]), float(R[0, 0]))
    return roll, pitch, yaw


def yaw_of(R: np.ndarray) -> float:
    return math.atan2(float(R[1, 0]), float(R[0, 0]))


@dataclass
class RobotState:
    """Base pose/twist plus joint states of wheels, servos and propellers."""

    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray
    angular_velocity: np.ndarray
    wheel_angles: np.ndarray
    wheel_rates: np.ndarray
    servo_angles: np.ndarray
    servo_rates: np.ndarray
    prop_rates: np.ndarray

    @staticmethod
    def at_rest(position=(0.0, 0.0, 0.0), yaw: float = 0.0) -> "RobotState":
        return RobotState(
            position=np.asarray(position, dtype=float).copy(),
            velocity=np.zeros(3),
            rotation=rotation_about_z(yaw),
            angular_velocity=np.zeros(3),
            wheel_angles=np.zeros(2),
            wheel_rates=np.zeros(2),
            servo_angles=np.zeros(2),
            servo_rates=np.zeros(2),
            prop_rates=np.zeros(2),
        )

    def copy(self) -> "RobotState":
        return RobotState(
            self.position.copy(),
            self.velocity.copy(),
            self.rotation.copy(),
            self.angular_velocity.copy(),
            self.wheel_angles.copy(),
            self.wheel_rates.copy(),
            self.servo_angles.copy(),
            self.servo_rates.copy(),
            self.prop_rates.copy(),
        )

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.position).all()
            and np.isfinite(self.velocity).all()
            and np.isfinite(self.rotation).all()
            and np.isfinite(self.angular_velocity).all()
            and np.isfinite(self.wheel_rates).all()
            and np.isfinite(self.servo_angles).all()
            and np.isfinite(self.prop_rates).all()
        )


@dataclass(frozen=True)
class InertialParams:
    """Mass properties and actuator lever arms, all in SI / body frame."""

    mass: float
    inertia: np.ndarray  # 3x3, body frame
    prop_arms: np.ndarray  # (2, 3), left then right
    wheel_arms: np.ndarray  # (2, 3), left then right
    gravity: float = 9.81
    inertia_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.mass <= 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        J = np.asarray(self.inertia, dtype=float)
        if J.shape != (3, 3) or not np.allclose(J, J.T, atol=1e-12):
            raise ValueError("inertia must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(J) <= 0.0):
            raise ValueError("inertia must be positive definite")
        object.__setattr__(self, "inertia", J)
        object.__setattr__(self, "inertia_inv", np.linalg.inv(J))
        object.__setattr__(self, "prop_arms", np.asarray(self.prop_arms, dtype=float))
        object.__setattr__(self, "wheel_arms", np.asarray(self.wheel_arms, dtype=float))

    def scaled(self, mass_scale: float, inertia_scale: float) -> "InertialParams":
        return InertialParams(
            mass=self.mass * mass_scale,
            inertia=self.inertia * inertia_scale,
            prop_arms=self.prop_arms,
            wheel_arms=self.wheel_arms,
            gravity=self.gravity,
        )


BODY = "body"
INERTIAL = "inertial"


@dataclass(frozen=True)
class Wrench:
    """Force + torque about the base origin, expressed in one frame."""

    force: np.ndarray
    torque: np.ndarray
    frame: str = BODY


def thrust_body_vector(f_mag: float, tilt: float) -> np.ndarray:
    """Thrust of one propeller in the body frame, tilted about body y."""
    return np.array([f_mag * math.sin(tilt), 0.0, f_mag * math.cos(tilt)])


def projected_gravity(state: RobotState) -> np.ndarray:
    """Inertial down vector expressed in the body frame (unit norm)."""
    return -state.rotation[2, :].copy()  # R^T @ [0,0,-1]


def integrate_step(
    state: RobotState,
    params: InertialParams,
    applied: list[Wrench],
    dt: float,
) -> RobotState:
    """Semi-implicit Euler update of the free base under the given wrenches.

    Velocity updates precede position/attitude updates; attitude advances
    through the exponential map of the new body rate and is re-projected
    onto SO(3) each step. Joint states pass through untouched.
    """
    R = state.rotation
    force_inertial = np.array([0.0, 0.0, -params.gravity * params.mass])
    torque_body = np.zeros(3)
    for w in applied:
        if w.frame == BODY:
            force_inertial = force_inertial + R @ w.force
            torque_body = torque_body + w.torque
        else:
            force_inertial = force_inertial + w.force
            torque_body = torque_body + R.T @ w.torque

    v_new = state.velocity + (dt / params.mass) * force_inertial
    x_new = state.position + dt * v_new

    omega = state.angular_velocity
    Jw = params.inertia @ omega
    omega_dot = params.inertia_inv @ (torque_body - cross3(omega, Jw))
    omega_new = omega + dt * omega_dot
    R_new = orthonormalize(R @ exp_so3(omega_new * dt))

    out = RobotState(
        position=x_new,
        velocity=v_new,
        rotation=R_new,
        angular_velocity=omega_new,
        wheel_angles=state.wheel_angles,
        wheel_rates=state.wheel_rates,
        servo_angles=state.servo_angles,
        servo_rates=state.servo_rates,
        prop_rates=state.prop_rates,
    )
    # a single nan/inf anywhere poisons this sum
    probe = (
        x_new[0] + x_new[1] + x_new[2]
        + v_new[0] + v_new[1] + v_new[2]
        + omega_new[0] + omega_new[1] + omega_new[2]
        + R_new[0, 0] + R_new[1, 1] + R_new[2, 2]
    )
    if not math.isfinite(probe):
        raise NonFiniteState("rigid-body state diverged")
    return out
