"""Wheel-terrain contact, collision detection, and contact history.

Each wheel is a sphere at its hub; penetration against the bilinear
terrain patch produces a spring-damper normal force, drive traction acts
along the wheel's rolling direction, and everything is clamped to the
Coulomb friction cone. Slip-opposing friction ramps linearly below a
regularization speed to avoid chatter at rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rigidbody import BODY, INERTIAL, InertialParams, RobotState, Wrench, cross3
from .terrain import HeightField


@dataclass(frozen=True)
class ContactParams:
    wheel_radius: float = 0.03
    stiffness: float = 3000.0  # N/m, ~2 mm static penetration at rest
    damping: float = 80.0  # N*s/m, keeps restitution < 0.2
    friction: float = 0.8
    slip_velocity: float = 0.05  # m/s, linear friction ramp below this
    wheel_inertia: float = 1.0e-3  # kg*m^2, reflected rotor inertia included
    prop_disc_radius: float = 0.10
    # chassis keep-out spheres: (center in body frame, radius)
    chassis_spheres: tuple = (
        ((0.06, 0.0, 0.01), 0.035),
        ((-0.06, 0.0, 0.01), 0.035),
        ((0.0, 0.0, 0.0), 0.05),
    )


@dataclass
class WheelContactInfo:
    in_contact: bool = False
    penetration: float = 0.0
    normal_force: float = 0.0
    tangential: np.ndarray = field(default_factory=lambda: np.zeros(2))  # (long, lat)
    point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    spin_moment: float = 0.0  # ground moment about the axle, drives wheel spin


@dataclass
class ContactState:
    wheels: list
    body_collision: bool = False
    prop_collision: bool = False


_UP = np.array([0.0, 0.0, 1.0])
_UP.setflags(write=False)


def wheel_contact(
    state: RobotState,
    params: InertialParams,
    cparams: ContactParams,
    field_: HeightField,
    wheel_torque: np.ndarray,
    mu: float,
    dt: float,
) -> tuple[ContactState, list[Wrench]]:
    """Per-wheel contact wrenches plus the motor reaction on the base.

    Returns (contact state, wrenches). The reaction torque -tau about the
    body y axis is applied whether or not the wheel touches the ground;
    the ground wrench itself is zero out of contact.
    """
    R = state.rotation
    v = state.velocity
    omega_world = R @ state.angular_velocity
    axle = R[:, 1]
    wheels = []
    wrenches = []
    r_w = cparams.wheel_radius

    probe = 0.8 * r_w  # probe offsets catch riser planes before the hub does
    probes = ((0.0, 0.0), (probe, 0.0), (-probe, 0.0), (0.0, probe), (0.0, -probe))

    for j in range(2):
        info = WheelContactInfo()
        hub = state.position + R @ params.wheel_arms[j]
        hx, hy, hz = float(hub[0]), float(hub[1]), float(hub[2])
        # deepest sphere-vs-patch-plane penetration over a small probe
        # stencil: distance to a fixed plane varies continuously with the
        # hub, so riser faces engage smoothly instead of popping when the
        # hub crosses a cell boundary
        pen = 0.0
        best = None
        for dx, dy in probes:
            h, dhdx, dhdy = field_.height_and_patch_gradient(hx + dx, hy + dy)
            inv_norm = 1.0 / math.sqrt(dhdx * dhdx + dhdy * dhdy + 1.0)
            # gap = n . (hub - surface_point) with this probe's local plane
            gap = inv_norm * (dhdx * dx + dhdy * dy + (hz - h))
            p = r_w - gap
            if p > pen:
                pen = p
                best = (-dhdx * inv_norm, -dhdy * inv_norm, inv_norm)
        if pen > 0.0:
            n = np.array(best)
            v_hub = v + R @ cross3(state.angular_velocity, params.wheel_arms[j])
            pen_rate = -float(n @ v_hub)
            N = cparams.stiffness * pen + cparams.damping * pen_rate
            if N > 0.0:
                t_dir = cross3(axle, n)
                t_norm = math.sqrt(float(t_dir @ t_dir))
                if t_norm < 1e-9:
                    # axle parallel to the normal; no defined rolling direction
                    t_dir = np.zeros(3)
                    l_dir = np.zeros(3)
                else:
                    t_dir = t_dir / t_norm
                    l_dir = cross3(n, t_dir)
                point = hub - r_w * n
                spin_vec = omega_world + state.wheel_rates[j] * axle
                v_cp = v_hub + cross3(spin_vec, point - hub)
                mu_n = mu * N
                s_long = float(t_dir @ v_cp)
                s_lat = float(l_dir @ v_cp)
                ramp = lambda s: max(-1.0, min(1.0, s / cparams.slip_velocity))
                f_long = wheel_torque[j] / r_w - mu_n * ramp(s_long)
                f_lat = -mu_n * ramp(s_lat)
                mag = math.hypot(f_long, f_lat)
                if mag > mu_n and mag > 0.0:
                    scale = mu_n / mag
                    f_long *= scale
                    f_lat *= scale
                f_world = N * n + f_long * t_dir + f_lat * l_dir
                info.in_contact = True
                info.penetration = pen
                info.normal_force = N
                info.tangential = np.array([f_long, f_lat])
                info.point = point
                info.normal = n
                info.spin_moment = float(axle @ cross3(point - hub, f_long * t_dir + f_lat * l_dir))
                wrenches.append(
                    Wrench(
                        force=f_world,
                        torque=cross3(point - state.position, f_world),
                        frame=INERTIAL,
                    )
                )
        wheels.append(info)

    # motor reaction on the base about the axle (body frame)
    reaction = np.array([0.0, -(wheel_torque[0] + wheel_torque[1]), 0.0])
    wrenches.append(Wrench(force=np.zeros(3), torque=reaction, frame=BODY))
    return ContactState(wheels=wheels), wrenches


_DISC_ANGLES = np.linspace(0.0, 2.0 * math.pi, 8, endpoint=False)


def chassis_contact(
    state: RobotState,
    cparams: ContactParams,
    field_: HeightField,
    mu: float,
) -> list[Wrench]:
    """Support forces for the chassis keep-out spheres.

    Same spring-damper normal plus slip-opposing friction as the wheels,
    but with no drive term: a face-planted or flipped robot rests on its
    shell instead of tunneling until the propellers strike.
    """
    R = state.rotation
    v = state.velocity
    wrenches: list[Wrench] = []
    for center_b, radius in cparams.chassis_spheres:
        c = state.position + R @ np.asarray(center_b, dtype=float)
        h, dhdx, dhdy = field_.height_and_patch_gradient(c[0], c[1])
        inv_norm = 1.0 / math.sqrt(dhdx * dhdx + dhdy * dhdy + 1.0)
        gap = inv_norm * (c[2] - h)
        pen = radius - gap
        if pen <= 0.0:
            continue
        n = np.array([-dhdx * inv_norm, -dhdy * inv_norm, inv_norm])
        v_pt = v + R @ cross3(state.angular_velocity, np.asarray(center_b, dtype=float))
        N = cparams.stiffness * pen - cparams.damping * float(n @ v_pt)
        if N <= 0.0:
            continue
        v_tan = v_pt - float(n @ v_pt) * n
        speed = math.sqrt(float(v_tan @ v_tan))
        mu_n = mu * N
        if speed > 1e-12:
            scale = min(1.0, speed / cparams.slip_velocity)
            f_tan = -(mu_n * scale / speed) * v_tan
        else:
            f_tan = np.zeros(3)
        f_world = N * n + f_tan
        point = c - radius * n
        wrenches.append(
            Wrench(force=f_world, torque=cross3(point - state.position, f_world), frame=INERTIAL)
        )
    return wrenches


_DISC_COS = np.cos(_DISC_ANGLES)[:, None]
_DISC_SIN = np.sin(_DISC_ANGLES)[:, None]


def detect_collisions(
    state: RobotState,
    params: InertialParams,
    cparams: ContactParams,
    field_: HeightField,
) -> tuple[bool, bool]:
    """(body_collision, prop_collision) against the terrain surface.

    Propeller discs are sampled at their center plus a rim ring; the
    chassis is covered by keep-out spheres.
    """
    R = state.rotation
    n_body = len(cparams.chassis_spheres)
    n_rim = len(_DISC_ANGLES)
    pts = np.empty((n_body + 2 * (n_rim + 1), 3))
    for k, (center_b, radius) in enumerate(cparams.chassis_spheres):
        c = state.position + R @ np.asarray(center_b, dtype=float)
        pts[k] = c
        pts[k, 2] -= radius

    row = n_body
    for j in range(2):
        center = state.position + R @ params.prop_arms[j]
        tilt = float(state.servo_angles[j])
        ct, st_ = math.cos(tilt), math.sin(tilt)
        axis = R @ np.array([st_, 0.0, ct])  # R_y(tilt) @ [0,0,1]
        u = cross3(axis, np.array([0.0, 0.0, 1.0]))
        un = math.sqrt(float(u @ u))
        u = np.array([1.0, 0.0, 0.0]) if un < 1e-9 else u / un
        w = cross3(axis, u)
        pts[row] = center
        pts[row + 1 : row + 1 + n_rim] = center + cparams.prop_disc_radius * (
            _DISC_COS * u + _DISC_SIN * w
        )
        row += n_rim + 1

    heights = field_.height_batch(pts[:, 0], pts[:, 1])
    below = pts[:, 2] < heights
    body_hit = bool(below[:n_body].any())
    prop_hit = bool(below[n_body:].any())
    return body_hit, prop_hit


def contact_history_update(buffer: np.ndarray, flags: np.ndarray) -> np.ndarray:
    """Push the newest per-wheel contact flags into a (h, 2) ring buffer.

    Row 0 is the most recent sample; older rows shift down and the oldest
    drops off. h == 1 degenerates to the current flags.
    """
    out = np.empty_like(buffer)
    out[0] = flags
    if buffer.shape[0] > 1:
        out[1:] = buffer[:-1]
    return out
