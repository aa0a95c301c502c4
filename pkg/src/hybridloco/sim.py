"""Physics composition: actuation -> contact -> rigid body on one clock.

A ``Simulator`` owns one robot's full state plus its per-episode actuator
controllers, and advances it by fixed 5 ms substeps under an actuator
command. The environment wraps one per episode; controlled test
scenarios (settling, step-climb scripts) drive it directly.
"""
from __future__ import annotations

import numpy as np

from .actuation import (
    ActuatorCommand,
    PropLag,
    ServoModel,
    ServoTracker,
    WheelController,
    omega_to_pwm,
    wheel_pi_step,
)
from .contact import ContactParams, ContactState, chassis_contact, wheel_contact
from .rigidbody import (
    BODY,
    InertialParams,
    NonFiniteState,
    RobotState,
    Wrench,
    cross3,
    integrate_step,
    thrust_body_vector,
)
from .terrain import HeightField

PROP_SPIN_SIGNS = np.array([1.0, -1.0])  # left spins +, right spins -


def prop_rate_commands(cmd: ActuatorCommand) -> np.ndarray:
    """Signed propeller rate targets recovered from the PWM command."""
    return PROP_SPIN_SIGNS * (cmd.pwm_prop - 1000.0) / 2.0


class Simulator:
    def __init__(
        self,
        state: RobotState,
        params: InertialParams,
        contact_params: ContactParams,
        field: HeightField,
        thrust_map,
        mu: float | None = None,
        thrust_scale: float = 1.0,
        servo_rate_scale: float = 1.0,
        servo_model: ServoModel | None = None,
        wheel_ctrl: WheelController | None = None,
        prop_lag_tau: float = 0.05,
        dt: float = 0.005,
        prop_yaw_drag: float = 0.0,
    ):
        self.state = state
        self.params = params
        self.cparams = contact_params
        self.field = field
        self.thrust_map = thrust_map
        self.mu = contact_params.friction if mu is None else mu
        self.thrust_scale = thrust_scale
        self.servo_rate_scale = servo_rate_scale
        self.wheel_ctrl = wheel_ctrl if wheel_ctrl is not None else WheelController()
        self.servo_tracker = ServoTracker(model=servo_model or ServoModel())
        self.prop_lag = PropLag(time_constant=prop_lag_tau)
        self.dt = dt
        # counter-rotation cancels this for symmetric commands; nonzero
        # values expose the yaw-drag sensitivity of asymmetric spin
        self.prop_yaw_drag = prop_yaw_drag
        self.last_contact = ContactState(wheels=[])
        self.last_wheel_torque = np.zeros(2)

    def substep(self, cmd: ActuatorCommand):
        """One 5 ms physics step; raises NonFiniteState on divergence."""
        st = self.state
        dt = self.dt

        servo = self.servo_tracker.step(cmd.servo_angle_ref, dt, self.servo_rate_scale)
        prop = self.prop_lag.step(prop_rate_commands(cmd), dt)
        torque = wheel_pi_step(cmd.wheel_rate_ref - st.wheel_rates, self.wheel_ctrl, dt)
        self.last_wheel_torque = torque

        wrenches: list[Wrench] = []
        for i in range(2):
            thrust = self.thrust_scale * self.thrust_map.thrust(omega_to_pwm(prop[i]))
            f_body = thrust_body_vector(thrust, servo[i])
            wrenches.append(
                Wrench(force=f_body, torque=cross3(self.params.prop_arms[i], f_body), frame=BODY)
            )
        if self.prop_yaw_drag != 0.0:
            drag = -self.prop_yaw_drag * (prop[0] + prop[1])
            wrenches.append(Wrench(force=np.zeros(3), torque=np.array([0.0, 0.0, drag]), frame=BODY))
        contact_state, contact_wrenches = wheel_contact(
            st, self.params, self.cparams, self.field, torque, self.mu, dt
        )
        wrenches.extend(contact_wrenches)
        wrenches.extend(chassis_contact(st, self.cparams, self.field, self.mu))

        new = integrate_step(st, self.params, wrenches, dt)

        # joint updates; wheel spin feels the ground reaction moment
        spin_moments = np.array(
            [w.spin_moment for w in contact_state.wheels] if contact_state.wheels else [0.0, 0.0]
        )
        new.wheel_rates = st.wheel_rates + dt * (torque + spin_moments) / self.cparams.wheel_inertia
        new.wheel_angles = st.wheel_angles + dt * new.wheel_rates
        new.servo_angles = servo.copy()
        new.servo_rates = self.servo_tracker.rates.copy()
        new.prop_rates = prop.copy()
        if not np.isfinite(new.wheel_rates).all():
            raise NonFiniteState("wheel spin diverged")

        self.state = new
        self.last_contact = contact_state

    def run(self, cmd: ActuatorCommand, substeps: int):
        for _ in range(substeps):
            self.substep(cmd)
