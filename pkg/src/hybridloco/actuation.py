"""Actuator models: propeller thrust/power maps, wheel PI loop, tilt servos.

Thrust and power polynomials mirror the hardware calibration pipeline: a
degree-4 polynomial over raw PWM microseconds for the propellers and a
degree-2 polynomial over RPM for the wheel motors, both constrained to be
zero at idle and nondecreasing over their operating range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

PWM_MIN = 1000.0
PWM_MAX = 2000.0
PROP_RATE_MAX = 500.0  # rad/s, saturates the PWM map
WHEEL_RATE_MAX = 500.0  # rad/s reference bound
SERVO_ANGLE_MAX = math.pi / 2.0
RADS_TO_RPM = 60.0 / (2.0 * math.pi)


class InvalidMap(ValueError):
    """A calibration polynomial violates its invariants."""


class FitFailed(RuntimeError):
    """Bench data cannot support a constrained calibration fit."""


def omega_to_pwm(omega: float) -> float:
    """Map propeller rate magnitude to the ESC PWM command (microseconds)."""
    return min(max(PWM_MIN + 2.0 * abs(omega), PWM_MIN), PWM_MAX)


def _check_poly(coeffs: np.ndarray, lo: float, hi: float, zero_at_lo: bool, name: str):
    grid = np.arange(lo, hi + 0.5, 1.0)
    vals = np.polyval(coeffs, grid)
    if zero_at_lo and abs(vals[0]) > 1e-6:
        raise InvalidMap(f"{name}: value at {lo} is {vals[0]:.3g}, expected 0")
    if np.any(np.diff(vals) < -1e-9):
        raise InvalidMap(f"{name}: not monotone nondecreasing on [{lo}, {hi}]")
    if np.any(vals < -1e-6):
        raise InvalidMap(f"{name}: negative values on [{lo}, {hi}]")


@dataclass(frozen=True)
class ThrustMap:
    """Degree-4 PWM->thrust polynomial, highest-order coefficient first."""

    coeffs: np.ndarray
    pwm_min: float = PWM_MIN
    pwm_max: float = PWM_MAX

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (5,):
            raise InvalidMap(f"thrust map needs 5 coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "_horner", tuple(float(v) for v in c))
        _check_poly(c, self.pwm_min, self.pwm_max, zero_at_lo=True, name="thrust map")

    def thrust(self, pwm: float) -> float:
        c = self._horner
        v = ((((c[0] * pwm) + c[1]) * pwm + c[2]) * pwm + c[3]) * pwm + c[4]
        return v if v > 0.0 else 0.0


def pwm_to_thrust(pwm: float, tmap: ThrustMap) -> float:
    return tmap.thrust(pwm)


@dataclass(frozen=True)
class PowerModel:
    """Electrical power draws: degree-4 in PWM (props), degree-2 in RPM (wheels)."""

    prop_coeffs: np.ndarray  # W per us^k, highest first (5)
    wheel_coeffs: np.ndarray  # W per RPM^k, highest first (3)
    rpm_max: float = WHEEL_RATE_MAX * RADS_TO_RPM

    def __post_init__(self):
        pc = np.asarray(self.prop_coeffs, dtype=float)
        wc = np.asarray(self.wheel_coeffs, dtype=float)
        if pc.shape != (5,) or wc.shape != (3,):
            raise InvalidMap("power model needs 5 prop and 3 wheel coefficients")
        object.__setattr__(self, "prop_coeffs", pc)
        object.__setattr__(self, "wheel_coeffs", wc)
        object.__setattr__(self, "_ph", tuple(float(v) for v in pc))
        object.__setattr__(self, "_wh", tuple(float(v) for v in wc))
        _check_poly(pc, PWM_MIN, PWM_MAX, zero_at_lo=False, name="prop power")
        if np.polyval(pc, PWM_MIN) < -1e-9:
            raise InvalidMap("prop power negative at idle")
        grid = np.linspace(0.0, self.rpm_max, 2001)
        vals = np.polyval(wc, grid)
        if np.any(np.diff(vals) < -1e-9) or np.any(vals < -1e-9):
            raise InvalidMap("wheel power not nonnegative/monotone on operating range")

    def prop_power(self, pwm: float) -> float:
        c = self._ph
        v = ((((c[0] * pwm) + c[1]) * pwm + c[2]) * pwm + c[3]) * pwm + c[4]
        return v if v > 0.0 else 0.0

    def wheel_power(self, rpm: float) -> float:
        c = self._wh
        v = (c[0] * rpm + c[1]) * rpm + c[2]
        return v if v > 0.0 else 0.0


@dataclass
class ActuatorCommand:
    """Low-level command: prop PWMs, wheel speed refs, servo angle refs."""

    pwm_prop: np.ndarray  # (2,) us
    wheel_rate_ref: np.ndarray  # (2,) rad/s
    servo_angle_ref: np.ndarray  # (2,) rad

    def __post_init__(self):
        self.pwm_prop = np.clip(np.asarray(self.pwm_prop, dtype=float), PWM_MIN, PWM_MAX)
        self.wheel_rate_ref = np.clip(
            np.asarray(self.wheel_rate_ref, dtype=float), -WHEEL_RATE_MAX, WHEEL_RATE_MAX
        )
        self.servo_angle_ref = np.clip(
            np.asarray(self.servo_angle_ref, dtype=float), -SERVO_ANGLE_MAX, SERVO_ANGLE_MAX
        )

    @staticmethod
    def idle() -> "ActuatorCommand":
        return ActuatorCommand(
            pwm_prop=np.full(2, PWM_MIN),
            wheel_rate_ref=np.zeros(2),
            servo_angle_ref=np.zeros(2),
        )


def electrical_power(cmd: ActuatorCommand, model: PowerModel) -> tuple[float, float]:
    """(prop watts, wheel watts) drawn by the commanded actuation."""
    p_prop = model.prop_power(cmd.pwm_prop[0]) + model.prop_power(cmd.pwm_prop[1])
    p_wheel = model.wheel_power(RADS_TO_RPM * abs(cmd.wheel_rate_ref[0])) + model.wheel_power(
        RADS_TO_RPM * abs(cmd.wheel_rate_ref[1])
    )
    return p_prop, p_wheel


# ---------------------------------------------------------------------------
# calibration fits


@dataclass(frozen=True)
class FitResult:
    coeffs: np.ndarray  # raw polynomial, highest-order first
    rmse: float
    n_samples: int


def _shifted_to_raw(b: np.ndarray, shift: float, degree: int) -> np.ndarray:
    """Expand sum_k b[k] * (x - shift)^(k+1) into raw highest-first coeffs."""
    raw = np.zeros(degree + 1)
    base = np.array([1.0])
    for k in range(1, degree + 1):
        base = np.convolve(base, [1.0, -shift])
        term = b[k - 1] * base
        raw[degree - k :] += term
    # force exact zero at the shift point against expansion round-off
    raw[-1] -= float(np.polyval(raw, shift))
    return raw


def _fit_monotone_poly(
    x: np.ndarray, y: np.ndarray, degree: int, shift: float, hi: float
) -> np.ndarray:
    """Constrained least squares: zero at `shift`, nondecreasing on [shift, hi].

    Basis is the scaled shifted monomials ((x-shift)/span)^k, k=1..degree.
    Plain least squares is used when its solution already satisfies the
    constraints on a dense grid; otherwise fall back to NNLS, whose
    all-nonnegative coefficients are monotone by construction.
    """
    span = hi - shift
    A = np.column_stack([((x - shift) / span) ** k for k in range(1, degree + 1)])
    b, *_ = np.linalg.lstsq(A, y, rcond=None)
    grid = (np.arange(shift, hi + 0.5, 1.0) - shift) / span
    G = np.column_stack([grid**k for k in range(1, degree + 1)])
    vals = G @ b
    if np.any(np.diff(vals) < -1e-12) or np.any(vals < -1e-9):
        b, _ = nnls(A, y)
    b_shifted = b / span ** np.arange(1, degree + 1)
    return _shifted_to_raw(b_shifted, shift, degree)


def fit_thrust_map(bench_samples) -> tuple[ThrustMap, FitResult]:
    """Fit the PWM->thrust polynomial from (pwm_us, thrust_N) bench pairs."""
    pts = np.asarray(bench_samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 10:
        raise FitFailed(f"need at least 10 (pwm, thrust) samples, got {pts.shape}")
    pwm, thrust = pts[:, 0], pts[:, 1]
    if pwm.min() > PWM_MIN + 100.0 or pwm.max() < PWM_MAX - 100.0:
        raise FitFailed("bench samples must span the [1000, 2000] us range")
    raw = _fit_monotone_poly(pwm, thrust, degree=4, shift=PWM_MIN, hi=PWM_MAX)
    try:
        tmap = ThrustMap(coeffs=raw)
    except InvalidMap as exc:  # pragma: no cover - NNLS guarantees feasibility
        raise FitFailed(f"constrained fit infeasible: {exc}") from exc
    rmse = float(np.sqrt(np.mean((np.polyval(raw, pwm) - thrust) ** 2)))
    return tmap, FitResult(coeffs=raw, rmse=rmse, n_samples=len(pwm))


def fit_power_poly(samples, kind: str) -> FitResult:
    """Fit a power polynomial: kind='pwm' (degree 4) or 'rpm' (degree 2)."""
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 10:
        raise FitFailed(f"need at least 10 samples, got {pts.shape}")
    x, y = pts[:, 0], pts[:, 1]
    if kind == "pwm":
        raw = _fit_monotone_poly(x, y, degree=4, shift=PWM_MIN, hi=PWM_MAX)
    elif kind == "rpm":
        raw = _fit_monotone_poly(x, y, degree=2, shift=0.0, hi=WHEEL_RATE_MAX * RADS_TO_RPM)
    else:
        raise ValueError(f"unknown power fit kind {kind!r}")
    rmse = float(np.sqrt(np.mean((np.polyval(raw, x) - y) ** 2)))
    return FitResult(coeffs=raw, rmse=rmse, n_samples=len(x))


# ---------------------------------------------------------------------------
# closed-loop actuator controllers (one instance per environment)


@dataclass
class WheelController:
    """Discrete PI wheel-speed loop with anti-windup and torque slew limit."""

    kp: float = 0.05  # N*m*s/rad
    ki: float = 0.30  # N*m/rad
    torque_limit: float = 0.40  # N*m
    rate_limit: float = 40.0  # N*m/s
    integral_state: np.ndarray = field(default_factory=lambda: np.zeros(2))
    prev_torque: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def reset(self):
        self.integral_state[:] = 0.0
        self.prev_torque[:] = 0.0


def wheel_pi_step(error: np.ndarray, ctrl: WheelController, dt: float) -> np.ndarray:
    """One PI update per wheel; mutates the controller state."""
    if ctrl.ki > 0.0:
        cap = ctrl.torque_limit / ctrl.ki
        ctrl.integral_state = np.clip(ctrl.integral_state + error * dt, -cap, cap)
    torque = ctrl.kp * error + ctrl.ki * ctrl.integral_state
    torque = np.clip(torque, -ctrl.torque_limit, ctrl.torque_limit)
    slew = ctrl.rate_limit * dt
    torque = np.clip(torque, ctrl.prev_torque - slew, ctrl.prev_torque + slew)
    ctrl.prev_torque = torque
    return torque


@dataclass(frozen=True)
class ServoModel:
    """Second-order position tracking with delay, rate and angle limits."""

    natural_freq: float = 40.0  # rad/s
    damping: float = 0.9
    rate_limit: float = 8.0  # rad/s
    angle_limit: float = SERVO_ANGLE_MAX
    delay_steps: int = 2


@dataclass
class ServoTracker:
    """Per-environment state for the two tilt servos."""

    model: ServoModel
    angles: np.ndarray = field(default_factory=lambda: np.zeros(2))
    rates: np.ndarray = field(default_factory=lambda: np.zeros(2))
    delay_buffer: list = field(default_factory=list)

    def reset(self):
        self.angles[:] = 0.0
        self.rates[:] = 0.0
        self.delay_buffer.clear()

    def step(self, ref: np.ndarray, dt: float, rate_limit_scale: float = 1.0) -> np.ndarray:
        m = self.model
        ref = np.clip(ref, -m.angle_limit, m.angle_limit)
        self.delay_buffer.append(ref.copy())
        if len(self.delay_buffer) > m.delay_steps + 1:
            self.delay_buffer.pop(0)
        delayed = self.delay_buffer[0]
        acc = m.natural_freq**2 * (delayed - self.angles) - 2.0 * m.damping * m.natural_freq * self.rates
        limit = m.rate_limit * rate_limit_scale
        self.rates = np.clip(self.rates + dt * acc, -limit, limit)
        self.angles = self.angles + dt * self.rates
        over = np.abs(self.angles) > m.angle_limit
        if over.any():
            self.angles = np.clip(self.angles, -m.angle_limit, m.angle_limit)
            self.rates = np.where(over, 0.0, self.rates)
        return self.angles


def servo_track_step(
    ref: np.ndarray, model: ServoModel, tracker: ServoTracker, dt: float
) -> np.ndarray:
    """Advance the delayed second-order servo response toward `ref`."""
    assert tracker.model is model or tracker.model == model
    return tracker.step(np.asarray(ref, dtype=float), dt)


@dataclass
class PropLag:
    """First-order lag between commanded and realized propeller rates."""

    time_constant: float = 0.05
    rates: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def reset(self):
        self.rates[:] = 0.0

    def step(self, rate_cmd: np.ndarray, dt: float) -> np.ndarray:
        alpha = 1.0 - math.exp(-dt / self.time_constant)
        self.rates = self.rates + alpha * (rate_cmd - self.rates)
        return self.rates
