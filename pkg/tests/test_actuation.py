import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridloco.actuation import (
    ActuatorCommand,
    FitFailed,
    InvalidMap,
    PowerModel,
    ServoModel,
    ServoTracker,
    ThrustMap,
    WheelController,
    electrical_power,
    fit_power_poly,
    fit_thrust_map,
    omega_to_pwm,
    pwm_to_thrust,
    wheel_pi_step,
)
from hybridloco.config import load_calibration, load_config

DT = 0.005


class TestOmegaToPwm:
    def test_idle(self):
        assert omega_to_pwm(0.0) == 1000.0

    def test_saturation(self):
        assert omega_to_pwm(500.0) == 2000.0

    def test_midpoint(self):
        assert omega_to_pwm(250.0) == 1500.0

    def test_sign_insensitive(self):
        assert omega_to_pwm(-250.0) == 1500.0

    @given(st.floats(-1000, 1000), st.floats(-1000, 1000))
    def test_lipschitz(self, a, b):
        assert abs(omega_to_pwm(a) - omega_to_pwm(b)) <= 2.0 * abs(a - b) + 1e-9

    def test_idempotent_at_bounds(self):
        assert omega_to_pwm(700.0) == 2000.0
        assert omega_to_pwm(500.0) == omega_to_pwm(600.0)


@pytest.fixture(scope="module")
def default_maps():
    cfg = load_config()
    tmap, pmodel, meta = load_calibration(cfg)
    return tmap, pmodel, meta


class TestThrustMap:
    def test_default_map_zero_at_idle(self, default_maps):
        tmap, _, _ = default_maps
        # independent oracle: straight polynomial evaluation of the stored
        # coefficients, no clamping
        raw = sum(c * 1000.0 ** (4 - k) for k, c in enumerate(tmap.coeffs))
        assert abs(raw) < 1e-6
        assert pwm_to_thrust(1000.0, tmap) == 0.0

    def test_monotone(self, default_maps):
        tmap, _, _ = default_maps
        assert pwm_to_thrust(1800.0, tmap) >= pwm_to_thrust(1400.0, tmap)
        grid = np.arange(1000.0, 2001.0)
        vals = np.array([tmap.thrust(p) for p in grid])
        assert (np.diff(vals) >= -1e-9).all()

    def test_linear_map_example(self):
        tmap = ThrustMap(coeffs=np.array([0.0, 0.0, 0.0, 1e-3, -1.0]))
        assert pwm_to_thrust(1500.0, tmap) == pytest.approx(0.5, abs=1e-12)

    def test_invalid_map_rejected(self):
        with pytest.raises(InvalidMap):
            ThrustMap(coeffs=np.array([0.0, 0.0, 0.0, -1e-3, 1.0]))  # decreasing
        with pytest.raises(InvalidMap):
            ThrustMap(coeffs=np.array([0.0, 0.0, 0.0, 1e-3, 0.5]))  # nonzero at idle


class TestFitThrustMap:
    def test_round_trip_on_known_quadratic(self):
        pwm = np.linspace(1000.0, 2000.0, 21)
        thrust = 2e-6 * (pwm - 1000.0) ** 2
        tmap, fit = fit_thrust_map(np.column_stack([pwm, thrust]))
        assert fit.rmse <= 1e-9
        for p in (1000.0, 1250.0, 1700.0, 2000.0):
            assert tmap.thrust(p) == pytest.approx(2e-6 * (p - 1000.0) ** 2, abs=1e-9)

    def test_noise_floor(self):
        rng = np.random.default_rng(7)
        pwm = np.linspace(1000.0, 2000.0, 41)
        thrust = 2e-6 * (pwm - 1000.0) ** 2 + rng.normal(0.0, 0.004, pwm.shape)
        tmap, fit = fit_thrust_map(np.column_stack([pwm, thrust]))
        assert fit.rmse <= 8e-3

    def test_underdetermined_fails(self):
        pwm = np.linspace(1000.0, 2000.0, 5)
        with pytest.raises(FitFailed):
            fit_thrust_map(np.column_stack([pwm, pwm * 0.0]))

    def test_insufficient_span_fails(self):
        pwm = np.linspace(1400.0, 1600.0, 20)
        with pytest.raises(FitFailed):
            fit_thrust_map(np.column_stack([pwm, (pwm - 1000) * 1e-3]))

    def test_power_fit_kinds(self):
        pwm = np.linspace(1000.0, 2000.0, 21)
        fit = fit_power_poly(np.column_stack([pwm, 0.1 * (pwm - 1000.0)]), kind="pwm")
        assert fit.rmse < 1e-9
        rpm = np.linspace(0.0, 4000.0, 21)
        fit = fit_power_poly(np.column_stack([rpm, 1e-3 * rpm + 1e-7 * rpm**2]), kind="rpm")
        assert fit.rmse < 1e-9


class TestElectricalPower:
    def test_zero_command_zero_power(self, default_maps):
        _, pmodel, _ = default_maps
        p_prop, p_wheel = electrical_power(ActuatorCommand.idle(), pmodel)
        assert p_prop == 0.0 and p_wheel == 0.0

    def test_rpm_conversion(self):
        # wheel poly = identity on rpm makes the conversion visible
        pmodel = PowerModel(prop_coeffs=np.zeros(5), wheel_coeffs=np.array([0.0, 1.0, 0.0]))
        cmd = ActuatorCommand(
            pwm_prop=np.array([1000.0, 1000.0]),
            wheel_rate_ref=np.array([2.0 * math.pi, 0.0]),
            servo_angle_ref=np.zeros(2),
        )
        _, p_wheel = electrical_power(cmd, pmodel)
        assert p_wheel == pytest.approx(60.0, abs=1e-9)

    def test_monotone_in_pwm(self, default_maps):
        _, pmodel, _ = default_maps
        lo = ActuatorCommand(pwm_prop=np.array([1300.0, 1000.0]), wheel_rate_ref=np.zeros(2), servo_angle_ref=np.zeros(2))
        hi = ActuatorCommand(pwm_prop=np.array([1600.0, 1000.0]), wheel_rate_ref=np.zeros(2), servo_angle_ref=np.zeros(2))
        assert electrical_power(hi, pmodel)[0] >= electrical_power(lo, pmodel)[0]

    def test_hover_to_drive_power_ratio(self, default_maps):
        # design target baked into the default calibration: hover power at
        # least 3x the wheel power at 1 m/s driving (0.03 m wheels)
        tmap, pmodel, _ = default_maps
        hover_pwm = 1600.0
        assert 2.0 * tmap.thrust(hover_pwm) == pytest.approx(1.2 * 9.81, rel=0.01)
        hover = ActuatorCommand(pwm_prop=np.array([hover_pwm, hover_pwm]), wheel_rate_ref=np.zeros(2), servo_angle_ref=np.zeros(2))
        drive = ActuatorCommand(
            pwm_prop=np.array([1000.0, 1000.0]),
            wheel_rate_ref=np.array([1.0 / 0.03, 1.0 / 0.03]),
            servo_angle_ref=np.zeros(2),
        )
        p_hover = sum(electrical_power(hover, pmodel))
        p_drive = sum(electrical_power(drive, pmodel))
        assert p_hover >= 3.0 * p_drive

    def test_energy_ledger_additivity(self, default_maps):
        _, pmodel, _ = default_maps
        rng = np.random.default_rng(3)
        dt = 0.02
        total = 0.0
        steps = []
        for _ in range(500):
            cmd = ActuatorCommand(
                pwm_prop=rng.uniform(1000, 2000, 2),
                wheel_rate_ref=rng.uniform(-500, 500, 2),
                servo_angle_ref=rng.uniform(-1.5, 1.5, 2),
            )
            p1, p2 = electrical_power(cmd, pmodel)
            e = (p1 + p2) * dt
            steps.append(e)
            total += e
        replay = 0.0
        for e in steps:
            replay += e
        assert replay == total  # exact: same accumulation order


class TestWheelPi:
    def test_pure_proportional(self):
        ctrl = WheelController(kp=0.1, ki=0.0, torque_limit=10.0, rate_limit=1e9)
        torque = wheel_pi_step(np.array([2.0, 0.0]), ctrl, DT)
        assert torque[0] == pytest.approx(0.2, abs=1e-12)
        assert torque[1] == 0.0

    def test_zero_error_fixed_point(self):
        ctrl = WheelController()
        for _ in range(100):
            torque = wheel_pi_step(np.zeros(2), ctrl, DT)
        assert (torque == 0.0).all()

    def test_integral_windup_saturates_and_holds(self):
        ctrl = WheelController(kp=0.0, ki=1.0, torque_limit=0.5, rate_limit=1e9)
        prev = 0.0
        for _ in range(2000):
            torque = wheel_pi_step(np.array([1.0, 1.0]), ctrl, DT)
            assert torque[0] >= prev - 1e-12
            prev = torque[0]
        assert torque[0] == pytest.approx(0.5, abs=1e-12)
        # anti-windup: integral clamped so ki*integral stays at the limit
        assert ctrl.ki * ctrl.integral_state[0] <= 0.5 + 1e-12

    def test_torque_slew_limit(self):
        ctrl = WheelController(kp=1.0, ki=0.0, torque_limit=10.0, rate_limit=2.0)
        torque = wheel_pi_step(np.array([100.0, 100.0]), ctrl, DT)
        assert torque[0] == pytest.approx(2.0 * DT, abs=1e-12)


class TestServo:
    def test_reference_fixed_point(self):
        tracker = ServoTracker(model=ServoModel())
        tracker.angles = np.array([0.3, -0.2])
        ref = tracker.angles.copy()
        for _ in range(200):
            out = tracker.step(ref, DT)
        assert np.abs(out - ref).max() < 1e-9

    def test_step_settles_within_documented_time(self):
        # config documents < 0.45 s for a full-range step
        model = ServoModel()
        tracker = ServoTracker(model=model)
        ref = np.array([math.pi / 2, math.pi / 2])
        steps = int(0.45 / DT)
        for _ in range(steps):
            out = tracker.step(ref, DT)
        assert np.abs(out - ref).max() < 0.05 * (math.pi / 2)

    def test_angle_limit_clamps_reference(self):
        tracker = ServoTracker(model=ServoModel())
        for _ in range(400):
            out = tracker.step(np.array([math.pi, math.pi]), DT)
        assert out.max() <= math.pi / 2 + 1e-12
        assert out[0] == pytest.approx(math.pi / 2, abs=0.05)

    def test_monotone_approach(self):
        tracker = ServoTracker(model=ServoModel())
        ref = np.array([0.5, 0.5])
        prev = 0.0
        for _ in range(200):
            out = tracker.step(ref, DT)
            assert out[0] >= prev - 5e-3  # damping 0.9: near-monotone
            prev = out[0]

    def test_rate_limit(self):
        model = ServoModel(rate_limit=1.0)
        tracker = ServoTracker(model=model)
        prev = np.zeros(2)
        for _ in range(100):
            out = tracker.step(np.array([1.5, 1.5]), DT)
            assert np.abs(out - prev).max() <= 1.0 * DT + 1e-12
            prev = out.copy()


class TestActuatorCommand:
    def test_clamps_on_construction(self):
        cmd = ActuatorCommand(
            pwm_prop=np.array([900.0, 2500.0]),
            wheel_rate_ref=np.array([-900.0, 900.0]),
            servo_angle_ref=np.array([-3.0, 3.0]),
        )
        assert (cmd.pwm_prop == [1000.0, 2000.0]).all()
        assert (cmd.wheel_rate_ref == [-500.0, 500.0]).all()
        assert np.allclose(cmd.servo_angle_ref, [-math.pi / 2, math.pi / 2])


class TestClosedLoopTracking:
    def test_wheel_rate_error_below_5_percent_within_1s(self):
        # closed loop with the contact model on flat ground, base held level
        # by the standing thrust preset; the reference ramps to a constant
        # 20 rad/s (a cold step reference just backflips the robot, which
        # makes it unachievable in closed loop) and must track within 5%
        # one second after turning constant
        from hybridloco.baseline import DecoupledConfig, DecoupledController
        from hybridloco.config import (
            build_contact,
            build_inertial,
            build_servo_model,
            build_wheel_controller,
            load_calibration,
            load_config,
        )
        from hybridloco.rigidbody import RobotState
        from hybridloco.sim import Simulator
        from hybridloco.terrain import single_step_field

        cfg = load_config()
        tmap, _, _ = load_calibration(cfg)
        preset = dict(cfg["baseline"]["decouple_stand"])
        preset["wheel_script"] = [[0.0, 0, 0], [1.5, 0, 0], [4.0, 20.0, 20.0], [30.0, 20.0, 20.0]]
        ctrl = DecoupledController(DecoupledConfig.from_dict(preset))
        sim = Simulator(
            RobotState.at_rest((0.0, 0.0, 0.07)),
            build_inertial(cfg),
            build_contact(cfg),
            single_step_field(0.0, step_x=100.0, extent=8.0),
            tmap,
            wheel_ctrl=build_wheel_controller(cfg),
            servo_model=build_servo_model(cfg),
        )
        for k in range(int(5.0 * 50)):  # constant from t=4, measure at t=5
            cmd = ctrl.command(sim.state, k * 0.02, 0.02)
            for _ in range(4):
                sim.substep(cmd)
        err = abs(sim.state.wheel_rates[0] - 20.0) / 20.0
        assert err < 0.05
