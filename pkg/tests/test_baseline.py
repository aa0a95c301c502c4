import math

import numpy as np
import pytest

from conftest import run_decoupled
from hybridloco.baseline import DecoupledConfig, DecoupledController, script_wheel_refs
from hybridloco.rigidbody import RobotState, rotation_about_y
from hybridloco.terrain import single_step_field


def synthetic_cfg(**over):
    base = dict(
        pitch_ref=0.0,
        hold_pwm=1400.0,
        kp=200.0,
        ki=50.0,
        kd=20.0,
        tilt_bias=0.0,
        wheel_script=((0.0, 0.0, 0.0), (1.0, 10.0, 10.0), (20.0, 10.0, 10.0)),
    )
    base.update(over)
    return DecoupledConfig(**base)


class TestDecoupledCommand:
    def test_zero_error_gives_hold_throttle(self):
        cfg = synthetic_cfg()
        ctrl = DecoupledController(cfg)
        state = RobotState.at_rest()
        cmd = ctrl.command(state, 0.0, 0.02)
        assert (cmd.pwm_prop == 1400.0).all()

    def test_tilt_rule_direct(self):
        cfg = synthetic_cfg(tilt_bias=0.1)
        ctrl = DecoupledController(cfg)
        state = RobotState.at_rest()  # pitch = 0
        cmd = ctrl.command(state, 0.0, 0.02)
        assert np.allclose(cmd.servo_angle_ref, 0.1)

    def test_tilt_follows_negative_pitch(self):
        cfg = synthetic_cfg(kp=0.0, ki=0.0, kd=0.0)
        ctrl = DecoupledController(cfg)
        state = RobotState.at_rest()
        state.rotation = rotation_about_y(0.3)  # nose down 0.3 rad
        cmd = ctrl.command(state, 0.0, 0.02)
        assert np.allclose(cmd.servo_angle_ref, -0.3, atol=1e-12)

    def test_channels_always_symmetric(self):
        cfg = synthetic_cfg(ki=80.0, kd=40.0)
        ctrl = DecoupledController(cfg)
        rng = np.random.default_rng(0)
        state = RobotState.at_rest()
        for k in range(100):
            state.rotation = rotation_about_y(rng.uniform(-1.0, 1.0))
            state.angular_velocity = rng.uniform(-3, 3, 3)
            cmd = ctrl.command(state, k * 0.02, 0.02)
            assert cmd.pwm_prop[0] == cmd.pwm_prop[1]
            assert cmd.servo_angle_ref[0] == cmd.servo_angle_ref[1]

    def test_throttle_saturates(self):
        cfg = synthetic_cfg(kp=1e5)
        ctrl = DecoupledController(cfg)
        state = RobotState.at_rest()
        state.rotation = rotation_about_y(-0.5)
        cmd = ctrl.command(state, 0.0, 0.02)
        assert 1000.0 <= cmd.pwm_prop[0] <= 2000.0

    def test_wheel_script_ramp(self):
        script = ((0.0, 0.0, 0.0), (2.0, 10.0, 20.0), (5.0, 10.0, 20.0))
        refs = script_wheel_refs(script, 1.0)
        assert refs[0] == pytest.approx(5.0)
        assert refs[1] == pytest.approx(10.0)
        refs = script_wheel_refs(script, 10.0)  # holds past the last knot
        assert refs[0] == 10.0


class TestPresets:
    def test_stand_holds_pitch_on_flat(self, base_cfg):
        dcfg = DecoupledConfig.from_dict(base_cfg["baseline"]["decouple_stand"])
        flat = single_step_field(0.0, step_x=100.0, extent=8.0)
        peak, mounted, state = run_decoupled(base_cfg, dcfg, flat, 0.0, seconds=15.0, pitch0=0.02)
        assert peak <= 10.0
        assert state.position[0] > 2.0  # the scripted drive actually moves

    def test_stand_fails_single_step(self, base_cfg):
        dcfg = DecoupledConfig.from_dict(base_cfg["baseline"]["decouple_stand"])
        step = single_step_field(0.08, step_x=0.0, extent=8.0)
        peak, mounted, state = run_decoupled(base_cfg, dcfg, step, -1.0, seconds=15.0)
        assert mounted is None
        assert state.position[0] < 0.35

    def test_fwd_mounts_single_step_with_large_excursion(self, base_cfg):
        dcfg = DecoupledConfig.from_dict(base_cfg["baseline"]["decouple_fwd"])
        step = single_step_field(0.08, step_x=0.0, extent=8.0)
        peak, mounted, state = run_decoupled(base_cfg, dcfg, step, -1.0, seconds=12.0)
        assert mounted is not None
        assert state.position[0] > 1.0
        assert peak >= 30.0  # 3x the flat-ground band

    def test_climb_coupling_aggressive_script_excursion(self, base_cfg):
        # wheel-drive coupling: an aggressive script against the riser
        # produces pitch excursions far beyond the flat-ground band
        d = dict(base_cfg["baseline"]["decouple_stand"])
        d["wheel_script"] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.5, 60.0, 60.0], [30.0, 60.0, 60.0]]
        dcfg = DecoupledConfig.from_dict(d)
        step = single_step_field(0.08, step_x=0.0, extent=8.0)
        peak, _, _ = run_decoupled(base_cfg, dcfg, step, -1.0, seconds=10.0)
        assert peak > 30.0
