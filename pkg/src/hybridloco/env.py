"""Goal-directed traversal MDP: observations, actions, reward, termination.

Stepping runs `decimation` physics substeps per control step (200 Hz
physics, 50 Hz control). Episodes auto-reset lazily: the step that
terminates returns the terminal observation and reward; the next call
ignores its action, performs the reset, and returns the fresh episode's
first observation with zero reward (its result is flagged `reset_frame`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import config as cfgmod
from .actuation import (
    PWM_MIN,
    SERVO_ANGLE_MAX,
    WHEEL_RATE_MAX,
    ActuatorCommand,
    electrical_power,
    omega_to_pwm,
)
from .contact import contact_history_update, detect_collisions
from .rigidbody import (
    NonFiniteState,
    RobotState,
    euler_zyx,
    projected_gravity,
    yaw_of,
)
from .sim import PROP_SPIN_SIGNS, Simulator
from .terrain import (
    CurriculumState,
    SamplingFailed,
    add_micro_roughness,
    generate_inverted_pyramid,
    sample_spawn_and_target,
)

MODES = ("hybrid", "wheels_only", "props_only")

GOAL_EPS = 1e-6  # m, goal-direction regularizer


class Outcome:
    RUNNING = "running"
    GOAL = "goal"
    PROP_COLLISION = "prop_collision"
    OUT_OF_BOUNDS = "out_of_bounds"
    TIMEOUT = "timeout"
    NONFINITE = "nonfinite"

    TERMINAL = (GOAL, PROP_COLLISION, OUT_OF_BOUNDS, TIMEOUT, NONFINITE)


# ---------------------------------------------------------------------------
# MDP building blocks


def goal_command(robot_xy: np.ndarray, goal_xy: np.ndarray, yaw: float) -> tuple[float, float, float]:
    """Body-frame goal direction plus the sin(heading error) yaw command.

    The direction is an exact unit vector whenever the planar distance
    exceeds the regularizer; the heading error is the signed angle from
    the body forward axis to the goal direction (positive leftward).
    """
    dx = float(goal_xy[0] - robot_xy[0])
    dy = float(goal_xy[1] - robot_xy[1])
    norm = math.hypot(dx, dy)
    inv = 1.0 / max(norm, GOAL_EPS)
    c, s = math.cos(yaw), math.sin(yaw)
    dxb = (c * dx + s * dy) * inv
    dyb = (-s * dx + c * dy) * inv
    alpha = math.atan2(dyb, dxb)
    return dxb, dyb, math.sin(alpha)


def heading_error(dxb: float, dyb: float) -> float:
    return math.atan2(dyb, dxb)


def apply_mode_mask(action: np.ndarray, mode: str) -> np.ndarray:
    """Zero the disabled actuator channels (applied post-clamp)."""
    a = action.copy()
    if mode == "wheels_only":
        a[4:6] = 0.0
    elif mode == "props_only":
        a[0:2] = 0.0
    elif mode != "hybrid":
        raise ValueError(f"unknown mode {mode!r}")
    return a


def map_action(a: np.ndarray) -> ActuatorCommand:
    """[-1,1]^6 action -> wheel refs, servo refs, and prop PWM commands."""
    wheel_ref = WHEEL_RATE_MAX * a[0:2]
    servo_ref = SERVO_ANGLE_MAX * a[2:4]
    prop_rates = WHEEL_RATE_MAX * a[4:6] * PROP_SPIN_SIGNS
    pwm = np.array([omega_to_pwm(prop_rates[0]), omega_to_pwm(prop_rates[1])])
    return ActuatorCommand(pwm_prop=pwm, wheel_rate_ref=wheel_ref, servo_angle_ref=servo_ref)


def unmap_command(cmd: ActuatorCommand) -> np.ndarray:
    """Inverse of map_action; used to drive the env with raw commands."""
    a = np.empty(6)
    a[0:2] = cmd.wheel_rate_ref / WHEEL_RATE_MAX
    a[2:4] = cmd.servo_angle_ref / SERVO_ANGLE_MAX
    a[4:6] = (cmd.pwm_prop - PWM_MIN) / 1000.0  # both props positive action
    return np.clip(a, -1.0, 1.0)


@dataclass
class RewardBreakdown:
    r_align: float = 0.0
    r_target: float = 0.0
    r_energy: float = 0.0
    r_heading: float = 0.0
    r_tilt: float = 0.0
    r_speed: float = 0.0
    r_terminal: float = 0.0
    energy_j: float = 0.0
    power_prop_w: float = 0.0
    power_wheel_w: float = 0.0
    weighted_total: float = 0.0


@dataclass
class RewardConfig:
    w_align: float = 0.2
    w_target: float = 1.0
    w_energy: float = 0.05
    w_heading: float = 0.3
    w_tilt: float = 0.3
    w_speed: float = 0.1
    v_ref: float = 2.0
    v_max: float = 3.0
    e_ref: float = 20.0
    k_pitch: float = 3.0
    k_roll: float = 7.0
    goal_radius: float = 0.2
    sigma_floor: float = 0.5
    z_bound: float = 3.0
    xy_bound: float = 10.0

    @staticmethod
    def from_dict(d: dict) -> "RewardConfig":
        return RewardConfig(**{k: float(d[k]) for k in RewardConfig.__dataclass_fields__})


@dataclass
class EpisodeState:
    goal_xy: np.ndarray
    initial_distance: float  # proximity kernel width (sigma)
    step_count: int = 0
    timeout_steps: int = 750
    curriculum_k: int = 0
    randomization: dict = field(default_factory=dict)


def compute_reward(
    state: RobotState,
    rc: RewardConfig,
    goal_dir_body: tuple[float, float],
    alpha: float,
    goal_distance: float,
    energy_j: float,
    power_prop_w: float,
    power_wheel_w: float,
    sigma: float,
    r_terminal: float,
) -> RewardBreakdown:
    """All seven reward terms plus the exact weighted total."""
    v_body = state.rotation.T @ state.velocity
    v_xy = math.hypot(v_body[0], v_body[1])
    if v_xy > 1e-12:
        cosine = (v_body[0] * goal_dir_body[0] + v_body[1] * goal_dir_body[1]) / v_xy
    else:
        cosine = 0.0
    r_align = cosine * min(max(v_xy / rc.v_ref, 0.0), 1.0)

    r_target = math.exp(-(goal_distance**2) / (sigma**2))
    r_energy = math.exp(-energy_j / rc.e_ref) - 1.0
    r_heading = -abs(math.sin(alpha))

    g = projected_gravity(state)
    r_tilt = math.exp(-rc.k_pitch * math.sqrt(abs(g[0])) - rc.k_roll * math.sqrt(abs(g[1]))) - 1.0

    speed = float(np.linalg.norm(state.velocity))
    over = max(0.0, speed - rc.v_max)
    r_speed = math.exp(-(over**2)) - 1.0

    total = (
        rc.w_align * r_align
        + rc.w_target * r_target
        + rc.w_energy * r_energy
        + rc.w_heading * r_heading
        + rc.w_tilt * r_tilt
        + rc.w_speed * r_speed
        + r_terminal
    )
    return RewardBreakdown(
        r_align=r_align,
        r_target=r_target,
        r_energy=r_energy,
        r_heading=r_heading,
        r_tilt=r_tilt,
        r_speed=r_speed,
        r_terminal=r_terminal,
        energy_j=energy_j,
        power_prop_w=power_prop_w,
        power_wheel_w=power_wheel_w,
        weighted_total=total,
    )


def check_termination(
    state: RobotState, episode: EpisodeState, rc: RewardConfig, prop_collision: bool
) -> tuple[str, float]:
    """Outcome tag and terminal reward; goal test runs before failure tests."""
    dist = math.hypot(
        state.position[0] - episode.goal_xy[0], state.position[1] - episode.goal_xy[1]
    )
    if dist < rc.goal_radius:
        return Outcome.GOAL, 10.0
    if prop_collision:
        return Outcome.PROP_COLLISION, -10.0
    if abs(state.position[2]) > rc.z_bound or max(abs(state.position[0]), abs(state.position[1])) > rc.xy_bound:
        return Outcome.OUT_OF_BOUNDS, -10.0
    if episode.step_count >= episode.timeout_steps:
        return Outcome.TIMEOUT, 0.0
    return Outcome.RUNNING, 0.0


def observation_layout(history_length: int, scan_size: int = 6) -> dict[str, slice]:
    """Named index ranges of the observation vector."""
    sizes = [
        ("wheel_rates", 2),
        ("lin_vel", 3),
        ("ang_vel", 3),
        ("projected_gravity", 3),
        ("contact_flags", 2 * history_length),
        ("goal_cmd", 3),
        ("height_scan", scan_size * scan_size),
        ("prev_action", 6),
    ]
    layout = {}
    i = 0
    for name, n in sizes:
        layout[name] = slice(i, i + n)
        i += n
    layout["_total"] = slice(0, i)
    return layout


# ---------------------------------------------------------------------------
# the environment


@dataclass
class StepResult:
    obs: np.ndarray
    reward: RewardBreakdown
    outcome: str
    terminal: bool
    reset_frame: bool = False
    energy_cum: float = 0.0  # episode-accumulated joules


class HybridEnv:
    """One robot on one procedurally drawn terrain tile."""

    def __init__(self, cfg: dict, seed: int = 0, env_index: int = 0, log_dir=None):
        self.cfg = cfg
        self.env_index = env_index
        self.seed = seed
        # per-env stream: master seed + env index (documented derivation)
        self._rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(env_index,)))

        self.nominal = cfgmod.build_inertial(cfg)
        self.contact_base = cfgmod.build_contact(cfg)
        self.servo_model = cfgmod.build_servo_model(cfg)
        self.thrust_map, self.power_model, _ = cfgmod.load_calibration(cfg)
        self.reward_cfg = RewardConfig.from_dict(cfg["reward"])

        e = cfg["env"]
        self.physics_dt = float(e["physics_dt"])
        self.decimation = int(e["decimation"])
        self.control_dt = self.physics_dt * self.decimation
        self.timeout_steps = int(e["timeout_steps"])
        self.history_length = int(e["history_length"])
        self.scan_size = int(e["scan_size"])
        self.scan_spacing = float(e["scan_spacing"])
        self.scan_range = float(e["scan_range"])
        self.lin_vel_scale = float(e["lin_vel_scale"])
        self.ang_vel_scale = float(e["ang_vel_scale"])
        self.wheel_rate_scale = float(e["wheel_rate_scale"])
        self.mode = str(e["mode"])
        if self.mode not in MODES:
            raise cfgmod.ConfigError(f"unknown mode {self.mode!r}")

        self.layout = observation_layout(self.history_length, self.scan_size)
        self.obs_dim = self.layout["_total"].stop
        self.action_dim = 6

        t = cfg["terrain"]
        self.difficulty_fixed = t.get("fixed_difficulty")
        self.difficulty_range = tuple(t["difficulty_range"])
        rnd = cfg["randomization"]
        self.rand_ranges = {k: float(rnd[k]) for k in (
            "mass_range", "inertia_range", "friction_range", "thrust_range", "servo_rate_range",
        )}
        self.rand_roughness = float(rnd["roughness_amplitude"])

        self.curriculum = CurriculumState(
            min_dist=float(cfg["curriculum"]["min_dist"]),
            max_cap=float(cfg["curriculum"]["max_cap"]),
        )
        self.prop_lag_tau = float(cfg["actuation"]["prop_lag_time_constant"])
        self.energy_realized = bool(cfg["actuation"]["energy_uses_realized_rates"])
        self.prop_yaw_drag = float(cfg["actuation"].get("prop_yaw_drag", 0.0))

        # scan grid offsets, row-major over (x, y)
        half = (self.scan_size - 1) / 2.0
        offs = (np.arange(self.scan_size) - half) * self.scan_spacing
        self._scan_offsets = np.array([(ox, oy) for ox in offs for oy in offs])

        self._logger = EpisodeLogger(log_dir, env_index) if log_dir is not None else None

        self.sim: Simulator | None = None
        self.episode: EpisodeState | None = None
        self._terrain_override = None  # lazily loaded terrain_file grid
        self._needs_reset = True
        self._prev_action = np.zeros(6)
        self._contact_history = np.zeros((self.history_length, 2))
        self._e_cum = 0.0
        self._return_cum = 0.0

    # -- episode lifecycle ---------------------------------------------------

    def reset(self) -> np.ndarray:
        """Draw a fresh randomized episode and return its first observation."""
        rng = self._rng
        # fixed draw order keeps trajectories reproducible per (seed, env)
        if self.difficulty_fixed is not None:
            difficulty = float(self.difficulty_fixed)
        else:
            difficulty = float(rng.uniform(*self.difficulty_range))
        roughness_seed = int(rng.integers(0, 2**31 - 1))
        scales = {}
        for key, r in self.rand_ranges.items():
            scales[key] = float(rng.uniform(1.0 - r, 1.0 + r))

        scenario = self.cfg["env"].get("scenario")
        if scenario:
            field_, spawn_xy, yaw, goal_xy = self._scenario_setup(scenario)
        else:
            spec = cfgmod.build_terrain_spec(self.cfg, difficulty=difficulty, seed=roughness_seed)
            terrain_file = self.cfg["terrain"].get("terrain_file")
            if terrain_file:
                if self._terrain_override is None:
                    from .terrain import load_heightfield

                    self._terrain_override = load_heightfield(terrain_file)
                field_ = self._terrain_override
            else:
                field_ = generate_inverted_pyramid(spec)
            self.terrain_spec = spec
            sample = sample_spawn_and_target(field_, spec, self.curriculum, rng)
            spawn_xy, yaw, goal_xy = sample.spawn_xy, sample.yaw, sample.target_xy
        if self.rand_roughness > 0.0:
            field_ = add_micro_roughness(field_, self.rand_roughness, roughness_seed)
        self.field = field_

        k_used = self.curriculum.episode_index
        self.curriculum.advance()

        self.params = self.nominal.scaled(scales["mass_range"], scales["inertia_range"])
        self.mu = self.contact_base.friction * scales["friction_range"]
        self.thrust_scale = scales["thrust_range"]
        self.servo_rate_scale = scales["servo_rate_range"]

        rest_clearance = self.contact_base.wheel_radius - float(self.nominal.wheel_arms[0][2])
        ground = field_.height_at(spawn_xy[0], spawn_xy[1])
        start = RobotState.at_rest(
            position=(spawn_xy[0], spawn_xy[1], ground + rest_clearance),
            yaw=yaw,
        )
        distance = math.hypot(goal_xy[0] - spawn_xy[0], goal_xy[1] - spawn_xy[1])
        self.episode = EpisodeState(
            goal_xy=np.asarray(goal_xy, dtype=float).copy(),
            initial_distance=max(distance, self.reward_cfg.sigma_floor),
            timeout_steps=self.timeout_steps,
            curriculum_k=k_used,
            randomization=scales,
        )
        self.sim = Simulator(
            state=start,
            params=self.params,
            contact_params=self.contact_base,
            field=field_,
            thrust_map=self.thrust_map,
            mu=self.mu,
            thrust_scale=self.thrust_scale,
            servo_rate_scale=self.servo_rate_scale,
            servo_model=self.servo_model,
            wheel_ctrl=cfgmod.build_wheel_controller(self.cfg),
            prop_lag_tau=self.prop_lag_tau,
            dt=self.physics_dt,
            prop_yaw_drag=self.prop_yaw_drag,
        )
        self._contact_history = np.zeros((self.history_length, 2))
        self._prev_action = np.zeros(6)
        self._e_cum = 0.0
        self._return_cum = 0.0
        self._needs_reset = False
        if self._logger is not None:
            self._logger.start_episode()
        return self._observe()

    def _scenario_setup(self, scenario: dict):
        """Single-step gap task; spawn/goal jitter defeats spot memorization.

        With `jitter` > 0 the spawn and goal are drawn per episode from
        boxes around the configured points (goal always past the riser),
        mirroring the sampled-goal training protocol; jitter 0 pins them.
        """
        if scenario.get("type") != "single_step":
            raise cfgmod.ConfigError(f"unknown scenario {scenario!r}")
        from .terrain import single_step_field

        field_ = single_step_field(
            height=float(scenario["height"]),
            step_x=float(scenario.get("step_x", 0.0)),
            extent=float(scenario.get("extent", 6.0)),
            resolution=float(self.cfg["terrain"]["cell_resolution"]),
        )
        start_x = float(scenario.get("start_x", -1.0))
        goal_x = float(scenario.get("goal_x", 2.0))
        jitter = float(scenario.get("jitter", 0.0))
        rng = self._rng
        if scenario.get("sample_goals"):
            # distance-curriculum training draw: goals fan out ahead of the
            # spawn, some short of the riser and some past it, so capture
            # is discovered early and its value propagates backward
            spawn = np.array([
                start_x + rng.uniform(-max(jitter, 0.4), max(jitter, 0.4)),
                rng.uniform(-0.8, 0.8),
            ])
            dist = float(rng.uniform(0.5, 3.5))
            ang = float(rng.uniform(-0.7, 0.7))
            goal = spawn + dist * np.array([math.cos(ang), math.sin(ang)])
            goal[1] = min(max(goal[1], -1.5), 1.5)
            yaw = float(rng.uniform(-0.3, 0.3))
        elif jitter > 0.0:
            spawn = np.array([
                start_x + rng.uniform(-jitter, jitter),
                rng.uniform(-2.0 * jitter, 2.0 * jitter),
            ])
            goal = np.array([
                max(goal_x + rng.uniform(-jitter, jitter), 0.4),
                rng.uniform(-2.0 * jitter, 2.0 * jitter),
            ])
            yaw = float(rng.uniform(-0.3, 0.3))
        else:
            spawn = np.array([start_x, 0.0])
            goal = np.array([goal_x, 0.0])
            yaw = 0.0
        return field_, spawn, yaw, goal

    @property
    def episode_return(self) -> float:
        """Sum of weighted step rewards over the current episode."""
        return self._return_cum

    @property
    def state(self) -> RobotState:
        return self.sim.state

    def step(self, action: np.ndarray) -> StepResult:
        if self._needs_reset:
            obs = self.reset()
            return StepResult(obs, RewardBreakdown(), Outcome.RUNNING, False, reset_frame=True)

        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        a = apply_mode_mask(a, self.mode)
        cmd = map_action(a)
        self._prev_action = a

        outcome = Outcome.RUNNING
        try:
            for _ in range(self.decimation):
                self.sim.substep(cmd)
        except NonFiniteState:
            outcome = Outcome.NONFINITE

        self.episode.step_count += 1

        if self.energy_realized:
            realized = ActuatorCommand(
                pwm_prop=np.array([omega_to_pwm(w) for w in self.state.prop_rates]),
                wheel_rate_ref=self.state.wheel_rates.copy(),
                servo_angle_ref=cmd.servo_angle_ref,
            )
            p_prop, p_wheel = electrical_power(realized, self.power_model)
        else:
            p_prop, p_wheel = electrical_power(cmd, self.power_model)
        energy = (p_prop + p_wheel) * self.control_dt
        self._e_cum += energy

        dxb, dyb, _ = goal_command(self.state.position[:2], self.episode.goal_xy, yaw_of(self.state.rotation))
        alpha = heading_error(dxb, dyb)
        goal_dist = math.hypot(
            self.state.position[0] - self.episode.goal_xy[0],
            self.state.position[1] - self.episode.goal_xy[1],
        )

        if outcome == Outcome.NONFINITE:
            # collision-class failure: terminal -10, distinct tag in logs
            r_term = -10.0
            reward = RewardBreakdown(
                r_terminal=r_term,
                energy_j=energy,
                power_prop_w=p_prop,
                power_wheel_w=p_wheel,
                weighted_total=r_term,
            )
            terminal = True
            obs = np.zeros(self.obs_dim)
        else:
            _, prop_hit = detect_collisions(self.state, self.params, self.contact_base, self.field)
            outcome, r_term = check_termination(self.state, self.episode, self.reward_cfg, prop_hit)
            reward = compute_reward(
                self.state,
                self.reward_cfg,
                (dxb, dyb),
                alpha,
                goal_dist,
                energy,
                p_prop,
                p_wheel,
                self.episode.initial_distance,
                r_term,
            )
            terminal = outcome != Outcome.RUNNING
            last = self.sim.last_contact
            flags = np.array(
                [1.0 if w.in_contact else 0.0 for w in last.wheels] if last.wheels else [0.0, 0.0]
            )
            self._contact_history = contact_history_update(self._contact_history, flags)
            obs = self._observe()

        self._return_cum += reward.weighted_total
        if self._logger is not None:
            self._logger.log_step(
                t=self.episode.step_count * self.control_dt,
                state=self.state,
                cmd=cmd,
                p_prop=p_prop,
                p_wheel=p_wheel,
                e_cum=self._e_cum,
                r_total=reward.weighted_total,
                outcome=outcome,
            )
        if terminal:
            self._needs_reset = True
        return StepResult(obs, reward, outcome, terminal, energy_cum=self._e_cum)

    # -- internals -------------------------------------------------------

    def _observe(self) -> np.ndarray:
        st = self.state
        L = self.layout
        obs = np.empty(self.obs_dim)
        obs[L["wheel_rates"]] = st.wheel_rates / self.wheel_rate_scale
        obs[L["lin_vel"]] = (st.rotation.T @ st.velocity) / self.lin_vel_scale
        obs[L["ang_vel"]] = st.angular_velocity / self.ang_vel_scale
        obs[L["projected_gravity"]] = projected_gravity(st)
        obs[L["contact_flags"]] = self._contact_history.reshape(-1)
        dxb, dyb, wz = goal_command(st.position[:2], self.episode.goal_xy, yaw_of(st.rotation))
        obs[L["goal_cmd"]] = (dxb, dyb, wz)
        obs[L["height_scan"]] = self._height_scan()
        obs[L["prev_action"]] = self._prev_action
        return obs

    def _height_scan(self) -> np.ndarray:
        st = self.state
        yaw = yaw_of(st.rotation)
        c, s = math.cos(yaw), math.sin(yaw)
        bx, by, bz = st.position
        ox = self._scan_offsets[:, 0]
        oy = self._scan_offsets[:, 1]
        xs = bx + c * ox - s * oy
        ys = by + s * ox + c * oy
        out = (self.field.height_batch(xs, ys) - bz) / self.scan_range
        return np.clip(out, -1.0, 1.0)

    def close(self):
        if self._logger is not None:
            self._logger.close()


class VectorEnv:
    """Lockstep batch of independent environments (bitwise == map(step))."""

    def __init__(self, cfg: dict, env_count: int, seed: int = 0, log_dir=None):
        self.envs = [HybridEnv(cfg, seed=seed, env_index=i, log_dir=log_dir) for i in range(env_count)]
        self.env_count = env_count
        self.obs_dim = self.envs[0].obs_dim
        self.action_dim = self.envs[0].action_dim
        self.layout = self.envs[0].layout

    def reset(self) -> np.ndarray:
        return np.stack([e.reset() for e in self.envs])

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, list, np.ndarray]:
        """Returns (obs, rewards, terminals, outcomes, reset_frames)."""
        if actions.shape != (self.env_count, 6):
            raise ValueError(f"actions must be ({self.env_count}, 6), got {actions.shape}")
        results = [env.step(actions[i]) for i, env in enumerate(self.envs)]
        obs = np.stack([r.obs for r in results])
        rewards = np.array([r.reward.weighted_total for r in results])
        terminals = np.array([r.terminal for r in results])
        outcomes = [r.outcome for r in results]
        reset_frames = np.array([r.reset_frame for r in results])
        return obs, rewards, terminals, outcomes, reset_frames

    def step_results(self, actions: np.ndarray) -> list[StepResult]:
        if actions.shape != (self.env_count, 6):
            raise ValueError(f"actions must be ({self.env_count}, 6), got {actions.shape}")
        return [env.step(actions[i]) for i, env in enumerate(self.envs)]

    def close(self):
        for e in self.envs:
            e.close()


def vector_step(envs: VectorEnv, actions: np.ndarray):
    return envs.step(actions)


# ---------------------------------------------------------------------------
# episode CSV logging (schema v1; golden-file tested)

EPISODE_CSV_HEADER = (
    "t,x,y,z,pitch,roll,yaw,vx,vy,vz,pwm1,pwm2,w1_ref,w2_ref,s1,s2,"
    "P_prop,P_wheel,E_cum,r_total,outcome"
)


class EpisodeLogger:
    """One CSV per episode per env; floats use shortest round-trip repr."""

    def __init__(self, log_dir, env_index: int):
        import pathlib

        self.dir = pathlib.Path(log_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.env_index = env_index
        self.episode = -1
        self._fh = None

    def start_episode(self):
        if self._fh is not None:
            self._fh.close()
        self.episode += 1
        path = self.dir / f"ep{self.episode:03d}_env{self.env_index:02d}.csv"
        self._fh = open(path, "w")
        self._fh.write(EPISODE_CSV_HEADER + "\n")

    def log_step(self, t, state, cmd, p_prop, p_wheel, e_cum, r_total, outcome):
        if self._fh is None:
            return
        roll, pitch, yaw = euler_zyx(state.rotation)
        vals = [
            t,
            state.position[0], state.position[1], state.position[2],
            pitch, roll, yaw,
            state.velocity[0], state.velocity[1], state.velocity[2],
            cmd.pwm_prop[0], cmd.pwm_prop[1],
            cmd.wheel_rate_ref[0], cmd.wheel_rate_ref[1],
            cmd.servo_angle_ref[0], cmd.servo_angle_ref[1],
            p_prop, p_wheel, e_cum, r_total,
        ]
        self._fh.write(",".join(repr(float(v)) for v in vals) + f",{outcome}\n")

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None
