"""Operator entry point: terrain, rollout, train, ablate, calibrate.

Every run writes a manifest echo (resolved config plus run arguments)
into its output directory, sufficient to reproduce the run bit for bit.
Exit codes: 0 ok, 2 config error, 3 missing artifact, 4 simulation fault.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import pathlib
import sys

import numpy as np
import yaml

from . import config as cfgmod
from .actuation import FitFailed, InvalidMap, fit_power_poly, fit_thrust_map
from .baseline import DecoupledConfig, DecoupledController
from .env import MODES, HybridEnv, Outcome, unmap_command
from .rigidbody import euler_zyx
from .terrain import (
    InvalidSpec,
    add_micro_roughness,
    generate_inverted_pyramid,
    ring_count,
    save_heightfield,
    step_height,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_SIMFAULT = 4


CSV_SCHEMA_VERSION = 1


def _write_manifest(out_dir: pathlib.Path, cfg: dict, run: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"run": run, "config": cfg, "csv_schema_version": CSV_SCHEMA_VERSION}
    with open(out_dir / "manifest.yaml", "w") as f:
        yaml.safe_dump(doc, f, sort_keys=True)


def _load_cfg(args, overrides: dict | None = None) -> dict:
    path = getattr(args, "config", None) or os.environ.get("HLL_CONFIG")
    return cfgmod.load_config(path, overrides)


# ---------------------------------------------------------------------------
# terrain


def cmd_terrain(args) -> int:
    cfg = _load_cfg(args)
    over = {}
    if args.difficulty is not None:
        over["fixed_difficulty"] = args.difficulty
    if args.roughness is not None:
        over["roughness_amplitude"] = args.roughness
    cfg["terrain"] = {**cfg["terrain"], **over}
    spec = cfgmod.build_terrain_spec(cfg, difficulty=args.difficulty, seed=args.seed)
    field = generate_inverted_pyramid(spec)
    if spec.roughness_amplitude > 0.0:
        field = add_micro_roughness(field, spec.roughness_amplitude, args.seed)
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_heightfield(field, out, spec)
    rings = ring_count(spec)
    h = step_height(spec.difficulty)
    print(f"terrain written to {out}")
    print(f"rings: {rings}")
    print(f"step height: {h:.6g} m")
    print(f"max elevation: {float(field.heights.max()):.6g} m")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rollout


def _make_controller(args, cfg, env):
    """Returns (name, fn(obs, t) -> action) for the requested controller."""
    if args.controller == "scripted":
        if args.wheels is not None:
            left, right = (float(v) for v in args.wheels.split(","))
            action = np.array([left / 500.0, right / 500.0, 0.0, 0.0, 0.0, 0.0])
        else:
            action = np.zeros(6)
        return lambda obs, t: action

    if args.controller == "decoupled":
        preset = cfg["baseline"][args.preset]
        dcfg = DecoupledConfig.from_dict(preset)
        ctrl = DecoupledController(dcfg)

        def decoupled_policy(obs, t):
            cmd = ctrl.command(env.state, t, env.control_dt)
            return unmap_command(cmd)

        return decoupled_policy

    if args.controller == "policy":
        from .trainer import load_checkpoint
        import torch

        ckpt = pathlib.Path(args.checkpoint or "")
        if not ckpt.exists():
            raise FileNotFoundError(f"checkpoint not found: {ckpt}")
        model, _ = load_checkpoint(ckpt)
        if model.obs_dim != env.obs_dim:
            raise cfgmod.ConfigError(
                f"checkpoint obs_dim {model.obs_dim} != env obs_dim {env.obs_dim}"
            )
        stochastic = bool(getattr(args, "stochastic", False))
        gen = torch.Generator()
        gen.manual_seed(args.seed if hasattr(args, "seed") else 0)

        def policy(obs, t):
            with torch.no_grad():
                mean = model.action_mean(torch.as_tensor(obs, dtype=torch.float32))
                if stochastic:
                    std = torch.exp(model.clamped_log_std())
                    mean = mean + std * torch.randn(mean.shape, generator=gen)
            return mean.numpy().astype(float)

        return policy

    raise cfgmod.ConfigError(f"unknown controller {args.controller!r}")


def run_episodes(env: HybridEnv, controller, episodes: int) -> list[dict]:
    rows = []
    for _ in range(episodes):
        obs = env.reset()
        t = 0.0
        peak_pitch = 0.0
        outcome = Outcome.RUNNING
        while True:
            action = controller(obs, t)
            res = env.step(action)
            obs = res.obs
            t = env.episode.step_count * env.control_dt
            _, pitch, _ = euler_zyx(env.state.rotation)
            peak_pitch = max(peak_pitch, abs(pitch))
            if res.terminal:
                outcome = res.outcome
                break
        duration = env.episode.step_count * env.control_dt
        energy = res.energy_cum
        rows.append(
            {
                "outcome": outcome,
                "success": outcome == Outcome.GOAL,
                "energy_J": energy,
                "duration_s": duration,
                "mean_power_W": energy / duration if duration > 0 else 0.0,
                "peak_abs_pitch_rad": peak_pitch,
                "steps": env.episode.step_count,
                "return": env.episode_return,
            }
        )
    return rows


def _aggregate(rows: list[dict]) -> dict:
    def series(key):
        return np.array([r[key] for r in rows], dtype=float)

    total_energy = float(series("energy_J").sum())
    total_duration = float(series("duration_s").sum())
    return {
        "episodes": len(rows),
        "success_rate": float(np.mean([r["success"] for r in rows])),
        "energy_J": {"mean": float(series("energy_J").mean()), "std": float(series("energy_J").std())},
        "duration_s": {"mean": float(series("duration_s").mean()), "std": float(series("duration_s").std())},
        "mean_power_W": total_energy / total_duration if total_duration > 0 else 0.0,
        "peak_abs_pitch_rad": {
            "mean": float(series("peak_abs_pitch_rad").mean()),
            "max": float(series("peak_abs_pitch_rad").max()),
        },
    }


def cmd_rollout(args) -> int:
    overrides = {"env": {"mode": args.mode}} if args.mode else None
    cfg = _load_cfg(args, overrides)
    if args.difficulty is not None:
        cfg["terrain"]["fixed_difficulty"] = args.difficulty
    if args.terrain_file is not None:
        cfg["terrain"]["terrain_file"] = args.terrain_file
    if args.single_step is not None:
        cfg["env"]["scenario"] = {
            "type": "single_step",
            "height": args.single_step,
            "start_x": args.start_x,
            "goal_x": args.goal_x,
            "jitter": args.jitter,
        }
    out = pathlib.Path(args.out)
    _write_manifest(out, cfg, {"cmd": "rollout", "seed": args.seed, "episodes": args.episodes,
                               "controller": args.controller, "preset": args.preset,
                               "checkpoint": args.checkpoint, "wheels": args.wheels})
    env = HybridEnv(cfg, seed=args.seed, log_dir=out / "episodes")
    controller = _make_controller(args, cfg, env)
    rows = run_episodes(env, controller, args.episodes)
    env.close()
    summary = {"per_episode": rows, "aggregate": _aggregate(rows)}
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    agg = summary["aggregate"]
    print(
        f"{args.episodes} episodes: success {agg['success_rate']:.0%}, "
        f"mean energy {agg['energy_J']['mean']:.1f} J, mean power {agg['mean_power_W']:.1f} W"
    )
    if any(r["outcome"] == Outcome.NONFINITE for r in rows):
        return EXIT_SIMFAULT
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    overrides = {"env": {"mode": args.mode}} if args.mode else None
    cfg = _load_cfg(args, overrides)
    if args.env_count is not None:
        cfg["trainer"]["env_count"] = args.env_count
    if args.difficulty is not None:
        cfg["terrain"]["fixed_difficulty"] = args.difficulty
    if args.single_step is not None:
        cfg["env"]["scenario"] = {
            "type": "single_step",
            "height": args.single_step,
            "start_x": args.start_x,
            "goal_x": args.goal_x,
            "jitter": args.jitter,
        }
    out = pathlib.Path(args.out)
    _write_manifest(out, cfg, {"cmd": "train", "seed": args.seed,
                               "total_steps": args.total_steps, "resume": args.resume})
    from .trainer import train

    result = train(cfg, out, seed=args.seed, total_steps=args.total_steps, resume=args.resume)
    print(f"training done: {result['updates']} updates, {result['steps']} env steps")
    print(f"latest checkpoint: {result['checkpoint']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate

ABLATE_CSV_HEADER = "mode,success_rate,mean_energy_J"


def _best_checkpoint(train_dir: pathlib.Path) -> str:
    """Model selection: the saved checkpoint nearest the training-time
    success peak (smoothed); falls back to the latest checkpoint."""
    import csv as _csv

    metrics = train_dir / "metrics.csv"
    latest = train_dir / "checkpoint_latest.zip"
    saved = sorted(train_dir.glob("checkpoint_0*.zip"))
    if not metrics.exists() or not saved:
        return str(latest)
    rows = []
    with open(metrics) as f:
        for row in _csv.DictReader(f):
            try:
                rows.append((int(row["update"]), float(row["success_rate"])))
            except ValueError:
                rows.append((int(row["update"]), 0.0))
    if not rows:
        return str(latest)
    window = 3
    best_update, best_score = rows[-1][0], -1.0
    for i in range(len(rows)):
        lo, hi = max(0, i - window), min(len(rows), i + window + 1)
        vals = [v for _, v in rows[lo:hi] if v == v]
        score = sum(vals) / max(len(vals), 1)
        if score > best_score:
            best_score = score
            best_update = rows[i][0]
    updates = [int(p.stem.split("_")[1]) for p in saved]
    nearest = min(range(len(updates)), key=lambda j: abs(updates[j] - best_update))
    return str(saved[nearest])


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, cfg, {"cmd": "ablate", "seed": args.seed, "episodes": args.episodes,
                               "checkpoints": args.checkpoints, "total_steps": args.total_steps})
    checkpoints = {}
    if args.checkpoints:
        parts = args.checkpoints.split(",")
        if len(parts) != 3:
            raise cfgmod.ConfigError("--checkpoints needs hybrid,wheels_only,props_only paths")
        checkpoints = dict(zip(MODES, parts))
        for p in checkpoints.values():
            if not pathlib.Path(p).exists():
                raise FileNotFoundError(f"checkpoint not found: {p}")

    table_path = out / "ablation.csv"
    with open(table_path, "w") as table:
        table.write(ABLATE_CSV_HEADER + "\n")
        table.flush()
        for mode in MODES:
            mode_cfg = cfgmod._deep_merge(cfg, {"env": {"mode": mode}})
            if args.single_step is not None:
                mode_cfg["env"]["scenario"] = {
                    "type": "single_step",
                    "height": args.single_step,
                    "start_x": args.start_x,
                    "goal_x": args.goal_x,
                    "jitter": args.jitter,
                }
            if mode in checkpoints:
                ckpt = checkpoints[mode]
            else:
                from .trainer import train

                # training draws goals over a distance curriculum; the
                # evaluation episodes below keep goals past the riser
                train_cfg = cfgmod._deep_merge(mode_cfg, {})
                if args.single_step is not None:
                    train_cfg["env"]["scenario"] = {
                        **mode_cfg["env"]["scenario"],
                        "sample_goals": True,
                    }
                train(train_cfg, out / f"train_{mode}", seed=args.seed, total_steps=args.total_steps)
                # evaluate the checkpoint at the training-time success peak
                ckpt = _best_checkpoint(out / f"train_{mode}")
                print(f"{mode}: evaluating {ckpt}")
            # training-time-style success: evaluate the stochastic policy
            ns = argparse.Namespace(
                controller="policy", checkpoint=ckpt, preset=None, wheels=None,
                stochastic=True, seed=args.seed + 1,
            )
            env = HybridEnv(mode_cfg, seed=args.seed + 1, log_dir=None)
            controller = _make_controller(ns, mode_cfg, env)
            rows = run_episodes(env, controller, args.episodes)
            env.close()
            successes = [r for r in rows if r["success"]]
            pool = successes if successes else rows
            mean_energy = float(np.mean([r["energy_J"] for r in pool]))
            success_rate = float(np.mean([r["success"] for r in rows]))
            table.write(f"{mode},{success_rate!r},{mean_energy!r}\n")
            table.flush()
            print(f"{mode}: success {success_rate:.0%}, mean energy {mean_energy:.1f} J")
    print(f"ablation table: {table_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate


def _read_bench_csv(path, cols):
    rows = []
    with open(path) as f:
        reader = csv.DictReader(f)
        missing = [c for c in cols if c not in (reader.fieldnames or [])]
        if missing:
            raise cfgmod.ConfigError(f"{path}: missing columns {missing}")
        for row in reader:
            rows.append([float(row[c]) for c in cols])
    return np.asarray(rows)


def cmd_calibrate(args) -> int:
    cfg = _load_cfg(args)
    _, _, default_cal = cfgmod.load_calibration(cfg)

    def default_fit(section):
        d = default_cal["fitted"][section]
        from .actuation import FitResult

        return FitResult(np.asarray(d["coeffs"]), float(d["rmse"]), int(d["n_samples"]))

    timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    if args.thrust:
        samples = _read_bench_csv(args.thrust, ["pwm_us", "thrust_N"])
        _, thrust_fit = fit_thrust_map(samples)
        print(f"thrust fit: rmse {thrust_fit.rmse:.3e} N on {thrust_fit.n_samples} samples")
    else:
        thrust_fit = default_fit("thrust")
    if args.prop_power:
        prop_fit = fit_power_poly(_read_bench_csv(args.prop_power, ["pwm_us", "power_W"]), kind="pwm")
        print(f"prop power fit: rmse {prop_fit.rmse:.3e} W on {prop_fit.n_samples} samples")
    else:
        prop_fit = default_fit("prop_power")
    if args.wheel_power:
        wheel_fit = fit_power_poly(_read_bench_csv(args.wheel_power, ["rpm", "power_W"]), kind="rpm")
        print(f"wheel power fit: rmse {wheel_fit.rmse:.3e} W on {wheel_fit.n_samples} samples")
    else:
        wheel_fit = default_fit("wheel_power")

    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cfgmod.save_calibration(out, thrust_fit, prop_fit, wheel_fit, provenance="bench fit", timestamp=timestamp)
    print(f"calibration written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hll", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", default=None, help="config YAML (default: $HLL_CONFIG or built-in)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=out_default)

    t = sub.add_parser("terrain", help="generate a terrain grid file")
    common(t, "terrain.txt")
    t.add_argument("--difficulty", type=float, default=None)
    t.add_argument("--roughness", type=float, default=None)
    t.set_defaults(fn=cmd_terrain)

    r = sub.add_parser("rollout", help="run scripted/baseline/policy episodes")
    common(r, "rollout_out")
    r.add_argument("--controller", choices=["policy", "decoupled", "scripted"], default="scripted")
    r.add_argument("--checkpoint", default=None)
    r.add_argument("--stochastic", action="store_true", help="sample the policy instead of its mean")
    r.add_argument("--preset", default="decouple_stand", help="baseline preset name")
    r.add_argument("--wheels", default=None, help="scripted wheel refs 'left,right' rad/s")
    r.add_argument("--episodes", type=int, default=5)
    r.add_argument("--mode", choices=list(MODES), default=None)
    r.add_argument("--difficulty", type=float, default=None)
    r.add_argument("--terrain-file", default=None, help="portable grid file overriding generation")
    r.add_argument("--single-step", type=float, default=None, help="single-step scenario height (m)")
    r.add_argument("--start-x", type=float, default=-1.0)
    r.add_argument("--goal-x", type=float, default=2.0)
    r.add_argument("--jitter", type=float, default=0.0, help="single-step spawn/goal jitter (m)")
    r.set_defaults(fn=cmd_rollout)

    tr = sub.add_parser("train", help="train a policy")
    common(tr, "train_out")
    tr.add_argument("--mode", choices=list(MODES), default=None)
    tr.add_argument("--total-steps", type=int, default=None)
    tr.add_argument("--env-count", type=int, default=None)
    tr.add_argument("--difficulty", type=float, default=None)
    tr.add_argument("--single-step", type=float, default=None)
    tr.add_argument("--start-x", type=float, default=-1.0)
    tr.add_argument("--goal-x", type=float, default=2.0)
    tr.add_argument("--jitter", type=float, default=0.0, help="single-step spawn/goal jitter (m)")
    tr.add_argument("--resume", action="store_true")
    tr.set_defaults(fn=cmd_train)

    ab = sub.add_parser("ablate", help="hybrid / wheels-only / props-only comparison")
    common(ab, "ablate_out")
    ab.add_argument("--checkpoints", default=None, help="3 comma-separated checkpoints to evaluate")
    ab.add_argument("--total-steps", type=int, default=200000)
    ab.add_argument("--episodes", type=int, default=20)
    ab.add_argument("--single-step", type=float, default=None)
    ab.add_argument("--start-x", type=float, default=-1.0)
    ab.add_argument("--goal-x", type=float, default=2.0)
    ab.add_argument("--jitter", type=float, default=0.0, help="single-step spawn/goal jitter (m)")
    ab.set_defaults(fn=cmd_ablate)

    c = sub.add_parser("calibrate", help="fit thrust/power maps from bench CSVs")
    common(c, "calibration.yaml")
    c.add_argument("--thrust", default=None, help="CSV with pwm_us,thrust_N")
    c.add_argument("--prop-power", default=None, help="CSV with pwm_us,power_W")
    c.add_argument("--wheel-power", default=None, help="CSV with rpm,power_W")
    c.set_defaults(fn=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (cfgmod.ConfigError, InvalidSpec, InvalidMap, FitFailed, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return EXIT_SIMFAULT


if __name__ == "__main__":
    sys.exit(main())
