"""Configuration loading: defaults, user YAML, and flag overrides.

The resolved configuration is a plain nested dict (so run manifests can
echo it verbatim); typed builders construct the simulation objects from
it. All defaults live in ``data/default_config.yaml``; physical values
there are documented placeholders, not hardware measurements.
"""
from __future__ import annotations

import importlib.resources as resources
from pathlib import Path

import numpy as np
import yaml

from .actuation import PowerModel, ServoModel, ThrustMap, WheelController
from .contact import ContactParams
from .rigidbody import InertialParams
from .terrain import TerrainSpec


class ConfigError(ValueError):
    pass


def _data_path(name: str) -> Path:
    return Path(str(resources.files("hybridloco").joinpath("data", name)))


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Default config, optionally merged with a user file and overrides."""
    with open(_data_path("default_config.yaml")) as f:
        cfg = yaml.safe_load(f)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        with open(p) as f:
            user = yaml.safe_load(f) or {}
        if not isinstance(user, dict):
            raise ConfigError(f"config file {p} must contain a mapping")
        cfg = _deep_merge(cfg, user)
        cfg.setdefault("_meta", {})["config_dir"] = str(p.parent)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)


def build_inertial(cfg: dict) -> InertialParams:
    r = cfg["robot"]
    inertia = np.asarray(r["inertia"], dtype=float)
    if inertia.shape == (3,):
        inertia = np.diag(inertia)
    return InertialParams(
        mass=float(r["mass"]),
        inertia=inertia,
        prop_arms=np.asarray(r["prop_arms"], dtype=float),
        wheel_arms=np.asarray(r["wheel_arms"], dtype=float),
        gravity=float(r["gravity"]),
    )


def build_contact(cfg: dict) -> ContactParams:
    c = cfg["contact"]
    spheres = tuple(
        (tuple(float(x) for x in s["center"]), float(s["radius"]))
        for s in c["chassis_spheres"]
    )
    return ContactParams(
        wheel_radius=float(c["wheel_radius"]),
        stiffness=float(c["stiffness"]),
        damping=float(c["damping"]),
        friction=float(cfg["terrain"]["friction"]),
        slip_velocity=float(c["slip_velocity"]),
        wheel_inertia=float(c["wheel_inertia"]),
        prop_disc_radius=float(c["prop_disc_radius"]),
        chassis_spheres=spheres,
    )


def build_terrain_spec(cfg: dict, difficulty: float | None = None, seed: int = 0) -> TerrainSpec:
    t = cfg["terrain"]
    if difficulty is None:
        difficulty = t.get("fixed_difficulty")
    if difficulty is None:
        difficulty = 0.5 * (t["difficulty_range"][0] + t["difficulty_range"][1])
    return TerrainSpec(
        tile_size=float(t["tile_size"]),
        border=float(t["border"]),
        step_width=float(t["step_width"]),
        platform_width=float(t["platform_width"]),
        difficulty=float(difficulty),
        friction=float(t["friction"]),
        cell_resolution=float(t["cell_resolution"]),
        roughness_amplitude=float(t["roughness_amplitude"]),
        seed=seed,
    )


def build_servo_model(cfg: dict) -> ServoModel:
    a = cfg["actuation"]
    return ServoModel(
        natural_freq=float(a["servo_natural_freq"]),
        damping=float(a["servo_damping"]),
        rate_limit=float(a["servo_rate_limit"]),
        delay_steps=int(a["servo_delay_steps"]),
    )


def build_wheel_controller(cfg: dict) -> WheelController:
    a = cfg["actuation"]
    return WheelController(
        kp=float(a["wheel_kp"]),
        ki=float(a["wheel_ki"]),
        torque_limit=float(a["wheel_torque_limit"]),
        rate_limit=float(a["wheel_torque_rate_limit"]),
    )


def load_calibration(cfg: dict) -> tuple[ThrustMap, PowerModel, dict]:
    """Resolve the calibration file named by the config into maps."""
    name = cfg["actuation"]["calibration"]
    if name == "default":
        path = _data_path("default_calibration.yaml")
    else:
        path = Path(name)
        if not path.is_absolute():
            base = cfg.get("_meta", {}).get("config_dir", ".")
            path = Path(base) / path
    if not path.exists():
        raise ConfigError(f"calibration file not found: {path}")
    with open(path) as f:
        cal = yaml.safe_load(f)
    fitted = cal["fitted"]
    tmap = ThrustMap(coeffs=np.asarray(fitted["thrust"]["coeffs"], dtype=float))
    pmodel = PowerModel(
        prop_coeffs=np.asarray(fitted["prop_power"]["coeffs"], dtype=float),
        wheel_coeffs=np.asarray(fitted["wheel_power"]["coeffs"], dtype=float),
    )
    return tmap, pmodel, cal


def save_calibration(path, thrust_fit, prop_fit, wheel_fit, provenance: str, timestamp: str):
    doc = {
        "format": "hll-calibration v1",
        "provenance": provenance,
        "fitted": {
            "thrust": {
                "coeffs": [float(c) for c in thrust_fit.coeffs],
                "rmse": float(thrust_fit.rmse),
                "n_samples": int(thrust_fit.n_samples),
                "timestamp": timestamp,
            },
            "prop_power": {
                "coeffs": [float(c) for c in prop_fit.coeffs],
                "rmse": float(prop_fit.rmse),
                "n_samples": int(prop_fit.n_samples),
                "timestamp": timestamp,
            },
            "wheel_power": {
                "coeffs": [float(c) for c in wheel_fit.coeffs],
                "rmse": float(wheel_fit.rmse),
                "n_samples": int(wheel_fit.n_samples),
                "timestamp": timestamp,
            },
        },
    }
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)
