"""Batched environment interface for external training stacks.

Wraps the native vectorized environment behind a plain array protocol:
row-major float32 batches in, float32/bool batches out, with shape
errors raised before any native call ever runs. A handle owns its native
environments exclusively; results are numerically identical to driving
the native vector env directly with the same config, seed, and actions.
"""
from __future__ import annotations

import numpy as np

from hybridloco.config import load_config
from hybridloco.env import VectorEnv

__all__ = ["EnvHandle", "make_env", "reset", "step_batch", "close"]

ACTION_DIM = 6


class EnvHandle:
    """Opaque reference to a native vectorized environment."""

    def __init__(self, venv: VectorEnv, env_count: int, seed: int):
        self._venv = venv
        self._closed = False
        self.env_count = env_count
        self.obs_dim = venv.obs_dim
        self.action_dim = venv.action_dim
        self.seed = seed

    def _native(self) -> VectorEnv:
        if self._closed:
            raise RuntimeError("environment handle is closed")
        return self._venv

    def observation_slices(self) -> dict[str, tuple[int, int]]:
        """Named index ranges into the observation vector."""
        return {
            name: (sl.start, sl.stop)
            for name, sl in self._venv.layout.items()
            if not name.startswith("_")
        }

    def close(self):
        if not self._closed:
            self._venv.close()
            self._closed = True


def make_env(config_path, env_count: int = 1, seed: int = 0, log_dir=None) -> EnvHandle:
    """Create a handle over `env_count` environments from a config file.

    Errors from the native side (missing/invalid config) propagate with
    their native class and message.
    """
    if env_count < 1:
        raise ValueError(f"env_count must be >= 1, got {env_count}")
    cfg = load_config(config_path)
    venv = VectorEnv(cfg, env_count, seed=seed, log_dir=log_dir)
    return EnvHandle(venv, env_count, seed)


def reset(handle: EnvHandle) -> np.ndarray:
    """Reset all environments; returns the [N, obs_dim] float32 batch."""
    obs = handle._native().reset()
    return np.ascontiguousarray(obs, dtype=np.float32)


def _validate_actions(handle: EnvHandle, actions) -> np.ndarray:
    arr = np.asarray(actions)
    if arr.ndim != 2 or arr.shape != (handle.env_count, ACTION_DIM):
        raise ValueError(
            f"actions must have shape ({handle.env_count}, {ACTION_DIM}), got {arr.shape}"
        )
    if not np.issubdtype(arr.dtype, np.floating):
        raise ValueError(f"actions must be floating point, got dtype {arr.dtype}")
    return arr.astype(float, copy=False)


def step_batch(handle: EnvHandle, actions) -> tuple[np.ndarray, np.ndarray, np.ndarray, list]:
    """Advance every environment one control step.

    Returns (obs [N, obs_dim] float32 C-order, reward [N] float32,
    terminal [N] bool, info list). Each info dict carries the per-env
    accumulated episode energy in joules, the outcome tag, and whether
    this frame was an auto-reset frame. Out-of-range action values are
    clamped by the native side.
    """
    arr = _validate_actions(handle, actions)  # before any native call
    results = handle._native().step_results(arr)
    obs = np.ascontiguousarray(
        np.stack([r.obs for r in results]), dtype=np.float32
    )
    rewards = np.array([r.reward.weighted_total for r in results], dtype=np.float32)
    terminals = np.array([r.terminal for r in results], dtype=bool)
    infos = [
        {"energy_j": r.energy_cum, "outcome": r.outcome, "reset_frame": r.reset_frame}
        for r in results
    ]
    return obs, rewards, terminals, infos


def close(handle: EnvHandle):
    handle.close()
