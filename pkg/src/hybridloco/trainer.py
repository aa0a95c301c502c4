"""On-policy actor-critic training with clipped updates and GAE.

Actor and critic are plain MLPs over the same observation. Actions are
sampled from a diagonal Gaussian with a state-independent log-std; the
environment clamps them to the unit box, and log-probabilities are taken
pre-clamp. All randomness flows through explicit seeded generators so a
(seed, config) pair reproduces training bit for bit on one machine.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .env import Outcome, VectorEnv

CHECKPOINT_FORMAT_VERSION = 1


class NonFiniteGradient(RuntimeError):
    pass


@dataclass
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    learning_rate: float = 3.0e-4
    rollout_horizon: int = 64
    epochs: int = 8
    minibatches: int = 4
    entropy_coef: float = 0.005
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    env_count: int = 256
    total_steps: int = 1_000_000
    hidden_sizes: tuple = (256, 128)
    activation: str = "elu"
    log_std_init: float = -0.5
    log_std_bounds: tuple = (-5.0, 1.0)
    checkpoint_interval: int = 50

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.gae_lambda <= 1.0):
            raise ValueError("gamma and lambda must be in (0, 1]")
        if not (0.0 < self.clip_eps < 1.0):
            raise ValueError("clip epsilon must be in (0, 1)")
        for name in ("rollout_horizon", "epochs", "minibatches", "env_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @staticmethod
    def from_dict(d: dict) -> "PPOConfig":
        return PPOConfig(
            gamma=float(d["gamma"]),
            gae_lambda=float(d["gae_lambda"]),
            clip_eps=float(d["clip_eps"]),
            learning_rate=float(d["learning_rate"]),
            rollout_horizon=int(d["rollout_horizon"]),
            epochs=int(d["epochs"]),
            minibatches=int(d["minibatches"]),
            entropy_coef=float(d["entropy_coef"]),
            value_coef=float(d["value_coef"]),
            max_grad_norm=float(d["max_grad_norm"]),
            env_count=int(d["env_count"]),
            total_steps=int(d["total_steps"]),
            hidden_sizes=tuple(int(h) for h in d["hidden_sizes"]),
            activation=str(d["activation"]),
            log_std_init=float(d["log_std_init"]),
            log_std_bounds=tuple(float(b) for b in d["log_std_bounds"]),
            checkpoint_interval=int(d.get("checkpoint_interval", 50)),
        )


_ACTIVATIONS = {"elu": nn.ELU, "tanh": nn.Tanh, "relu": nn.ReLU}


def _mlp(in_dim: int, hidden: tuple, out_dim: int, activation: str) -> nn.Sequential:
    act = _ACTIVATIONS[activation]
    layers: list[nn.Module] = []
    prev = in_dim
    for h in hidden:
        layers += [nn.Linear(prev, h), act()]
        prev = h
    layers.append(nn.Linear(prev, out_dim))
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    """Gaussian actor and value critic over the same observation."""

    def __init__(
        self,
        obs_dim: int,
        act_dim: int = 6,
        hidden: tuple = (256, 128),
        activation: str = "elu",
        log_std_init: float = -0.5,
        log_std_bounds: tuple = (-5.0, 1.0),
    ):
        super().__init__()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        self.activation = activation
        self.log_std_bounds = tuple(log_std_bounds)
        self.actor = _mlp(obs_dim, hidden, act_dim, activation)
        self.critic = _mlp(obs_dim, hidden, 1, activation)
        self.log_std = nn.Parameter(torch.full((act_dim,), float(log_std_init)))

    def clamped_log_std(self) -> torch.Tensor:
        return self.log_std.clamp(*self.log_std_bounds)

    def action_mean(self, obs: torch.Tensor) -> torch.Tensor:
        return self.actor(obs)

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.critic(obs).squeeze(-1)

    def log_prob(self, obs: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        mean = self.actor(obs)
        log_std = self.clamped_log_std()
        var = torch.exp(2.0 * log_std)
        logp = -0.5 * ((actions - mean) ** 2 / var + 2.0 * log_std + np.log(2.0 * np.pi))
        return logp.sum(-1)

    def entropy(self) -> torch.Tensor:
        log_std = self.clamped_log_std()
        return (0.5 + 0.5 * np.log(2.0 * np.pi) + log_std).sum()

    @torch.no_grad()
    def act(self, obs: torch.Tensor, gen: torch.Generator):
        mean = self.actor(obs)
        log_std = self.clamped_log_std()
        std = torch.exp(log_std)
        noise = torch.randn(mean.shape, generator=gen, dtype=mean.dtype)
        actions = mean + std * noise
        var = std**2
        logp = (-0.5 * ((actions - mean) ** 2 / var + 2.0 * log_std + np.log(2.0 * np.pi))).sum(-1)
        values = self.critic(obs).squeeze(-1)
        return actions, logp, values


def make_model(obs_dim: int, cfg: PPOConfig, seed: int) -> ActorCritic:
    torch.manual_seed(seed)
    return ActorCritic(
        obs_dim,
        hidden=cfg.hidden_sizes,
        activation=cfg.activation,
        log_std_init=cfg.log_std_init,
        log_std_bounds=cfg.log_std_bounds,
    )


# ---------------------------------------------------------------------------
# rollout collection


@dataclass
class RolloutBatch:
    obs: np.ndarray  # (T, N, D)
    actions: np.ndarray  # (T, N, A)
    log_probs: np.ndarray  # (T, N)
    rewards: np.ndarray  # (T, N)
    values: np.ndarray  # (T, N)
    terminals: np.ndarray  # (T, N) bool
    valids: np.ndarray  # (T, N) bool; False on auto-reset frames
    bootstrap_values: np.ndarray  # (N,)
    episode_stats: dict = field(default_factory=dict)


def collect_rollouts(
    venv: VectorEnv,
    model: ActorCritic,
    horizon: int,
    gen: torch.Generator,
    current_obs: np.ndarray,
) -> tuple[RolloutBatch, np.ndarray]:
    """Gather `horizon` lockstep transitions; returns (batch, next_obs).

    Auto-reset frames are recorded with valid=False so losses skip them;
    the fresh observation they carry feeds the next action.
    """
    N = venv.env_count
    T = horizon
    obs_buf = np.empty((T, N, venv.obs_dim))
    act_buf = np.empty((T, N, 6))
    logp_buf = np.empty((T, N))
    rew_buf = np.zeros((T, N))
    val_buf = np.empty((T, N))
    term_buf = np.zeros((T, N), dtype=bool)
    valid_buf = np.ones((T, N), dtype=bool)

    ep_returns: list[float] = []
    ep_energies: list[float] = []
    ep_successes: list[bool] = []

    obs = current_obs
    for t in range(T):
        obs_t = torch.as_tensor(obs, dtype=torch.float32)
        actions, logp, values = model.act(obs_t, gen)
        a = actions.numpy().astype(float)
        results = venv.step_results(a)
        obs_buf[t] = obs
        act_buf[t] = a
        logp_buf[t] = logp.numpy()
        val_buf[t] = values.numpy()
        next_obs = np.empty_like(obs)
        for i, r in enumerate(results):
            next_obs[i] = r.obs
            rew_buf[t, i] = r.reward.weighted_total
            term_buf[t, i] = r.terminal
            if r.reset_frame:
                valid_buf[t, i] = False
            if r.terminal:
                ep_returns.append(float(venv.envs[i].episode_return))
                ep_energies.append(float(r.energy_cum))
                ep_successes.append(r.outcome == Outcome.GOAL)
        obs = next_obs
    with torch.no_grad():
        bootstrap = model.value(torch.as_tensor(obs, dtype=torch.float32)).numpy()

    batch = RolloutBatch(
        obs=obs_buf,
        actions=act_buf,
        log_probs=logp_buf,
        rewards=rew_buf,
        values=val_buf,
        terminals=term_buf,
        valids=valid_buf,
        bootstrap_values=bootstrap,
        episode_stats={
            "returns": ep_returns,
            "energies": ep_energies,
            "successes": ep_successes,
        },
    )
    return batch, obs


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    terminals: np.ndarray,
    gamma: float,
    lam: float,
    bootstrap_values: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-scan generalized advantage estimates and returns.

    Accepts (T,) or (T, N) arrays; terminal flags cut the bootstrap chain.
    """
    rewards = np.asarray(rewards, dtype=float)
    squeeze = rewards.ndim == 1
    if squeeze:
        rewards = rewards[:, None]
        values = np.asarray(values, dtype=float)[:, None]
        terminals = np.asarray(terminals, dtype=bool)[:, None]
    T, N = rewards.shape
    if bootstrap_values is None:
        bootstrap_values = np.zeros(N)
    adv = np.zeros((T, N))
    last = np.zeros(N)
    next_values = bootstrap_values
    for t in range(T - 1, -1, -1):
        not_done = ~terminals[t]
        delta = rewards[t] + gamma * next_values * not_done - values[t]
        last = delta + gamma * lam * not_done * last
        adv[t] = last
        next_values = values[t]
    returns = adv + values
    if squeeze:
        return adv[:, 0], returns[:, 0]
    return adv, returns


# ---------------------------------------------------------------------------
# clipped-surrogate update


def policy_loss_terms(
    model: ActorCritic,
    obs: torch.Tensor,
    actions: torch.Tensor,
    old_logp: torch.Tensor,
    advantages: torch.Tensor,
    clip_eps: float,
):
    """Per-sample clipped surrogate; returns (loss, ratio, clipped mask)."""
    logp = model.log_prob(obs, actions)
    ratio = torch.exp(logp - old_logp)
    unclipped = ratio * advantages
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    per_sample = torch.minimum(unclipped, clipped)
    loss = -per_sample.mean()
    clip_mask = (ratio - 1.0).abs() > clip_eps
    return loss, logp, ratio, clip_mask


def ppo_update(
    model: ActorCritic,
    optimizer: torch.optim.Optimizer,
    batch: RolloutBatch,
    cfg: PPOConfig,
    gen: torch.Generator,
) -> dict:
    """Epochs of minibatch clipped-surrogate steps; returns diagnostics.

    A non-finite gradient aborts the whole update, restoring the incoming
    parameters, and is reported in the diagnostics.
    """
    valid = batch.valids.reshape(-1)
    obs = torch.as_tensor(batch.obs.reshape(-1, batch.obs.shape[-1])[valid], dtype=torch.float32)
    actions = torch.as_tensor(batch.actions.reshape(-1, 6)[valid], dtype=torch.float32)
    old_logp = torch.as_tensor(batch.log_probs.reshape(-1)[valid], dtype=torch.float32)

    adv, returns = gae(
        batch.rewards, batch.values, batch.terminals, cfg.gamma, cfg.gae_lambda, batch.bootstrap_values
    )
    adv = adv.reshape(-1)[valid]
    returns = returns.reshape(-1)[valid]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    adv_t = torch.as_tensor(adv, dtype=torch.float32)
    ret_t = torch.as_tensor(returns, dtype=torch.float32)

    n = obs.shape[0]
    saved = {k: v.detach().clone() for k, v in model.state_dict().items()}
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0, "approx_kl": 0.0}
    count = 0
    try:
        for _ in range(cfg.epochs):
            perm = torch.randperm(n, generator=gen)
            mb_size = max(1, n // cfg.minibatches)
            for start in range(0, n, mb_size):
                idx = perm[start : start + mb_size]
                p_loss, logp, ratio, clip_mask = policy_loss_terms(
                    model, obs[idx], actions[idx], old_logp[idx], adv_t[idx], cfg.clip_eps
                )
                values = model.value(obs[idx])
                v_loss = ((values - ret_t[idx]) ** 2).mean()
                entropy = model.entropy()
                loss = p_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy
                optimizer.zero_grad()
                loss.backward()
                grads_finite = all(
                    p.grad is None or torch.isfinite(p.grad).all() for p in model.parameters()
                )
                if not grads_finite:
                    raise NonFiniteGradient("aborting update; parameters restored")
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.max_grad_norm)
                optimizer.step()
                with torch.no_grad():
                    stats["policy_loss"] += float(p_loss)
                    stats["value_loss"] += float(v_loss)
                    stats["entropy"] += float(entropy)
                    stats["clip_frac"] += float(clip_mask.float().mean())
                    stats["approx_kl"] += float((old_logp[idx] - logp).mean())
                count += 1
    except NonFiniteGradient:
        model.load_state_dict(saved)
        stats["aborted"] = True
    for k in ("policy_loss", "value_loss", "entropy", "clip_frac", "approx_kl"):
        stats[k] = stats[k] / max(count, 1)
    return stats


# ---------------------------------------------------------------------------
# checkpoints: zip container of little-endian float32 tensors + JSON manifest


def save_checkpoint(path, model: ActorCritic, config_echo: dict | None = None):
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "obs_dim": model.obs_dim,
        "act_dim": model.act_dim,
        "hidden": list(model.hidden),
        "activation": model.activation,
        "log_std_bounds": list(model.log_std_bounds),
        "tensors": {},
        "config": config_echo or {},
    }
    blobs = {}
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().numpy().astype("<f4")
        manifest["tensors"][name] = {"shape": list(arr.shape)}
        blobs[name] = arr.tobytes()
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as z:
        z.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        for name, blob in blobs.items():
            z.writestr(f"tensors/{name}.bin", blob)


def load_checkpoint(path) -> tuple[ActorCritic, dict]:
    with zipfile.ZipFile(path) as z:
        manifest = json.loads(z.read("manifest.json"))
        if manifest["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {manifest['format_version']}")
        model = ActorCritic(
            manifest["obs_dim"],
            manifest["act_dim"],
            hidden=tuple(manifest["hidden"]),
            activation=manifest["activation"],
            log_std_bounds=tuple(manifest["log_std_bounds"]),
        )
        state = {}
        for name, info in manifest["tensors"].items():
            raw = np.frombuffer(z.read(f"tensors/{name}.bin"), dtype="<f4").reshape(info["shape"])
            state[name] = torch.from_numpy(raw.copy())
        model.load_state_dict(state)
    return model, manifest


# ---------------------------------------------------------------------------
# training loop

METRICS_CSV_HEADER = "update,steps,mean_return,success_rate,mean_energy_J,policy_loss,value_loss,entropy,clip_frac"


def train(
    cfg: dict,
    out_dir,
    seed: int = 0,
    total_steps: int | None = None,
    resume: bool = False,
    log_every: int = 1,
) -> dict:
    """Full training run; writes checkpoints and the metrics CSV.

    Returns a summary dict with the final checkpoint path and counters.
    """
    import pathlib

    torch.set_num_threads(1)  # keeps CPU reductions deterministic run-to-run
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    ppo = PPOConfig.from_dict(cfg["trainer"])
    if total_steps is not None:
        ppo = PPOConfig.from_dict({**cfg["trainer"], "total_steps": total_steps})
    venv = VectorEnv(cfg, ppo.env_count, seed=seed)

    start_update = 0
    latest = out / "checkpoint_latest.zip"
    if resume and latest.exists():
        model, manifest = load_checkpoint(latest)
        start_update = int(manifest["config"].get("update", 0))
    else:
        model = make_model(venv.obs_dim, ppo, seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=ppo.learning_rate)

    gen = torch.Generator()
    gen.manual_seed(seed + 1 + start_update)

    metrics_path = out / "metrics.csv"
    mode = "a" if (resume and metrics_path.exists()) else "w"
    metrics = open(metrics_path, mode)
    if mode == "w":
        metrics.write(METRICS_CSV_HEADER + "\n")

    steps_per_update = ppo.env_count * ppo.rollout_horizon
    n_updates = ppo.total_steps // steps_per_update

    def checkpoint(tag, update):
        save_checkpoint(out / f"checkpoint_{tag}.zip", model, config_echo={"update": update, "seed": seed})

    checkpoint("latest", start_update)
    if ppo.total_steps == 0 or n_updates == 0:
        metrics.close()
        venv.close()
        return {"updates": 0, "steps": 0, "checkpoint": str(latest)}

    obs = venv.reset()
    steps_done = start_update * steps_per_update
    for update in range(start_update + 1, n_updates + 1):
        batch, obs = collect_rollouts(venv, model, ppo.rollout_horizon, gen, obs)
        stats = ppo_update(model, optimizer, batch, ppo, gen)
        steps_done += steps_per_update

        es = batch.episode_stats
        mean_return = float(np.mean(es["returns"])) if es["returns"] else float("nan")
        success = float(np.mean(es["successes"])) if es["successes"] else float("nan")
        mean_energy = float(np.mean(es["energies"])) if es["energies"] else float("nan")
        if update % log_every == 0:
            row = [
                update,
                steps_done,
                mean_return,
                success,
                mean_energy,
                stats["policy_loss"],
                stats["value_loss"],
                stats["entropy"],
                stats["clip_frac"],
            ]
            metrics.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
            metrics.flush()
        if update % ppo.checkpoint_interval == 0:
            checkpoint(f"{update:06d}", update)
        checkpoint("latest", update)
    metrics.close()
    venv.close()
    return {"updates": n_updates, "steps": steps_done, "checkpoint": str(latest)}
