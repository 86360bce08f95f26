"""PPO with GAE on top of the numpy actor-critic."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .envs import CRITIC_FEATURES, EPISODE_LEN, CongestionEnv, VecEnv
from .features import obs_dim
from .policy import ActorCritic, PolicyCheckpoint, gaussian_log_prob, load_checkpoint
from .rewards import RewardConfig

log = logging.getLogger(__name__)

STRATEGIES = ("base", "a", "b", "c")
REWARD_NORMS = ("none", "bandwidth", "link")


@dataclass
class TrainConfig:
    strategy: str = "base"
    lam: float = 0.0
    loss_coef: float = 2000.0
    seed: int = 42
    total_steps: int = 1_600_000
    n_envs: int = 4
    episode_len: int = EPISODE_LEN
    gamma: float = 0.99
    learning_rate: float = 3e-4
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    horizon: int = 1024
    minibatch_size: int = 256
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    max_grad_norm: float = 0.5
    tput_unit: str = "pps"
    reward_norm: str = "link"
    norm_obs: bool = True
    privileged_critic: bool = True
    background: str | None = None

    def __post_init__(self):
        self.strategy = self.strategy.lower()
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be > 0")
        if self.reward_norm not in REWARD_NORMS:
            raise ValueError(f"reward_norm must be one of {REWARD_NORMS}")

    @property
    def augmented(self):
        return self.strategy == "b"

    @property
    def needs_background(self):
        return self.strategy in ("a", "b")

    def reward_config(self):
        lam = self.lam if self.strategy == "a" else 0.0
        return RewardConfig(loss_coef=self.loss_coef, lam=lam, n_flows=2, tput_unit=self.tput_unit)

    def to_dict(self):
        return asdict(self)


@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    critic_extra: np.ndarray | None = None  # value-net-only inputs, aligned with obs

    def __len__(self):
        return len(self.actions)


def gae_advantages(rewards, values, bootstrap_value, gamma, gae_lambda, dones=None):
    """Generalized advantage estimates and value targets for one trajectory.

    ``dones[t]`` marks that the episode ended after step ``t``; accumulation
    stops there and no bootstrap crosses the boundary.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    n = len(rewards)
    dones = np.zeros(n, dtype=bool) if dones is None else np.asarray(dones, dtype=bool)
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            next_value, last = 0.0, 0.0
        else:
            next_value = bootstrap_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_value - values[t]
        last = delta + gamma * gae_lambda * last
        adv[t] = last
    return adv, adv + values


class Adam:
    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        grads = [g * scale for g in grads]
    return grads, norm


def ppo_loss_and_grads(model: ActorCritic, obs, actions, old_log_probs, advantages, returns,
                       clip_eps=0.2, vf_coef=0.5, ent_coef=0.0, critic_extra=None):
    """Clipped-surrogate loss (to minimise) and its gradients.

    Returns ``(losses, pi_grads, vf_grads)`` where ``pi_grads`` covers the policy
    weights followed by log_std.
    """
    n = len(actions)
    mean_out, pi_acts = model.pi.forward(obs, cache=True)
    mean = mean_out[:, 0]
    log_std = model.log_std[0]
    std = math.exp(log_std)
    logp = gaussian_log_prob(actions, mean, log_std)
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr1 = ratio * advantages
    surr2 = clipped * advantages
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    entropy = log_std + 0.5 * (1.0 + math.log(2.0 * math.pi))

    # only samples whose unclipped term is the minimum carry gradient
    use_unclipped = surr1 <= surr2
    dlogp = np.where(use_unclipped, -advantages * ratio / n, 0.0)
    z = (actions - mean) / std
    dmean = dlogp * z / std
    dlog_std = float(np.sum(dlogp * (z * z - 1.0))) - ent_coef
    pi_grads = model.pi.backward(pi_acts, dmean[:, None]) + [np.array([dlog_std])]

    value_out, vf_acts = model.vf.forward(model.value_input(obs, critic_extra), cache=True)
    value = value_out[:, 0]
    err = value - returns
    value_loss = float(np.mean(err * err))
    vf_grads = model.vf.backward(vf_acts, (vf_coef * 2.0 * err / n)[:, None])

    total = policy_loss + vf_coef * value_loss - ent_coef * entropy
    approx_kl = float(np.mean(old_log_probs - logp))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip_eps))
    losses = {"loss": total, "policy_loss": policy_loss, "value_loss": value_loss,
              "entropy": entropy, "approx_kl": approx_kl, "clip_fraction": clip_frac}
    return losses, pi_grads, vf_grads


def policy_params(model):
    return model.pi.params() + [model.log_std]


class PPOOptimizer:
    """Separate Adam states for the policy and value networks."""

    def __init__(self, model, lr):
        self.pi = Adam(policy_params(model), lr)
        self.vf = Adam(model.vf.params(), lr)


def ppo_update(model, batch: RolloutBatch, optimizer: PPOOptimizer, rng, clip_eps=0.2, epochs=4,
               minibatch_size=256, vf_coef=0.5, ent_coef=0.0, max_grad_norm=0.5):
    """Several epochs of minibatch PPO on ``batch``; updates ``model`` in place."""
    n = len(batch)
    if n == 0:
        raise ValueError("empty rollout batch")
    adv = batch.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    stats = []
    mb_index = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, minibatch_size):
            idx = order[start:start + minibatch_size]
            losses, pi_g, vf_g = ppo_loss_and_grads(
                model, batch.obs[idx], batch.actions[idx], batch.log_probs[idx], adv[idx],
                batch.returns[idx], clip_eps, vf_coef, ent_coef,
                None if batch.critic_extra is None else batch.critic_extra[idx])
            if not all(math.isfinite(v) for v in losses.values()):
                raise FloatingPointError(f"non-finite PPO loss in minibatch {mb_index}: {losses}")
            pi_g, _ = clip_grad_norm(pi_g, max_grad_norm)
            vf_g, _ = clip_grad_norm(vf_g, max_grad_norm)
            optimizer.pi.step(pi_g)
            optimizer.vf.step(vf_g)
            stats.append(losses)
            mb_index += 1
    diag = {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}
    return model, diag


class RunningMeanStd:
    """Parallel-merge running mean/variance; ``shape=()`` pools all entries."""

    def __init__(self, shape=()):
        self.mean = np.zeros(shape)
        self.var = np.ones(shape)
        self.count = 1e-4

    def update(self, x):
        x = np.asarray(x, dtype=float)
        if self.mean.ndim == 0:
            b_mean, b_var, b_n = x.mean(), x.var(), x.size
        else:
            x = x.reshape(-1, *self.mean.shape)
            b_mean, b_var, b_n = x.mean(axis=0), x.var(axis=0), x.shape[0]
        delta = b_mean - self.mean
        tot = self.count + b_n
        self.mean += delta * b_n / tot
        m2 = self.var * self.count + b_var * b_n + delta * delta * self.count * b_n / tot
        self.var = m2 / tot
        self.count = tot


class RewardScaler:
    """Divides rewards by the running std of the discounted return."""

    def __init__(self, n_envs, gamma, clip=10.0):
        self.rms = RunningMeanStd()
        self.ret = np.zeros(n_envs)
        self.gamma = gamma
        self.clip = clip

    def __call__(self, rewards, dones):
        self.ret = self.ret * self.gamma + rewards
        self.rms.update(self.ret)
        self.ret[dones] = 0.0
        return np.clip(rewards / math.sqrt(float(self.rms.var) + 1e-8), -self.clip, self.clip)


def make_envs(cfg: TrainConfig, seeds, background=None):
    rewards = cfg.reward_config()
    return [CongestionEnv(np.random.default_rng(s), reward_cfg=rewards, augmented=cfg.augmented,
                          shaped=cfg.strategy == "a", background=background,
                          episode_len=cfg.episode_len)
            for s in seeds]


def train(cfg: TrainConfig, curve_path=None, progress=None):
    """Train one policy; returns ``(PolicyCheckpoint, curve)`` with curve rows ``(step, mean_episode_reward)``."""
    background = None
    if cfg.needs_background:
        if not cfg.background:
            raise ValueError(f"strategy {cfg.strategy!r} needs a frozen baseline checkpoint (background)")
        if not Path(cfg.background).exists():
            raise FileNotFoundError(f"frozen baseline checkpoint not found: {cfg.background}")
        background = load_checkpoint(cfg.background, expected_obs_dim=30)

    root = np.random.SeedSequence(cfg.seed)
    env_seqs = root.spawn(cfg.n_envs + 1)
    agg_rng = np.random.default_rng(env_seqs[-1])
    worker_rngs = [np.random.default_rng(s) for s in env_seqs[:-1]]
    envs = VecEnv(make_envs(cfg, [s.spawn(1)[0] for s in env_seqs[:-1]], background),
                  reward_norm=cfg.reward_norm)
    extra_dim = CRITIC_FEATURES if cfg.privileged_critic else 0
    model = ActorCritic.init(obs_dim(cfg.augmented), agg_rng, critic_extra=extra_dim)
    optim = PPOOptimizer(model, cfg.learning_rate)
    scaler = RewardScaler(cfg.n_envs, cfg.gamma)
    obs_rms = RunningMeanStd(model.obs_dim) if cfg.norm_obs else None

    obs = envs.reset()
    horizon = min(cfg.horizon, max(1, cfg.total_steps // cfg.n_envs))
    steps = 0
    curve = []
    t0 = time.time()
    while steps < cfg.total_steps:
        T, E = horizon, cfg.n_envs
        b_obs = np.zeros((T, E, obs.shape[1]))
        b_act = np.zeros((T, E))
        b_rew = np.zeros((T, E))
        b_val = np.zeros((T, E))
        b_logp = np.zeros((T, E))
        b_done = np.zeros((T, E), dtype=bool)
        b_extra = np.zeros((T, E, extra_dim))
        std = math.exp(model.log_std[0])
        for t in range(T):
            if obs_rms is not None:
                obs_rms.update(obs)
                model.obs_mean, model.obs_var = obs_rms.mean.copy(), obs_rms.var.copy()
            x = model.normalize(obs)
            extra = envs.critic_features() if extra_dim else None
            mean, value = model.heads(x, extra)
            noise = np.stack([r.standard_normal() for r in worker_rngs])
            action = mean + std * noise
            b_obs[t] = x
            if extra_dim:
                b_extra[t] = extra
            b_act[t] = action
            b_val[t] = value
            b_logp[t] = gaussian_log_prob(action, mean, model.log_std[0])
            obs, raw, done = envs.step(action)
            b_rew[t] = scaler(raw, done)
            b_done[t] = done
        steps += T * E
        _, last_value = model.heads(model.normalize(obs), envs.critic_features() if extra_dim else None)
        adv = np.zeros((T, E))
        ret = np.zeros((T, E))
        for e in range(E):
            adv[:, e], ret[:, e] = gae_advantages(b_rew[:, e], b_val[:, e], last_value[e],
                                                  cfg.gamma, cfg.gae_lambda, b_done[:, e])
        batch = RolloutBatch(b_obs.reshape(T * E, -1), b_act.reshape(-1), b_rew.reshape(-1),
                             b_val.reshape(-1), b_logp.reshape(-1), b_done.reshape(-1),
                             adv.reshape(-1), ret.reshape(-1),
                             b_extra.reshape(T * E, -1) if extra_dim else None)
        model, diag = ppo_update(model, batch, optim, agg_rng, cfg.clip_eps, cfg.epochs,
                                 cfg.minibatch_size, cfg.vf_coef, cfg.ent_coef, cfg.max_grad_norm)
        finished = envs.pop_finished()
        if finished:
            curve.append((steps, float(np.mean(finished))))
        log.info("step %d  episodes %d  mean_reward %s  vloss %.3f  log_std %.3f  fps %.0f",
                 steps, len(finished), f"{np.mean(finished):.1f}" if finished else "-",
                 diag["value_loss"], model.log_std[0], steps / (time.time() - t0))
        if progress is not None:
            progress(steps, diag)

    ckpt = PolicyCheckpoint(model, strategy=cfg.strategy, lam=cfg.reward_config().lam,
                            loss_coef=cfg.loss_coef, train_seed=cfg.seed, steps_trained=steps,
                            extra={"train_config": cfg.to_dict()})
    if curve_path is not None:
        write_curve_csv(curve, curve_path)
    return ckpt, curve


def write_curve_csv(curve, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "mean_episode_reward"])
        for step, r in curve:
            w.writerow([step, repr(r)])
    tmp.replace(path)


def read_curve_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [(int(r["step"]), float(r["mean_episode_reward"])) for r in rows]
