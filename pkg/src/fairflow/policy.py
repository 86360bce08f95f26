"""Tanh MLP policy/value networks with hand-written backprop, and checkpoints.

Policy:  obs -> 32 -> 16 -> 1, tanh hidden units, tanh on the output so the
action mean lies in [-1, 1]; Gaussian head with a state-independent log std.
Value:   same layer sizes, separate weights, linear output.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
HIDDEN_SIZES = (32, 16)
LOG_STD_INIT = -0.5
OBS_NORM_EPS = 1e-8
OBS_NORM_CLIP = 10.0
_LOG_2PI = math.log(2.0 * math.pi)


class CheckpointError(Exception):
    pass


class MalformedCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ObsDimMismatchError(CheckpointError):
    def __init__(self, expected, got):
        super().__init__(f"observation dimension mismatch: scenario provides {expected}, "
                         f"checkpoint expects {got}")
        self.expected = expected
        self.got = got


class Mlp:
    """Fully connected net; weights stored (out, in)."""

    def __init__(self, weights, biases, out_tanh):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.out_tanh = out_tanh

    @classmethod
    def init(cls, sizes, rng, out_tanh, out_scale=1.0):
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_scale if i == len(sizes) - 2 else math.sqrt(2.0)
            # orthogonal init, as in the usual PPO setups
            a = rng.standard_normal((max(n_out, n_in), min(n_out, n_in)))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))
            w = q if n_out >= n_in else q.T
            weights.append(gain * w[:n_out, :n_in])
            biases.append(np.zeros(n_out))
        return cls(weights, biases, out_tanh)

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x, cache=False):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = np.tanh(z) if (i < last or self.out_tanh) else z
            acts.append(h)
        return (h, acts) if cache else h

    def backward(self, acts, grad_out):
        """Gradients of a loss w.r.t. params given dL/d(output); same order as params()."""
        grads = []
        g = grad_out
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last or self.out_tanh:
                g = g * (1.0 - acts[i + 1] ** 2)
            grads.append(g.sum(axis=0))
            grads.append(g.T @ acts[i])
            if i > 0:
                g = g @ self.weights[i]
        grads.reverse()
        return grads

    def to_dict(self):
        return {"weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}


@dataclass
class ActorCritic:
    pi: Mlp
    vf: Mlp
    log_std: np.ndarray
    obs_mean: np.ndarray | None = None  # running observation statistics; None = identity
    obs_var: np.ndarray | None = None

    @classmethod
    def init(cls, obs_dim, rng, hidden=HIDDEN_SIZES, log_std=LOG_STD_INIT, critic_extra=0):
        """``critic_extra`` widens only the value net's input (training-time state)."""
        sizes = [obs_dim, *hidden, 1]
        return cls(Mlp.init(sizes, rng, out_tanh=True, out_scale=0.01),
                   Mlp.init([obs_dim + critic_extra, *hidden, 1], rng, out_tanh=False, out_scale=1.0),
                   np.array([log_std], dtype=float))

    @property
    def obs_dim(self):
        return self.pi.sizes[0]

    def normalize(self, obs):
        if self.obs_mean is None:
            return obs
        z = (obs - self.obs_mean) / np.sqrt(self.obs_var + OBS_NORM_EPS)
        return np.clip(z, -OBS_NORM_CLIP, OBS_NORM_CLIP)

    @property
    def critic_extra(self):
        return self.vf.sizes[0] - self.obs_dim

    def value_input(self, x, extra=None):
        if self.critic_extra == 0:
            return x
        if extra is None:
            extra = np.zeros((x.shape[0], self.critic_extra))
        return np.concatenate([x, extra], axis=1)

    def heads(self, x, extra=None):
        """(action_mean, value) for an already-normalized (batch, obs_dim) array.

        ``extra`` feeds the value net's additional inputs (zeros when omitted).
        """
        return self.pi.forward(x)[:, 0], self.vf.forward(self.value_input(x, extra))[:, 0]

    def forward(self, obs):
        """(action_mean, value) for raw observations; vectorised over a leading batch axis."""
        obs = np.asarray(obs, dtype=float)
        single = obs.ndim == 1
        x = obs[None, :] if single else obs
        if x.shape[1] != self.obs_dim:
            raise ObsDimMismatchError(x.shape[1], self.obs_dim)
        mean, value = self.heads(self.normalize(x))
        if single:
            return float(mean[0]), float(value[0])
        return mean, value

    def act(self, obs, rng, deterministic=False):
        mean, value = self.forward(obs)
        std = math.exp(self.log_std[0])
        if deterministic:
            action = mean
        else:
            action = mean + std * rng.standard_normal(np.shape(mean))
        return action, value, gaussian_log_prob(action, mean, self.log_std[0])

    def copy(self):
        return ActorCritic(Mlp([w.copy() for w in self.pi.weights], [b.copy() for b in self.pi.biases], True),
                           Mlp([w.copy() for w in self.vf.weights], [b.copy() for b in self.vf.biases], False),
                           self.log_std.copy(),
                           None if self.obs_mean is None else self.obs_mean.copy(),
                           None if self.obs_var is None else self.obs_var.copy())


def gaussian_log_prob(action, mean, log_std):
    z = (action - mean) / math.exp(log_std)
    return -0.5 * z * z - log_std - 0.5 * _LOG_2PI


def mlp_forward(params: ActorCritic, obs):
    return params.forward(obs)


@dataclass
class PolicyCheckpoint:
    model: ActorCritic
    strategy: str = "base"
    lam: float = 0.0
    loss_coef: float = 2000.0
    train_seed: int = 0
    steps_trained: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def obs_dim(self):
        return self.model.obs_dim

    @property
    def augmented(self):
        return self.obs_dim == 32

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "obs_dim": self.obs_dim,
            "layer_sizes": self.model.pi.sizes,
            "value_layer_sizes": self.model.vf.sizes,
            "policy": self.model.pi.to_dict(),
            "value": self.model.vf.to_dict(),
            "log_std": self.model.log_std.tolist(),
            "obs_norm": None if self.model.obs_mean is None else
            {"mean": self.model.obs_mean.tolist(), "var": self.model.obs_var.tolist()},
            "strategy": {"strategy": self.strategy, "lambda": self.lam, "loss_coef": self.loss_coef},
            "train_seed": self.train_seed,
            "steps_trained": self.steps_trained,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d, expected_obs_dim=None):
        try:
            version = d["format_version"]
        except (KeyError, TypeError) as exc:
            raise MalformedCheckpointError("checkpoint has no format_version") from exc
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(f"unsupported checkpoint format_version {version!r}, "
                                         f"expected {FORMAT_VERSION}")
        try:
            obs_dim = int(d["obs_dim"])
            sizes = [int(s) for s in d["layer_sizes"]]
            vf_sizes = [int(s) for s in d.get("value_layer_sizes", sizes)]
            pi = Mlp(d["policy"]["weights"], d["policy"]["biases"], out_tanh=True)
            vf = Mlp(d["value"]["weights"], d["value"]["biases"], out_tanh=False)
            log_std = np.asarray(d["log_std"], dtype=float)
            meta = d["strategy"]
            norm = d.get("obs_norm")
            obs_mean = None if norm is None else np.asarray(norm["mean"], dtype=float)
            obs_var = None if norm is None else np.asarray(norm["var"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedCheckpointError(f"checkpoint is missing or has bad fields: {exc}") from exc
        if obs_dim not in (30, 32):
            raise ObsDimMismatchError(expected_obs_dim or 30, obs_dim)
        for net, want in ((pi, sizes), (vf, vf_sizes)):
            if net.sizes != want:
                raise MalformedCheckpointError(f"weights have sizes {net.sizes}, header says {want}")
            for w, b in zip(net.weights, net.biases):
                if w.ndim != 2 or b.shape != (w.shape[0],):
                    raise MalformedCheckpointError("inconsistent weight/bias shapes")
        if vf_sizes[0] < obs_dim or vf_sizes[1:] != sizes[1:]:
            raise MalformedCheckpointError(f"value sizes {vf_sizes} incompatible with policy sizes {sizes}")
        if sizes[0] != obs_dim:
            raise MalformedCheckpointError(f"layer_sizes start at {sizes[0]} but obs_dim is {obs_dim}")
        if obs_mean is not None and (obs_mean.shape != (obs_dim,) or obs_var.shape != (obs_dim,)
                                     or np.any(obs_var < 0)):
            raise MalformedCheckpointError("obs_norm statistics do not match obs_dim")
        if expected_obs_dim is not None and expected_obs_dim != obs_dim:
            raise ObsDimMismatchError(expected_obs_dim, obs_dim)
        return cls(ActorCritic(pi, vf, log_std, obs_mean, obs_var), strategy=meta["strategy"], lam=float(meta["lambda"]),
                   loss_coef=float(meta["loss_coef"]), train_seed=int(d.get("train_seed", 0)),
                   steps_trained=int(d.get("steps_trained", 0)), extra=d.get("extra", {}))


def save_checkpoint(ckpt: PolicyCheckpoint, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(ckpt.to_dict()) + "\n")
    tmp.replace(path)


def load_checkpoint(path, expected_obs_dim=None) -> PolicyCheckpoint:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedCheckpointError(f"{path}: not valid JSON ({exc})") from exc
    return PolicyCheckpoint.from_dict(d, expected_obs_dim=expected_obs_dim)
