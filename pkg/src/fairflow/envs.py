"""Training environments: one ego flow on a sampled link, optionally sharing
the bottleneck with a frozen background policy."""
from __future__ import annotations

import math

import numpy as np

from .controllers import PolicyController, sample_initial_rate
from .features import FeatureHistory, build_observation, estimate_capacity
from .rewards import RewardConfig, base_reward, shaped_reward_a
from .sim import (QUEUE_RANGE, FlowState, RateActionConfig, SharedBottleneck, apply_rate_action, pps_to_mbps,
                  sample_training_link)

EPISODE_LEN = 400
MAX_TRAIN_STAGGER = 100
CRITIC_FEATURES = 6
_LOG_MAX_QUEUE = math.log(QUEUE_RANGE[1])


def mi_reward(report, latency_fallback, reward_cfg, shaped=False):
    """Per-MI reward for one flow; MIs without deliveries reuse the last latency."""
    to_unit = pps_to_mbps if reward_cfg.tput_unit == "mbps" else float
    tput = to_unit(report.throughput_pps)
    lat = report.mean_latency_s if report.delivered_pkts else latency_fallback
    r = base_reward(tput, lat, report.loss_fraction, reward_cfg)
    if shaped:
        send_ratio = report.delivered_pkts / report.sent_pkts if report.sent_pkts else 1.0
        cap = to_unit(estimate_capacity(report.send_rate_pps, send_ratio))
        r = shaped_reward_a(r, tput, cap, reward_cfg)
    return r


class CongestionEnv:
    """Gym-style environment whose agent is the ego flow's rate controller.

    With a ``background`` checkpoint the link carries two flows.  One of them
    starts alone and the other joins after a random stagger; which one is the
    incumbent is drawn per episode.  MIs the ego spends waiting to join are
    simulated inside ``reset`` and are not agent steps.
    """

    def __init__(self, rng, reward_cfg=None, augmented=False, shaped=False,
                 background=None, episode_len=EPISODE_LEN, max_stagger=MAX_TRAIN_STAGGER,
                 link_sampler=sample_training_link):
        self.rng = rng
        self.reward_cfg = reward_cfg or RewardConfig()
        self.augmented = augmented
        self.shaped = shaped
        self.background = PolicyController(background) if background is not None else None
        self.episode_len = episode_len
        self.max_stagger = max_stagger
        self.link_sampler = link_sampler
        self.action_cfg = RateActionConfig()
        self.hist = FeatureHistory()

    def reset(self):
        rng = self.rng
        self.link = self.link_sampler(rng)
        self.net = SharedBottleneck(self.link, rng)
        self.t = 0
        self.hist.reset()
        self.last_latency = self.link.one_way_latency_s
        self.ego = FlowState(0, sample_initial_rate(rng, self.link.bandwidth_pps))
        self.flows = [self.ego]
        self.mask = [True]
        self.bg_join = None
        if self.background is not None:
            bg = FlowState(1, self.background.reset(self.link, sample_initial_rate(rng, self.link.bandwidth_pps)))
            self.flows.append(bg)
            stagger = int(rng.integers(0, self.max_stagger + 1))
            if rng.random() < 0.5:
                # ego is the incumbent, background joins later
                self.mask = [True, stagger == 0]
                self.bg_join = stagger
            else:
                self.mask = [False, True]
                for _ in range(stagger):
                    self._advance()
                self.mask = [True, True]
        return build_observation(self.hist, self.augmented)

    def critic_features(self):
        """Simulator state hidden from the policy, given to the value net in training:
        ego and competitor rate over bandwidth, queue fill, episode progress,
        random loss rate and log queue capacity."""
        link = self.link
        bw = self.net.bandwidth_pps
        other = 0.0
        if len(self.flows) > 1 and self.mask[1]:
            other = self.flows[1].send_rate_pps / bw
        return np.array([
            min(self.ego.send_rate_pps / bw, 4.0),
            min(other, 4.0),
            self.net.queue_pkts() / link.queue_capacity_pkts,
            self.t / self.episode_len,
            link.random_loss_rate / 0.05,
            math.log(link.queue_capacity_pkts) / _LOG_MAX_QUEUE,
        ])

    def reward_baseline(self):
        """(offset, scale) from the episode's link: the unavoidable latency and
        random-loss penalties, and the bandwidth.  ``(r + offset) / scale`` differs
        from ``r`` by per-episode constants only."""
        cfg = self.reward_cfg
        offset = cfg.lat_coef * self.link.one_way_latency_s + cfg.loss_coef * self.link.random_loss_rate
        scale = self.link.bandwidth_pps if cfg.tput_unit == "pps" else pps_to_mbps(self.link.bandwidth_pps)
        return offset, scale

    def _advance(self):
        reports = self.net.step(self.flows, self.mask)
        self.t += 1
        if self.background is not None and self.mask[1]:
            self.flows[1].set_rate(self.background.update(reports[1]))
        if self.bg_join is not None and not self.mask[1] and self.t >= self.bg_join:
            self.mask[1] = True
        return reports

    def step(self, action):
        self.ego.set_rate(apply_rate_action(self.ego.send_rate_pps, action, self.action_cfg))
        report = self._advance()[0]
        reward = mi_reward(report, self.last_latency, self.reward_cfg, self.shaped)
        if report.delivered_pkts:
            self.last_latency = report.mean_latency_s
        self.hist.push(report)
        done = self.t >= self.episode_len
        return build_observation(self.hist, self.augmented), reward, done, report


class VecEnv:
    """Steps several environments in lockstep, auto-resetting finished ones.

    ``reward_norm`` selects the training reward: ``"none"`` passes rewards
    through, ``"bandwidth"`` divides by the link bandwidth, and ``"link"`` also
    removes the link's unavoidable latency and loss penalty first (see
    ``CongestionEnv.reward_baseline``).  Episodes have fixed length, so these
    per-episode affine maps leave the best policy on every link unchanged.
    Episode returns stay raw.
    """

    def __init__(self, envs, reward_norm="none"):
        self.envs = envs
        self.reward_norm = reward_norm
        self.ep_returns = np.zeros(len(envs))
        self.finished = []

    def reset(self):
        self.ep_returns[:] = 0.0
        return np.stack([e.reset() for e in self.envs])

    def step(self, actions):
        obs, rewards, dones = [], [], []
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            o, r, d, _ = env.step(float(np.clip(a, -1.0, 1.0)))
            self.ep_returns[i] += r
            if self.reward_norm != "none":
                offset, scale = env.reward_baseline()
                r = (r + offset) / scale if self.reward_norm == "link" else r / scale
            if d:
                self.finished.append(self.ep_returns[i])
                self.ep_returns[i] = 0.0
                o = env.reset()
            obs.append(o)
            rewards.append(r)
            dones.append(d)
        return np.stack(obs), np.asarray(rewards), np.asarray(dones)

    def critic_features(self):
        return np.stack([e.critic_features() for e in self.envs])

    def pop_finished(self):
        out, self.finished = self.finished, []
        return out
