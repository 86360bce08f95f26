"""Evaluation protocols: single-flow switching trace, staggered duel,
mixed ego-vs-CUBIC, and the dynamic entry/exit trace."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .controllers import CubicController, PinnedController, make_controller, sample_initial_rate
from .metrics import FairnessReport, TraceResult, harm, steady_state_J
from .sim import DUEL_LINK, FlowState, LinkConfig, SharedBottleneck, mbps_to_pps, pps_to_mbps

EPISODE_LEN = 400
DEFAULT_STAGGER = 50
DEFAULT_EPISODES = 50
SCENARIOS = ("single", "duel", "cubic", "dynamic")
SOLO_STREAM = 1_000_000  # rng stream id for solo baselines, disjoint from episode ids


@dataclass
class EpisodeResult:
    throughput_pps: np.ndarray  # (mis, flows)
    active: np.ndarray  # (mis, flows) bool
    capacity_pps: np.ndarray  # (mis,)
    mi_duration_s: float
    flow_ids: list

    @property
    def throughput_mbps(self):
        return pps_to_mbps(self.throughput_pps)

    def flow_means_mbps(self):
        """Mean throughput of each flow over the MIs in which it was active."""
        out = []
        for i in range(self.throughput_pps.shape[1]):
            on = self.active[:, i]
            out.append(float(self.throughput_mbps[on, i].mean()) if on.any() else 0.0)
        return out

    def time_s(self):
        return np.arange(len(self.capacity_pps)) * self.mi_duration_s


def independent_controllers(specs):
    """One controller object per flow slot, even if the same spec is repeated."""
    out, seen = [], set()
    for spec in specs:
        ctrl = make_controller(spec)
        if id(ctrl) in seen:
            ctrl = copy.deepcopy(ctrl)
        seen.add(id(ctrl))
        out.append(ctrl)
    return out


def run_episode(link: LinkConfig, controllers, active_fn, n_mis, rng, bandwidth_fn=None,
                initial_rates=None, flow_ids=None):
    """Drive ``controllers`` over one episode.

    ``active_fn(mi)`` gives the active mask for each MI.  A flow that becomes
    active is reset to its initial rate; a flow that goes inactive is muted.
    """
    n = len(controllers)
    flow_ids = list(flow_ids) if flow_ids is not None else list(range(n))
    if initial_rates is None:
        initial_rates = [sample_initial_rate(rng, link.bandwidth_pps) for _ in range(n)]
    net = SharedBottleneck(link, rng)
    flows = [FlowState(fid, 1.0, active=False) for fid in flow_ids]
    was_active = [False] * n
    tput = np.zeros((n_mis, n))
    active = np.zeros((n_mis, n), dtype=bool)
    capacity = np.zeros(n_mis)
    for mi in range(n_mis):
        mask = list(active_fn(mi))
        for i in range(n):
            if mask[i] and not was_active[i]:
                flows[i].set_rate(controllers[i].reset(link, initial_rates[i], rng))
        was_active = mask
        if bandwidth_fn is not None:
            net.set_bandwidth(bandwidth_fn(mi))
        capacity[mi] = net.bandwidth_pps
        reports = net.step(flows, mask)
        for i, rep in enumerate(reports):
            active[mi, i] = mask[i]
            if mask[i]:
                tput[mi, i] = rep.throughput_pps
                flows[i].set_rate(controllers[i].update(rep))
    return EpisodeResult(tput, active, capacity, link.mi_duration_s, flow_ids)


def episode_rng(seed, episode):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(episode)]))


# --- single-flow bandwidth-switching trace -------------------------------------

@dataclass
class SwitchingTrace:
    """Piecewise-constant bandwidth; ``segments`` are (duration_s, Mbps)."""

    segments: list = field(default_factory=lambda: [(5.0, 20.0), (5.0, 40.0), (5.0, 20.0),
                                                    (5.0, 40.0), (5.0, 20.0)])
    one_way_latency_s: float = 0.05
    queue_capacity_pkts: int = 20  # shallow buffer, ~0.1 BDP at 20 Mbps
    random_loss_rate: float = 0.0

    @property
    def duration_s(self):
        return sum(d for d, _ in self.segments)

    def link(self):
        return LinkConfig(mbps_to_pps(self.segments[0][1]), self.one_way_latency_s,
                          self.queue_capacity_pkts, self.random_loss_rate)

    def n_mis(self):
        return int(round(self.duration_s / self.link().mi_duration_s))

    def bandwidth_mbps_at(self, t):
        edge = 0.0
        for d, mbps in self.segments:
            edge += d
            if t < edge - 1e-9:
                return mbps
        return self.segments[-1][1]

    def capacity_pps(self, mi):
        return mbps_to_pps(self.bandwidth_mbps_at(mi * self.link().mi_duration_s))


def run_single_flow_trace(controller, trace: SwitchingTrace | None = None, seed=0, initial_rate=None):
    """Run one controller alone on the switching trace."""
    trace = trace or SwitchingTrace()
    link = trace.link()
    if isinstance(controller, str) and controller == "oracle":
        controller = PinnedController(trace.capacity_pps)
    ctrl = make_controller(controller)
    rng = np.random.default_rng(seed)
    rate0 = link.bandwidth_pps if initial_rate is None else initial_rate
    ep = run_episode(link, [ctrl], lambda mi: [True], trace.n_mis(), rng,
                     bandwidth_fn=trace.capacity_pps, initial_rates=[rate0])
    return TraceResult.from_series(ep.throughput_mbps[:, 0], pps_to_mbps(ep.capacity_pps)), ep


# --- two-flow protocols ----------------------------------------------------------

@dataclass
class ScenarioConfig:
    kind: str = "duel"
    link: LinkConfig = field(default_factory=lambda: copy.deepcopy(DUEL_LINK))
    episodes: int = DEFAULT_EPISODES
    stagger_mis: int = DEFAULT_STAGGER
    episode_len: int = EPISODE_LEN
    seed: int = 0
    ego: str | None = None
    background: str | None = None

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ValueError(f"scenario kind must be one of {SCENARIOS}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not 0 <= self.stagger_mis < self.episode_len:
            raise ValueError("stagger must be in [0, episode_len)")
        if isinstance(self.link, dict):
            self.link = LinkConfig.from_dict(self.link)

    def to_dict(self):
        d = dict(self.__dict__)
        d["link"] = self.link.to_dict()
        return d


def run_staggered_duel(ego, background, cfg: ScenarioConfig | None = None, keep_episodes=False):
    """Background is the incumbent (flow 0); the ego joins after ``stagger_mis``."""
    cfg = cfg or ScenarioConfig()
    bg_ctrl, ego_ctrl = independent_controllers([background, ego])
    report = FairnessReport(flow_labels=["background", "ego"], meta={"scenario": "duel", **cfg.to_dict()})
    episodes = []
    stagger = cfg.stagger_mis
    for ep in range(cfg.episodes):
        res = run_episode(cfg.link, [bg_ctrl, ego_ctrl], lambda mi: [True, mi >= stagger],
                          cfg.episode_len, episode_rng(cfg.seed, ep))
        report.add_episode(res.flow_means_mbps())
        if keep_episodes:
            episodes.append(res)
    return (report, episodes) if keep_episodes else report


def cubic_solo_baseline(link: LinkConfig, seed=0, episode_len=EPISODE_LEN):
    """CUBIC's mean throughput (Mbps) alone on ``link`` for one episode."""
    res = run_episode(link, [CubicController()], lambda mi: [True], episode_len, episode_rng(seed, SOLO_STREAM))
    return res.flow_means_mbps()[0]


def run_mixed_cubic(ego, cfg: ScenarioConfig | None = None, solo_tput=None, keep_episodes=False):
    """Ego (flow 0) against one CUBIC flow; reports Harm to CUBIC per episode."""
    cfg = cfg or ScenarioConfig(kind="cubic", stagger_mis=0)
    if solo_tput is None:
        solo_tput = cubic_solo_baseline(cfg.link, cfg.seed, cfg.episode_len)
    if not solo_tput > 0:
        raise ValueError("CUBIC solo baseline missing or zero")
    ego_ctrl, cubic_ctrl = independent_controllers([ego, CubicController()])
    report = FairnessReport(flow_labels=["ego", "cubic"],
                            meta={"scenario": "cubic", "cubic_solo_mbps": solo_tput, **cfg.to_dict()})
    episodes = []
    stagger = cfg.stagger_mis
    for ep in range(cfg.episodes):
        res = run_episode(cfg.link, [ego_ctrl, cubic_ctrl], lambda mi: [mi >= stagger, True],
                          cfg.episode_len, episode_rng(cfg.seed, ep))
        means = res.flow_means_mbps()
        report.add_episode(means, harm(solo_tput, means[1]))
        if keep_episodes:
            episodes.append(res)
    return (report, episodes) if keep_episodes else report


def throughput_ratio(report: FairnessReport):
    ego, other = report.flow_means()
    return ego / other if other > 0 else float("inf")


# --- dynamic entry / exit --------------------------------------------------------

@dataclass
class DynamicTrace:
    events: list = field(default_factory=lambda: [(0, {1}), (80, {1, 2}), (160, {1, 2, 3}),
                                                  (240, {1, 2, 3, 4}), (320, {1, 3, 4})])
    n_flows: int = 4
    episode_len: int = EPISODE_LEN

    def __post_init__(self):
        self.events = [(int(t), set(s)) for t, s in self.events]
        self.validate()

    def validate(self):
        if not self.events:
            raise ValueError("dynamic trace needs at least one event")
        times = [t for t, _ in self.events]
        if times[0] != 0:
            raise ValueError("first event must be at MI 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("event MIs must be strictly increasing")
        if times[-1] >= self.episode_len:
            raise ValueError("events must fall inside the episode")
        for _, s in self.events:
            if not s:
                raise ValueError("active sets must be nonempty")
            if not all(1 <= f <= self.n_flows for f in s):
                raise ValueError(f"flow ids must be in 1..{self.n_flows}")

    @property
    def event_times(self):
        return [t for t, _ in self.events]

    def active_at(self, mi):
        current = self.events[0][1]
        for t, s in self.events:
            if mi >= t:
                current = s
        return [fid in current for fid in range(1, self.n_flows + 1)]


def run_dynamic(policy, trace: DynamicTrace | None = None, link: LinkConfig | None = None, seed=0,
                window=20, keep_episode=False):
    """One deterministic episode with homogeneous controllers; steady-state J per phase."""
    trace = trace or DynamicTrace()
    link = link or DUEL_LINK
    ctrls = independent_controllers([policy] * trace.n_flows)
    res = run_episode(link, ctrls, trace.active_at, trace.episode_len, episode_rng(seed, 0),
                      flow_ids=range(1, trace.n_flows + 1))
    phases = steady_state_J(res.throughput_mbps, trace.event_times, window, active=res.active)
    return (phases, res) if keep_episode else phases


def phases_to_dict(phases):
    return [{"phase": f"P{i}", "start_mi": p.start, "end_mi": p.end, "n_active": p.n_active,
             "J": p.jain, "short_window": p.short} for i, p in enumerate(phases)]


def load_scenario_config(path) -> ScenarioConfig:
    from .config import load_config_file
    d = load_config_file(path)
    return ScenarioConfig(**d)
