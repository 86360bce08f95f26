"""Shared-bottleneck simulator.

Packets are ``(send_time, flow_id)`` pairs fed through a single FIFO queue
with deterministic service time ``1 / bandwidth``.  Flows are rate driven and
statistics are reported once per monitor interval (MI).  Feedback delay is
not modelled: a packet accepted by the queue counts as delivered in the MI it
was sent, with latency equal to the propagation delay plus its queueing wait.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

PACKET_SIZE_BITS = 12000
MIN_RATE = 1.0


def pps_to_mbps(pps, packet_size_bits=PACKET_SIZE_BITS):
    return pps * packet_size_bits / 1e6


def mbps_to_pps(mbps, packet_size_bits=PACKET_SIZE_BITS):
    return mbps * 1e6 / packet_size_bits


@dataclass
class LinkConfig:
    bandwidth_pps: float
    one_way_latency_s: float
    queue_capacity_pkts: int
    random_loss_rate: float = 0.0
    packet_size_bits: int = PACKET_SIZE_BITS

    def __post_init__(self):
        if not self.bandwidth_pps > 0:
            raise ValueError(f"bandwidth_pps must be > 0, got {self.bandwidth_pps}")
        if not self.one_way_latency_s > 0:
            raise ValueError(f"one_way_latency_s must be > 0, got {self.one_way_latency_s}")
        if self.queue_capacity_pkts < 1:
            raise ValueError(f"queue_capacity_pkts must be >= 1, got {self.queue_capacity_pkts}")
        if not 0.0 <= self.random_loss_rate <= 1.0:
            raise ValueError(f"random_loss_rate must be in [0, 1], got {self.random_loss_rate}")

    @property
    def rtt_s(self) -> float:
        return 2.0 * self.one_way_latency_s

    @property
    def mi_duration_s(self) -> float:
        """One monitor interval lasts one base RTT."""
        return self.rtt_s

    @property
    def bandwidth_mbps(self) -> float:
        return pps_to_mbps(self.bandwidth_pps, self.packet_size_bits)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LinkConfig":
        return cls(
            bandwidth_pps=float(d["bandwidth_pps"]),
            one_way_latency_s=float(d["one_way_latency_s"]),
            queue_capacity_pkts=int(d["queue_capacity_pkts"]),
            random_loss_rate=float(d.get("random_loss_rate", 0.0)),
            packet_size_bits=int(d.get("packet_size_bits", PACKET_SIZE_BITS)),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LinkConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# Link used for the staggered duels, mixed-CUBIC runs and the dynamic trace:
# 300 pps is 3.6 Mbps with 1500-byte packets.
DUEL_LINK = LinkConfig(bandwidth_pps=300.0, one_way_latency_s=0.1,
                       queue_capacity_pkts=100, random_loss_rate=0.0)


@dataclass
class RateActionConfig:
    alpha: float = 0.025
    min_rate: float = MIN_RATE

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")


def apply_rate_action(prev_rate, a, cfg=None):
    """Multiplicative rate update: scale up by ``1 + alpha*a`` or down by ``1 - alpha*a``."""
    cfg = cfg or RateActionConfig()
    a = min(1.0, max(-1.0, float(a)))
    if a >= 0:
        rate = prev_rate * (1.0 + cfg.alpha * a)
    else:
        rate = prev_rate / (1.0 - cfg.alpha * a)
    return max(cfg.min_rate, rate)


@dataclass
class FlowState:
    flow_id: int
    send_rate_pps: float
    active: bool = True
    sent: int = 0
    delivered: int = 0
    lost: int = 0
    min_latency_s: float = math.inf
    last_send_time: float | None = field(default=None, repr=False)

    def set_rate(self, rate):
        self.send_rate_pps = max(MIN_RATE, float(rate))


@dataclass
class MonitorReport:
    flow_id: int
    mi_index: int
    duration_s: float
    sent_pkts: int
    delivered_pkts: int
    lost_pkts: int
    mean_latency_s: float
    min_latency_s: float
    send_rate_pps: float = 0.0

    @property
    def throughput_pps(self) -> float:
        return self.delivered_pkts / self.duration_s

    @property
    def delivered_empty(self) -> bool:
        return self.delivered_pkts == 0

    @property
    def loss_fraction(self) -> float:
        return self.lost_pkts / self.sent_pkts if self.sent_pkts else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["throughput_pps"] = self.throughput_pps
        d["delivered_empty"] = self.delivered_empty
        return d


def muted_report(flow_id, mi_index, duration_s):
    return MonitorReport(flow_id, mi_index, duration_s, 0, 0, 0, 0.0, 0.0, 0.0)


class SharedBottleneck:
    """One FIFO queue shared by every flow; the backlog persists across MIs."""

    def __init__(self, link: LinkConfig, rng: np.random.Generator | None = None):
        self.link = link
        self.rng = rng if rng is not None else np.random.default_rng()
        self.bandwidth_pps = link.bandwidth_pps
        self.now = 0.0
        self.busy_until = 0.0
        self.mi_index = 0

    def queue_pkts(self, t=None) -> float:
        """Outstanding work in packets (fractional) at time ``t``."""
        t = self.now if t is None else t
        return max(0.0, self.busy_until - t) * self.bandwidth_pps

    def set_bandwidth(self, bandwidth_pps):
        """Change the service rate at the current time, keeping the backlog in packets."""
        backlog = self.queue_pkts()
        self.bandwidth_pps = float(bandwidth_pps)
        self.busy_until = self.now + backlog / self.bandwidth_pps

    def _emit(self, flow: FlowState, start, end):
        gap = 1.0 / flow.send_rate_pps
        if flow.last_send_time is None:
            first = start + self.rng.random() * gap
        else:
            first = max(start, flow.last_send_time + gap)
        if first >= end:
            return np.empty(0)
        n = int(math.ceil((end - first) / gap))
        times = first + gap * np.arange(n)
        return times[times < end]

    def step(self, flows, active_mask=None, duration_s=None):
        """Advance one MI and return a MonitorReport per flow."""
        if active_mask is None:
            active_mask = [True] * len(flows)
        if len(active_mask) != len(flows):
            raise ValueError("active_mask length must match flows")
        duration_s = self.link.mi_duration_s if duration_s is None else duration_s
        if not duration_s > 0:
            raise ValueError("duration_s must be > 0")
        start, end = self.now, self.now + duration_s

        time_chunks, id_chunks = [], []
        for idx, (flow, on) in enumerate(zip(flows, active_mask)):
            flow.active = bool(on)
            if not on:
                flow.last_send_time = None
                continue
            times = self._emit(flow, start, end)
            if len(times):
                flow.last_send_time = float(times[-1])
                time_chunks.append(times)
                id_chunks.append(np.full(len(times), idx))

        n_flows = len(flows)
        sent = [0] * n_flows
        delivered = [0] * n_flows
        lat_sum = [0.0] * n_flows
        min_lat = [math.inf] * n_flows
        if time_chunks:
            times = np.concatenate(time_chunks)
            ids = np.concatenate(id_chunks)
            order = np.argsort(times, kind="stable")
            times = times[order].tolist()
            ids = ids[order].tolist()
            loss_rate = self.link.random_loss_rate
            coins = self.rng.random(len(times)).tolist() if loss_rate > 0 else None
            service = 1.0 / self.bandwidth_pps
            bw = self.bandwidth_pps
            qcap = self.link.queue_capacity_pkts
            prop = self.link.one_way_latency_s
            busy = self.busy_until
            for k, t in enumerate(times):
                i = ids[k]
                sent[i] += 1
                wait = busy - t
                if wait > 0:
                    # packets still in the system, counting the one in service
                    if math.ceil(wait * bw - 1e-9) >= qcap:
                        continue
                else:
                    wait = 0.0
                if coins is not None and coins[k] < loss_rate:
                    continue
                busy = t + wait + service
                delivered[i] += 1
                lat = prop + wait
                lat_sum[i] += lat
                if lat < min_lat[i]:
                    min_lat[i] = lat
            self.busy_until = busy

        reports = []
        for idx, flow in enumerate(flows):
            if not active_mask[idx]:
                reports.append(muted_report(flow.flow_id, self.mi_index, duration_s))
                continue
            d = delivered[idx]
            lost = sent[idx] - d
            flow.sent += sent[idx]
            flow.delivered += d
            flow.lost += lost
            if min_lat[idx] < flow.min_latency_s:
                flow.min_latency_s = min_lat[idx]
            reports.append(MonitorReport(
                flow_id=flow.flow_id,
                mi_index=self.mi_index,
                duration_s=duration_s,
                sent_pkts=sent[idx],
                delivered_pkts=d,
                lost_pkts=lost,
                mean_latency_s=lat_sum[idx] / d if d else 0.0,
                min_latency_s=flow.min_latency_s if flow.delivered else 0.0,
                send_rate_pps=flow.send_rate_pps,
            ))
        self.now = end
        self.mi_index += 1
        return reports


def step_network(link, flows, active_mask, duration_s, rng, bottleneck=None):
    """Functional wrapper: one MI on ``bottleneck`` (a fresh one if omitted)."""
    net = bottleneck if bottleneck is not None else SharedBottleneck(link, rng)
    return net.step(flows, active_mask, duration_s)


QUEUE_RANGE = (2, 2981)


def sample_training_link(rng: np.random.Generator) -> LinkConfig:
    """Draw a single-flow training link from the Aurora training distribution."""
    bw = rng.uniform(100.0, 500.0)
    lat = rng.uniform(0.05, 0.5)
    lo, hi = QUEUE_RANGE
    queue = int(round(math.exp(rng.uniform(math.log(lo), math.log(hi)))))
    loss = rng.uniform(0.0, 0.05)
    return LinkConfig(bandwidth_pps=bw, one_way_latency_s=lat,
                      queue_capacity_pkts=min(hi, max(lo, queue)), random_loss_rate=loss)
