"""Fairness and efficiency metrics: Jain's index, Harm, utilization/gap."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np


def jain_index(throughputs) -> float:
    """Jain's fairness index. Returns NaN when every entry is zero (undefined)."""
    x = np.asarray(throughputs, dtype=float)
    if x.size == 0:
        raise ValueError("jain_index needs at least one throughput")
    if np.any(x < 0):
        raise ValueError("throughputs must be nonnegative")
    peak = float(x.max())
    if peak == 0.0:
        return math.nan
    x = x / peak  # equal inputs become exact ones, so J is exactly 1
    sq = float(np.dot(x, x))
    s = float(x.sum())
    return s * s / (x.size * sq)


def harm(solo_tput, mixed_tput) -> float:
    """Fractional throughput a victim loses relative to running alone."""
    if not solo_tput > 0:
        raise ValueError("solo throughput baseline must be > 0")
    return max(0.0, (solo_tput - mixed_tput) / solo_tput)


@dataclass
class TraceResult:
    throughput_mbps: list
    capacity_mbps: list
    mean_throughput_mbps: float = 0.0
    utilization: float = 0.0
    mean_abs_gap_mbps: float = 0.0

    @classmethod
    def from_series(cls, throughput_mbps, capacity_mbps):
        util, gap = utilization_and_gap(throughput_mbps, capacity_mbps)
        return cls(list(map(float, throughput_mbps)), list(map(float, capacity_mbps)),
                   float(np.mean(throughput_mbps)), util, gap)

    def summary(self):
        return {"mean_throughput_mbps": self.mean_throughput_mbps,
                "utilization": self.utilization,
                "mean_abs_gap_mbps": self.mean_abs_gap_mbps,
                "mean_capacity_mbps": float(np.mean(self.capacity_mbps))}


def utilization_and_gap(throughput, capacity):
    tput = np.asarray(throughput, dtype=float)
    cap = np.asarray(capacity, dtype=float)
    if tput.size == 0 or cap.size == 0:
        raise ValueError("empty series")
    if tput.shape != cap.shape:
        raise ValueError("throughput and capacity series must have equal length")
    return float(tput.mean() / cap.mean()), float(np.abs(tput - cap).mean())


@dataclass
class PhaseFairness:
    start: int
    end: int
    n_active: int
    jain: float
    short: bool = False


def steady_state_J(per_step_throughputs, event_times, window=20, active=None):
    """J per phase over the last ``window`` steps before the next event.

    ``per_step_throughputs`` is (steps, flows).  ``active`` is a boolean array of
    the same shape; when omitted a flow counts as active in a phase if it moved
    any traffic during the averaging window.
    """
    tput = np.asarray(per_step_throughputs, dtype=float)
    n_steps = tput.shape[0]
    events = list(event_times)
    if events != sorted(events):
        raise ValueError("event times must be sorted")
    bounds = events + [n_steps]
    out = []
    for start, end in zip(bounds[:-1], bounds[1:]):
        length = end - start
        short = length < window
        lo = start if short else end - window
        seg = tput[lo:end]
        if active is not None:
            flows = np.flatnonzero(np.asarray(active)[lo:end].any(axis=0))
        else:
            flows = np.flatnonzero(seg.sum(axis=0) > 0)
        means = seg[:, flows].mean(axis=0) if len(flows) else np.zeros(0)
        j = jain_index(means) if len(flows) else math.nan
        out.append(PhaseFairness(start, end, int(len(flows)), j, short))
    return out


@dataclass
class FairnessReport:
    per_flow_mbps: list = field(default_factory=list)  # one list of per-flow means per episode
    jain: list = field(default_factory=list)
    flow_labels: list = field(default_factory=lambda: ["background", "ego"])
    harm: list | None = None
    meta: dict = field(default_factory=dict)

    def add_episode(self, per_flow_mbps, harm_value=None):
        self.per_flow_mbps.append([float(x) for x in per_flow_mbps])
        self.jain.append(jain_index(per_flow_mbps))
        if harm_value is not None:
            if self.harm is None:
                self.harm = []
            self.harm.append(float(harm_value))

    @property
    def mean_J(self):
        return float(np.mean(self.jain))

    @property
    def std_J(self):
        return float(np.std(self.jain))

    @property
    def min_J(self):
        return float(np.min(self.jain))

    def flow_means(self):
        return [float(v) for v in np.mean(np.asarray(self.per_flow_mbps), axis=0)]

    def flow_mean(self, label):
        return self.flow_means()[self.flow_labels.index(label)]

    @property
    def aggregate_mbps(self):
        return float(sum(self.flow_means()))

    @property
    def mean_harm(self):
        return float(np.mean(self.harm)) if self.harm else None

    @property
    def std_harm(self):
        return float(np.std(self.harm)) if self.harm else None

    def summary(self):
        s = {"episodes": len(self.jain), "mean_J": self.mean_J, "std_J": self.std_J,
             "min_J": self.min_J, "aggregate_mbps": self.aggregate_mbps}
        for label, v in zip(self.flow_labels, self.flow_means()):
            s[f"{label}_mbps"] = v
        if self.harm:
            s["mean_harm"] = self.mean_harm
            s["std_harm"] = self.std_harm
        return s

    def to_dict(self):
        return {"summary": self.summary(), "flow_labels": self.flow_labels,
                "per_flow_mbps": self.per_flow_mbps, "jain": self.jain,
                "harm": self.harm, "meta": self.meta}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(per_flow_mbps=d["per_flow_mbps"], jain=d["jain"],
                   flow_labels=d["flow_labels"], harm=d.get("harm"), meta=d.get("meta", {}))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["episode", "J"] + [f"{lab}_mbps" for lab in self.flow_labels]
        if self.harm is not None:
            header.append("harm")
        w.writerow(header)
        for i, (j, rates) in enumerate(zip(self.jain, self.per_flow_mbps)):
            row = [i, repr(j)] + [repr(x) for x in rates]
            if self.harm is not None:
                row.append(repr(self.harm[i]))
            w.writerow(row)
        return buf.getvalue()
