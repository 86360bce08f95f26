"""Fluid-model TCP CUBIC driven once per monitor interval."""
from __future__ import annotations

from dataclasses import dataclass, replace

CUBIC_C = 0.4
CUBIC_BETA = 0.7
MIN_WINDOW = 2.0


@dataclass
class CubicState:
    w: float
    w_max: float
    t_since_loss: float
    rtt: float
    C: float = CUBIC_C
    beta: float = CUBIC_BETA

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must be in (0, 1)")
        if not self.C > 0:
            raise ValueError("C must be > 0")
        self.w = max(MIN_WINDOW, self.w)

    @property
    def K(self):
        return (self.w_max * (1.0 - self.beta) / self.C) ** (1.0 / 3.0)


def cubic_window(state: CubicState, t: float) -> float:
    return max(MIN_WINDOW, state.C * (t - state.K) ** 3 + state.w_max)


def cubic_on_loss(state: CubicState) -> CubicState:
    return replace(state, w_max=state.w, w=max(MIN_WINDOW, state.beta * state.w), t_since_loss=0.0)


def cubic_rate(state: CubicState) -> float:
    if not state.rtt > 0:
        raise ValueError("rtt must be > 0")
    return state.w / state.rtt


def initial_state(w, rtt) -> CubicState:
    """Start at the inflection point so growth from ``w`` is convex."""
    s = CubicState(w=w, w_max=w, t_since_loss=0.0, rtt=rtt)
    s.t_since_loss = s.K
    return s


def cubic_step(state: CubicState, report, base_rtt) -> CubicState:
    """Advance one MI: react to at most one loss event, else grow along the cubic."""
    if report.delivered_pkts > 0:
        # propagation RTT plus the queueing wait seen this MI
        rtt = report.mean_latency_s + base_rtt / 2.0
    else:
        rtt = state.rtt
    if report.lost_pkts > 0:
        return replace(cubic_on_loss(state), rtt=rtt)
    t = state.t_since_loss + report.duration_s
    s = replace(state, t_since_loss=t, rtt=rtt)
    s.w = cubic_window(s, t)
    return s
