"""Rate controllers that plug into the bottleneck one MI at a time.

A controller owns one flow's decision state.  ``reset`` is called when the
flow (re)enters, ``update`` after every MI in which it was active; both return
the send rate for the next MI.
"""
from __future__ import annotations

from . import cubic
from .features import FeatureHistory, build_observation
from .policy import PolicyCheckpoint, load_checkpoint
from .sim import RateActionConfig, apply_rate_action

INITIAL_RATE_RANGE = (0.3, 1.5)  # multiples of the link bandwidth


def sample_initial_rate(rng, bandwidth_pps):
    lo, hi = INITIAL_RATE_RANGE
    return float(rng.uniform(lo, hi) * bandwidth_pps)


class Controller:
    name = "controller"

    def reset(self, link, rate, rng=None):
        raise NotImplementedError

    def update(self, report):
        raise NotImplementedError


class PolicyController(Controller):
    """Runs a checkpoint deterministically (action = policy mean)."""

    def __init__(self, ckpt: PolicyCheckpoint, action_cfg=None, name=None):
        self.ckpt = ckpt
        self.model = ckpt.model
        self.augmented = ckpt.augmented
        self.action_cfg = action_cfg or RateActionConfig()
        self.hist = FeatureHistory()
        self.rate = 0.0
        self.name = name or ckpt.strategy

    @classmethod
    def from_path(cls, path, **kw):
        return cls(load_checkpoint(path), **kw)

    def reset(self, link, rate, rng=None):
        self.hist.reset()
        self.rate = rate
        return rate

    def observation(self):
        return build_observation(self.hist, self.augmented)

    def update(self, report):
        self.hist.push(report)
        mean, _ = self.model.forward(self.observation())
        self.rate = apply_rate_action(self.rate, mean, self.action_cfg)
        return self.rate


class CubicController(Controller):
    name = "cubic"

    def __init__(self, initial_window=None):
        self.initial_window = initial_window
        self.state = None
        self.base_rtt = None

    def reset(self, link, rate, rng=None):
        self.base_rtt = link.rtt_s
        w = self.initial_window if self.initial_window is not None else rate * link.rtt_s
        self.state = cubic.initial_state(w, link.rtt_s)
        return cubic.cubic_rate(self.state)

    def update(self, report):
        self.state = cubic.cubic_step(self.state, report, self.base_rtt)
        return cubic.cubic_rate(self.state)


class PinnedController(Controller):
    """Fixed rate, or a callable of the MI index (e.g. an oracle tracking capacity)."""

    name = "pinned"

    def __init__(self, rate):
        self.rate_fn = rate if callable(rate) else (lambda mi: rate)
        self.mi = 0

    def reset(self, link, rate, rng=None):
        self.mi = 0
        return float(self.rate_fn(0))

    def update(self, report):
        self.mi = report.mi_index + 1
        return float(self.rate_fn(self.mi))


def make_controller(spec, **kw) -> Controller:
    """``"cubic"`` or a checkpoint path / PolicyCheckpoint."""
    if isinstance(spec, Controller):
        return spec
    if isinstance(spec, PolicyCheckpoint):
        return PolicyController(spec, **kw)
    if str(spec).lower() == "cubic":
        return CubicController()
    return PolicyController.from_path(spec, **kw)
