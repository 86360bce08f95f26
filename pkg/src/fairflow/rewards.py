"""Aurora reward, the loss-coefficient variant and fair-share reward shaping."""
from __future__ import annotations

from dataclasses import asdict, dataclass

LOSS_COEF_CHOICES = (2000.0, 4000.0, 8000.0, 16000.0)


@dataclass
class RewardConfig:
    tput_coef: float = 10.0  # per unit of tput_unit
    lat_coef: float = 1000.0  # per second
    loss_coef: float = 2000.0  # per unit loss fraction
    lam: float = 0.0  # fair-share penalty weight, 0 disables shaping
    n_flows: int = 2
    tput_unit: str = "pps"  # "pps" or "mbps"

    def __post_init__(self):
        for name in ("tput_coef", "lat_coef", "loss_coef", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_flows < 1:
            raise ValueError("n_flows must be >= 1")
        if self.tput_unit not in ("pps", "mbps"):
            raise ValueError("tput_unit must be 'pps' or 'mbps'")

    def to_dict(self):
        return asdict(self)


def base_reward(tput, mean_latency_s, loss_fraction, cfg=None):
    """Linear throughput/latency/loss tradeoff; ``tput`` is in ``cfg.tput_unit``."""
    cfg = cfg or RewardConfig()
    return (cfg.tput_coef * tput
            - cfg.lat_coef * mean_latency_s
            - cfg.loss_coef * loss_fraction)


def shaped_reward_a(r, ego_tput, capacity_estimate, cfg):
    """Subtract ``lam`` times the ego's excess over its fair share ``capacity/N``."""
    if cfg.lam == 0:
        return r
    excess = ego_tput - capacity_estimate / cfg.n_flows
    return r - cfg.lam * max(0.0, excess)
