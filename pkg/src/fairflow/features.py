"""Per-MI features and the k-step observation history.

Each MI is summarised as ``(lat_grad, lat_ratio, send_ratio)``; the policy sees
the last ``k`` triples, oldest first.  The augmented observation appends an
estimate of the number of competing flows and the ego's share of capacity.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

HISTORY_LEN = 10
FEATURES_PER_MI = 3
BASE_OBS_DIM = HISTORY_LEN * FEATURES_PER_MI
AUGMENTED_OBS_DIM = BASE_OBS_DIM + 2
OBS_CLIP = 10.0

COMPETITOR_CV_COEF = 4.0
COMPETITOR_LOSS_COEF = 20.0
MAX_COMPETITORS = 8.0
CAPACITY_FLOOR_PPS = 1.0


@dataclass(frozen=True)
class MiFeatures:
    lat_grad: float = 0.0
    lat_ratio: float = 1.0
    send_ratio: float = 1.0

    def as_tuple(self):
        return (self.lat_grad, self.lat_ratio, self.send_ratio)


NEUTRAL = MiFeatures()


def compute_mi_features(report, prev_report, min_latency) -> MiFeatures:
    """Summarise one MonitorReport; MIs without deliveries get neutral values."""
    if report.sent_pkts == 0:
        return NEUTRAL
    send_ratio = report.delivered_pkts / report.sent_pkts
    if report.delivered_pkts == 0:
        return MiFeatures(0.0, 1.0, send_ratio)
    lat = report.mean_latency_s
    lat_ratio = lat / min_latency if min_latency > 0 else 1.0
    if prev_report is not None and prev_report.delivered_pkts > 0:
        lat_grad = (lat - prev_report.mean_latency_s) / report.duration_s
    else:
        lat_grad = 0.0
    return MiFeatures(lat_grad, lat_ratio, send_ratio)


def estimate_capacity(send_rate, send_ratio):
    return send_rate * send_ratio


def estimate_competitors(window, window_loss,
                         c1=COMPETITOR_CV_COEF, c2=COMPETITOR_LOSS_COEF):
    """Heuristic flow count from throughput variability and loss, clamped to [1, 8]."""
    tput = np.asarray(window, dtype=float)
    if tput.size == 0:
        raise ValueError("throughput window must be nonempty")
    mean = tput.mean()
    cv = tput.std() / mean if mean > 0 else 0.0
    loss = float(np.mean(window_loss)) if len(window_loss) else 0.0
    return float(np.clip(1.0 + c1 * cv + c2 * loss, 1.0, MAX_COMPETITORS))


def tput_fraction(ego_tput, capacity_estimate, eps=CAPACITY_FLOOR_PPS):
    return float(np.clip(ego_tput / max(capacity_estimate, eps), 0.0, 1.0))


class FeatureHistory:
    """Per-flow ring buffer of MiFeatures plus the state the estimators need.

    ``capacity_window`` MIs of goodput are kept; their maximum is the flow's own
    reference for total capacity (what it could get while alone).
    """

    def __init__(self, k=HISTORY_LEN, estimator_window=HISTORY_LEN, capacity_window=50):
        self.k = k
        self.estimator_window = estimator_window
        self.features = deque(maxlen=k)
        self.tputs = deque(maxlen=capacity_window)
        self.losses = deque(maxlen=estimator_window)
        self.min_latency = float("inf")
        self.prev_report = None

    def reset(self):
        self.features.clear()
        self.tputs.clear()
        self.losses.clear()
        self.min_latency = float("inf")
        self.prev_report = None

    def push(self, report) -> MiFeatures:
        if report.delivered_pkts > 0:
            self.min_latency = min(self.min_latency, report.min_latency_s or report.mean_latency_s)
        feats = compute_mi_features(report, self.prev_report, self.min_latency)
        self.features.append(feats)
        if report.sent_pkts > 0:
            self.tputs.append(report.throughput_pps)
            self.losses.append(report.loss_fraction)
            self.prev_report = report
        return feats

    def competitor_estimate(self):
        if not self.tputs:
            return 1.0
        recent = list(self.tputs)[-self.estimator_window:]
        return estimate_competitors(recent, list(self.losses))

    def capacity_share(self):
        if not self.tputs:
            return 1.0
        return tput_fraction(self.tputs[-1], max(self.tputs))


def build_observation(hist: FeatureHistory, augmented=False) -> np.ndarray:
    """Flatten the history oldest to newest, neutral-padding the front."""
    pad = hist.k - len(hist.features)
    rows = [NEUTRAL.as_tuple()] * pad + [f.as_tuple() for f in hist.features]
    obs = np.asarray(rows, dtype=float).reshape(-1)
    if augmented:
        obs = np.concatenate([obs, [hist.competitor_estimate(), hist.capacity_share()]])
    return np.clip(obs, -OBS_CLIP, OBS_CLIP)


def obs_dim(augmented: bool) -> int:
    return AUGMENTED_OBS_DIM if augmented else BASE_OBS_DIM
