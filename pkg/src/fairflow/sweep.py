"""Checkpoint cache and the strategy hyperparameter sweep."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import atomic_write_text, cache_dir
from .policy import load_checkpoint, save_checkpoint
from .ppo import TrainConfig, train, write_curve_csv
from .scenarios import ScenarioConfig, run_staggered_duel

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.5, 1.0, 2.0, 5.0)
LOSS_COEF_GRID = (4000.0, 8000.0, 16000.0)
SWEEP_COLUMNS = ["strategy", "config", "mean_J", "std_J", "min_J", "ego_mbps", "bg_mbps",
                 "aggregate_mbps", "status"]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def cache_key(cfg: TrainConfig, background_key=None) -> str:
    """Key over every training setting; the background enters by content hash."""
    ident = cfg.to_dict()
    ident["lam"] = cfg.reward_config().lam
    ident["background"] = background_key
    blob = json.dumps(ident, sort_keys=True).encode()
    return f"{cfg.strategy}-{hashlib.sha256(blob).hexdigest()[:16]}"


def train_cached(cfg: TrainConfig, cache=None) -> Path:
    """Return the cached checkpoint for ``cfg``, training it first if absent."""
    cache = Path(cache) if cache is not None else cache_dir()
    cache.mkdir(parents=True, exist_ok=True)
    bg_key = None
    if cfg.needs_background:
        if not cfg.background:
            raise ValueError(f"strategy {cfg.strategy!r} needs a frozen baseline checkpoint")
        bg_key = file_digest(cfg.background)
    key = cache_key(cfg, bg_key)
    path = cache / f"{key}.json"
    if path.exists():
        return path
    log.info("training %s -> %s", cfg.strategy, path)
    t0 = time.time()
    ckpt, curve = train(cfg)
    meta = {"train_seconds": time.time() - t0, "train_config": cfg.to_dict(), "background_digest": bg_key}
    write_curve_csv(curve, cache / f"{key}.curve.csv")
    atomic_write_text(cache / f"{key}.meta.json", json.dumps(meta, indent=2) + "\n")
    save_checkpoint(ckpt, path)
    return path


def base_config(steps, seed):
    return TrainConfig(strategy="base", total_steps=steps, seed=seed)


def sweep_configs(strategies=("a", "b", "c"), lambdas=LAMBDA_GRID, loss_coefs=LOSS_COEF_GRID):
    out = []
    for s in strategies:
        s = s.lower()
        if s == "a":
            out += [("a", {"lam": float(v)}) for v in sorted(lambdas)]
        elif s == "b":
            out.append(("b", {}))
        elif s == "c":
            out += [("c", {"loss_coef": float(v)}) for v in sorted(loss_coefs)]
        else:
            raise ValueError(f"unknown sweep strategy {s!r}")
    return out


def config_label(strategy, params):
    if strategy == "base":
        return "2xAurora"
    if strategy == "a":
        return f"lambda={params['lam']:g}"
    if strategy == "c":
        return f"loss={params['loss_coef']:g}"
    return "state_aug"


@dataclass
class SweepRow:
    strategy: str
    config: str
    mean_J: float | None = None
    std_J: float | None = None
    min_J: float | None = None
    ego_mbps: float | None = None
    bg_mbps: float | None = None
    aggregate_mbps: float | None = None
    status: str = "ok"
    checkpoint: str | None = None

    def csv_row(self):
        def fmt(v):
            return "" if v is None else f"{v:.6f}"
        return [self.strategy, self.config, fmt(self.mean_J), fmt(self.std_J), fmt(self.min_J),
                fmt(self.ego_mbps), fmt(self.bg_mbps), fmt(self.aggregate_mbps), self.status]


def _evaluate(strategy, params, steps, seed, base_path, scenario: ScenarioConfig, cache):
    label = config_label(strategy, params)
    try:
        if strategy == "base":
            path = base_path
        else:
            cfg = TrainConfig(strategy=strategy, total_steps=steps, seed=seed,
                              background=str(base_path) if strategy in ("a", "b") else None, **params)
            path = train_cached(cfg, cache)
        rep = run_staggered_duel(str(path), str(base_path), scenario)
        return SweepRow(strategy, label, rep.mean_J, rep.std_J, rep.min_J, rep.flow_mean("ego"),
                        rep.flow_mean("background"), rep.aggregate_mbps, checkpoint=str(path))
    except Exception as exc:  # a failed row must not stop the sweep
        log.exception("sweep row %s %s failed", strategy, label)
        return SweepRow(strategy, label, status=f"error: {type(exc).__name__}: {exc}")


def run_sweep(strategies=("a", "b", "c"), lambdas=LAMBDA_GRID, loss_coefs=LOSS_COEF_GRID,
              steps=1_600_000, seed=42, base_checkpoint=None, scenario=None, cache=None, jobs=1):
    """Train (or reuse) and evaluate every config; the base-vs-base row comes first."""
    scenario = scenario or ScenarioConfig()
    base_path = Path(base_checkpoint) if base_checkpoint else train_cached(base_config(steps, seed), cache)
    load_checkpoint(base_path, expected_obs_dim=30)
    todo = [("base", {})] + sweep_configs(strategies, lambdas, loss_coefs)
    args = [(s, p, steps, seed, base_path, scenario, cache) for s, p in todo]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_evaluate, *zip(*args)))
    else:
        rows = [_evaluate(*a) for a in args]
    return rows


def ordering_flags(rows):
    """Check the interior-improvement / over-penalization ordering of the A sweep."""
    a = {r.config: r.mean_J for r in rows if r.strategy == "a" and r.status == "ok"}
    flags = []
    need = ("lambda=0.5", "lambda=2", "lambda=5")
    if not all(k in a for k in need):
        flags.append({"check": "a_sweep_ordering", "status": "incomplete"})
        return flags
    checks = [("J(lambda=2) > J(lambda=0.5)", a["lambda=2"] > a["lambda=0.5"]),
              ("J(lambda=5) < J(lambda=2)", a["lambda=5"] < a["lambda=2"])]
    for name, ok in checks:
        flags.append({"check": name, "status": "ok" if ok else "VIOLATED"})
    return flags


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue()


def write_sweep(rows, out_dir):
    out_dir = Path(out_dir)
    atomic_write_text(out_dir / "sweep.csv", sweep_csv(rows))
    flags = ordering_flags(rows)
    doc = {"rows": [r.__dict__ for r in rows], "flags": flags}
    atomic_write_text(out_dir / "sweep.json", json.dumps(doc, indent=2) + "\n")
    return flags
