"""Command-line entry point: ``fairflow {train,eval,sweep,report}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import atomic_write_text, cache_dir, load_config_file
from .policy import CheckpointError, load_checkpoint, save_checkpoint
from .ppo import STRATEGIES, TrainConfig, train, write_curve_csv
from .scenarios import (DEFAULT_EPISODES, DEFAULT_STAGGER, DynamicTrace, ScenarioConfig,
                        SwitchingTrace, phases_to_dict, run_dynamic, run_mixed_cubic, run_single_flow_trace,
                        run_staggered_duel, throughput_ratio)
from .sim import DUEL_LINK, LinkConfig, pps_to_mbps
from .sweep import LAMBDA_GRID, LOSS_COEF_GRID, run_sweep, write_sweep

log = logging.getLogger("fairflow")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _floats(value):
    """Comma-separated string (flag) or list (config file) of numbers."""
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).split(",") if v.strip()]


def _common(p):
    p.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
    p.add_argument("--config", help="JSON or TOML file whose keys mirror the flags")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser():
    parser = argparse.ArgumentParser(prog="fairflow", description=__doc__)
    parser.add_argument("--version", action="version", version=f"fairflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy checkpoint")
    _common(p)
    p.add_argument("--strategy", choices=STRATEGIES, type=str.lower, default="base")
    p.add_argument("--lambda", dest="lam", type=float, help="fair-share penalty weight (strategy a)")
    p.add_argument("--loss-coef", type=float, help="loss coefficient (strategy c)")
    p.add_argument("--steps", type=int, default=1_600_000, help="environment steps")
    p.add_argument("--background", help="frozen base checkpoint (strategies a and b)")

    p = sub.add_parser("eval", help="evaluate controllers on a scenario")
    _common(p)
    _scenario_args(p)
    p.add_argument("--episodes", type=int, default=DEFAULT_EPISODES)

    p = sub.add_parser("sweep", help="train and duel-evaluate the strategy grid")
    _common(p)
    p.add_argument("--strategies", default="a,b,c", help="comma list from a,b,c")
    p.add_argument("--lambdas", default=",".join(f"{v:g}" for v in LAMBDA_GRID))
    p.add_argument("--loss-coefs", default=",".join(f"{v:g}" for v in LOSS_COEF_GRID))
    p.add_argument("--steps", type=int, default=1_600_000)
    p.add_argument("--base", help="base checkpoint; trained into the cache when omitted")
    p.add_argument("--episodes", type=int, default=DEFAULT_EPISODES)
    p.add_argument("--stagger", type=int, default=DEFAULT_STAGGER)
    p.add_argument("--cache", help="checkpoint cache dir (default $FAIRFLOW_CACHE or ~/.cache/fairflow)")

    p = sub.add_parser("report", help="write plot-ready per-MI throughput series")
    _common(p)
    _scenario_args(p)
    p.add_argument("--episode", type=int, default=0, help="episode index for duel/cubic")
    return parser


def _scenario_args(p):
    p.add_argument("--scenario", choices=("single", "duel", "cubic", "dynamic"), required=True)
    p.add_argument("--ego", required=True, help="checkpoint path, 'cubic', or 'oracle' (single only)")
    p.add_argument("--bg", help="background checkpoint or 'cubic' (duel)")
    p.add_argument("--stagger", type=int, help="newcomer delay in MIs (duel default 50, cubic default 0)")
    p.add_argument("--link", help="JSON/TOML link config for duel, cubic and dynamic")


def parse_args(argv=None):
    """Parse flags; a ``--config`` file supplies defaults that explicit flags override."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            conf = load_config_file(args.config)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        values = {}
        for key, val in conf.items():
            dest = key.replace("-", "_")
            dest = "lam" if dest == "lambda" else dest
            if dest not in known or dest in ("config", "help"):
                parser.error(f"unknown key {key!r} in config {args.config}")
            values[dest] = val
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
        args.config_values = values
    _validate(parser, args)
    return args


def _validate(parser, args):
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    if args.command == "train":
        s = args.strategy
        if args.lam is not None and s != "a":
            parser.error(f"--lambda applies only to strategy a, not {s}")
        if args.loss_coef is not None and s != "c":
            parser.error(f"--loss-coef applies only to strategy c, not {s}")
        if s == "a" and args.lam is None:
            parser.error("strategy a needs --lambda")
        if s == "c" and args.loss_coef is None:
            parser.error("strategy c needs --loss-coef")
        if s in ("a", "b") and not args.background:
            parser.error(f"strategy {s} needs --background (a frozen base checkpoint)")
        if args.background and s not in ("a", "b"):
            parser.error(f"--background applies only to strategies a and b, not {s}")
        if args.steps <= 0:
            parser.error("--steps must be > 0")
    if args.command in ("eval", "report"):
        if args.scenario == "duel" and not args.bg:
            parser.error("duel scenario needs --bg")
        if args.bg and args.scenario != "duel":
            parser.error(f"--bg applies only to the duel scenario, not {args.scenario}")
        if args.ego == "oracle" and args.scenario != "single":
            parser.error("the oracle controller exists only for the single scenario")
        if args.stagger is not None and args.scenario not in ("duel", "cubic"):
            parser.error(f"--stagger does not apply to the {args.scenario} scenario")
        if args.link and args.scenario == "single":
            parser.error("the single scenario uses the fixed switching trace; --link is not accepted")
    if getattr(args, "episodes", 1) < 1:
        parser.error("--episodes must be >= 1")
    if args.command == "sweep":
        try:
            args.lambdas = _floats(args.lambdas)
            args.loss_coefs = _floats(args.loss_coefs)
        except ValueError as exc:
            parser.error(f"bad numeric list: {exc}")
        strategies = args.strategies
        if isinstance(strategies, str):
            strategies = strategies.split(",")
        args.strategies = [str(s).strip().lower() for s in strategies if str(s).strip()]
        bad = [s for s in args.strategies if s not in ("a", "b", "c")]
        if bad:
            parser.error(f"unknown sweep strategies {bad}; choose from a,b,c")


def _resolved(args):
    return {k: v for k, v in vars(args).items() if k not in ("config_values", "verbose", "argv")}


def write_manifest(args, out, checkpoints, extra=None):
    doc = {"command": ["fairflow", *(args.argv or [])], "subcommand": args.command,
           "resolved_config": _resolved(args), "seed": args.seed,
           "checkpoints": checkpoints, "out_dir": str(out), "version": __version__}
    if extra:
        doc.update(extra)
    atomic_write_text(out / "manifest.json", json.dumps(doc, indent=2, default=str) + "\n")


def _check_ckpt(spec):
    """Validate a checkpoint argument early so errors name the file."""
    if spec in ("cubic", "oracle"):
        return None
    if not Path(spec).exists():
        raise FileNotFoundError(f"checkpoint not found: {spec}")
    load_checkpoint(spec)
    return str(spec)


def cmd_train(args, out):
    cfg = TrainConfig(strategy=args.strategy, seed=args.seed, total_steps=args.steps,
                      lam=args.lam if args.lam is not None else 0.0,
                      loss_coef=args.loss_coef if args.loss_coef is not None else 2000.0,
                      background=args.background)
    if cfg.needs_background:
        load_checkpoint(cfg.background, expected_obs_dim=30)

    def progress(step, diag):
        log.info("step %d  policy_loss %.4f  value_loss %.4f", step, diag["policy_loss"], diag["value_loss"])

    ckpt, curve = train(cfg, progress=progress if args.verbose else None)
    save_checkpoint(ckpt, out / "checkpoint.json")
    write_curve_csv(curve, out / "training_curve.csv")
    write_manifest(args, out, {"checkpoint": str(out / "checkpoint.json"), "background": args.background},
                   {"train_config": cfg.to_dict()})
    return {"checkpoint": str(out / "checkpoint.json"), "steps_trained": ckpt.steps_trained}


def _link(args):
    return LinkConfig.from_dict(load_config_file(args.link)) if args.link else DUEL_LINK


def _scenario_cfg(args, episodes):
    kind = args.scenario
    stagger = args.stagger if args.stagger is not None else (DEFAULT_STAGGER if kind == "duel" else 0)
    return ScenarioConfig(kind=kind, link=_link(args), episodes=episodes, stagger_mis=stagger,
                          seed=args.seed, ego=args.ego, background=args.bg)


def _series_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def cmd_eval(args, out):
    ckpts = {"ego": _check_ckpt(args.ego), "bg": _check_ckpt(args.bg) if args.bg else None}
    kind = args.scenario
    if kind == "single":
        result, _ = run_single_flow_trace(args.ego, SwitchingTrace(), seed=args.seed)
        summary = result.summary()
        doc = {"scenario": kind, "summary": summary, "throughput_mbps": result.throughput_mbps,
               "capacity_mbps": result.capacity_mbps}
        rows = [(i, t, c) for i, (t, c) in enumerate(zip(result.throughput_mbps, result.capacity_mbps))]
        text = _series_csv(["mi", "throughput_mbps", "capacity_mbps"], rows)
    elif kind == "dynamic":
        phases = run_dynamic(args.ego, DynamicTrace(), _link(args), seed=args.seed)
        table = phases_to_dict(phases)
        summary = {p["phase"]: p["J"] for p in table}
        doc = {"scenario": kind, "summary": summary, "phases": table}
        text = _series_csv(["phase", "start_mi", "end_mi", "n_active", "J", "short_window"],
                           [list(p.values()) for p in table])
    else:
        cfg = _scenario_cfg(args, args.episodes)
        if kind == "duel":
            rep = run_staggered_duel(args.ego, args.bg, cfg)
        else:
            rep = run_mixed_cubic(args.ego, cfg)
        summary = rep.summary()
        if kind == "cubic":
            summary["ego_cubic_ratio"] = throughput_ratio(rep)
        doc = {"scenario": kind, **rep.to_dict(), "summary": summary}
        text = rep.to_csv()
    atomic_write_text(out / f"{kind}.json", json.dumps(doc, indent=2, default=str) + "\n")
    atomic_write_text(out / f"{kind}.csv", text)
    write_manifest(args, out, ckpts)
    return summary


def cmd_sweep(args, out):
    scenario = ScenarioConfig(kind="duel", episodes=args.episodes, stagger_mis=args.stagger, seed=0)
    cache = Path(args.cache) if args.cache else cache_dir()
    rows = run_sweep(args.strategies, args.lambdas, args.loss_coefs, steps=args.steps, seed=args.seed,
                     base_checkpoint=args.base, scenario=scenario, cache=cache, jobs=args.jobs)
    flags = write_sweep(rows, out)
    for f in flags:
        if f["status"] != "ok":
            log.warning("ordering check %s: %s", f["check"], f["status"])
    write_manifest(args, out, {r.config: r.checkpoint for r in rows}, {"cache": str(cache), "flags": flags})
    failed = [r.config for r in rows if r.status != "ok"]
    if failed:
        raise RuntimeError(f"sweep rows failed: {failed} (see sweep.csv status column)")
    return {"rows": len(rows), "flags": flags}


def cmd_report(args, out):
    ckpts = {"ego": _check_ckpt(args.ego), "bg": _check_ckpt(args.bg) if args.bg else None}
    kind = args.scenario
    if kind == "single":
        _, ep = run_single_flow_trace(args.ego, SwitchingTrace(), seed=args.seed)
        labels = ["ego"]
    elif kind == "dynamic":
        _, ep = run_dynamic(args.ego, DynamicTrace(), _link(args), seed=args.seed, keep_episode=True)
        labels = [f"flow{i}" for i in ep.flow_ids]
    else:
        cfg = _scenario_cfg(args, args.episode + 1)
        if kind == "duel":
            _, eps = run_staggered_duel(args.ego, args.bg, cfg, keep_episodes=True)
            labels = ["background", "ego"]
        else:
            _, eps = run_mixed_cubic(args.ego, cfg, keep_episodes=True)
            labels = ["ego", "cubic"]
        ep = eps[args.episode]
    tput = ep.throughput_mbps
    cap = pps_to_mbps(ep.capacity_pps)
    rows = []
    for i, t in enumerate(ep.time_s()):
        rows.append([i, float(t), float(cap[i])] + [float(v) if on else "" for v, on in zip(tput[i], ep.active[i])])
    header = ["mi", "time_s", "capacity_mbps"] + [f"{lab}_mbps" for lab in labels]
    atomic_write_text(out / f"{kind}_series.csv", _series_csv(header, rows))
    write_manifest(args, out, ckpts)
    return {"series": str(out / f"{kind}_series.csv"), "mis": len(rows)}


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](args, out)
    except (CheckpointError, FileNotFoundError, ValueError, RuntimeError, FloatingPointError, OSError) as exc:
        err = {"status": "error", "command": args.command, "error": type(exc).__name__, "message": str(exc)}
        text = json.dumps(err)
        try:
            atomic_write_text(out / "error.json", text + "\n")
        except OSError:
            pass
        print(text, file=sys.stderr)
        return EXIT_FAILED
    print(json.dumps({"status": "ok", "command": args.command, "result": result}, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
