"""Command-line surface: generate, train, run, evaluate, bench.

Every subcommand is reproducible from its flags plus seed.  Exit codes:
0 success, 2 configuration/usage error, 3 data format error, 4 numerical
error.  MPIP_LOG_LEVEL in {error, warn, info, debug} controls verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from . import runner, synth
from .errors import DomainError, FormatError, MpipError, NumericalError
from .filtering import Observation
from .model import (TrainConfig, load_model, load_session, save_model, train)
from .mpc import MpcSession

log = logging.getLogger("mpip")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_NUMERICAL = 4

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("MPIP_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config_file(path):
    if path is None:
        return {}
    with Path(path).open() as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return doc


def _merged(args, file_config: dict, key: str, default):
    """Flag wins over config file wins over default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_config:
        return file_config[key]
    return default


def cmd_generate(args) -> int:
    config = _load_config_file(args.config)
    world = synth.load_world(config.get("world", args.world))
    strides = int(_merged(args, config, "strides", 10))
    seed = int(_merged(args, config, "seed", 0))
    out = _merged(args, config, "out", None)
    if out is None:
        raise DomainError("generate needs --out")
    synth.generate_session(world, strides, seed, out_dir=out)
    log.info("wrote %d strides to %s", strides, out)
    print(f"generated {strides} strides in {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config_file(args.config)
    demos, manifest = load_session(args.dataset)
    phase_mode = manifest.get("world", {}).get("phase_mode", "wrap")
    tc = TrainConfig(
        basis_count=int(_merged(args, config, "basis_count", 15)),
        ridge=float(_merged(args, config, "ridge", 1e-6)),
        ensemble_size=_merged(args, config, "ensemble_size", None),
        seed=int(_merged(args, config, "seed", 0)),
        phase_mode=_merged(args, config, "phase_mode", phase_mode),
    )
    if tc.ensemble_size is not None:
        tc.ensemble_size = int(tc.ensemble_size)
    model = train(demos, tc)
    out = _merged(args, config, "out", None)
    if out is None:
        raise DomainError("train needs --out")
    save_model(model, out)
    print(f"trained on {len(demos)} demonstrations "
          f"(E={model.ensemble_size}, B={model.weight_dim}) -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_config_file(args.config)
    model = load_model(args.model)
    demos, manifest = load_session(args.dataset)
    if "world" not in manifest:
        raise FormatError(f"{args.dataset}: manifest carries no world config; "
                          "cannot evaluate counterfactual loads")
    world = synth.WorldConfig.from_dict(manifest["world"])
    mode = _merged(args, config, "objective", "reactive")
    strides = _merged(args, config, "strides", None)
    seed = int(_merged(args, config, "seed", 1))
    out = _merged(args, config, "out", None)
    summary = runner.run_session(
        model, world, mode,
        n_strides=int(strides) if strides is not None else len(demos),
        seed=seed, out_dir=out,
        horizon_x=float(_merged(args, config, "horizon_x", 0.25)),
        horizon_u=float(_merged(args, config, "horizon_u", 0.10)),
        rho=float(_merged(args, config, "rho", 1.0)),
    )
    force = world.force_name
    agg = summary["aggregate"]
    print(f"mode={mode} strides={summary['n_strides']} "
          f"impulse[{force}]={agg['impulse'][force]['mean']:.4g}"
          f"±{agg['impulse'][force]['std']:.3g} "
          f"peak[{force}]={agg['peak'][force]['mean']:.4g} "
          f"plan_violations={summary['plan_violations']}")
    if out is None:
        print(json.dumps(summary["aggregate"], indent=2))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    summaries = []
    for path in args.metrics:
        path = Path(path)
        files = sorted(path.glob("*_metrics.json")) if path.is_dir() else [path]
        for f in files:
            with f.open() as fh:
                summaries.append(json.load(fh))
    if not summaries:
        raise FormatError("no metrics files found")
    table = {s["mode"]: {"aggregate": s["aggregate"],
                         "stability_exponent": s.get("stability_exponent"),
                         "plan_violations": s.get("plan_violations"),
                         "n_strides": s.get("n_strides")}
             for s in summaries}
    text = format_table(table)
    print(text)
    if args.out:
        out = Path(args.out)
        out.write_text(text + "\n")
        out.with_suffix(".json").write_text(json.dumps(table, indent=2) + "\n")
    return EXIT_OK


def format_table(table: dict) -> str:
    metric_keys = []
    for entry in table.values():
        for group, metrics in entry["aggregate"].items():
            if group == "stability_exponent":
                continue
            for name in metrics:
                key = (group, name)
                if key not in metric_keys:
                    metric_keys.append(key)
    header = ["mode"] + [f"{g}[{n}]" for g, n in metric_keys] + ["stability"]
    rows = [header]
    for mode in sorted(table):
        entry = table[mode]
        row = [mode]
        for g, n in metric_keys:
            cell = entry["aggregate"].get(g, {}).get(n)
            row.append("-" if cell is None
                       else f"{cell['mean']:.4g}±{cell['std']:.3g}")
        exp = entry.get("stability_exponent")
        row.append("-" if exp is None else f"{exp:.4g}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths))
             for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_bench(args) -> int:
    seed = args.seed if args.seed is not None else 0
    steps = args.steps
    if args.model:
        model = load_model(args.model)
        world = synth.bench_world()
    else:
        world = synth.bench_world()
        truths, _ = synth.generate_session(world, 20, seed)
        model = train([t.demo for t in truths],
                      TrainConfig(basis_count=15, ensemble_size=20, seed=seed))
    config = runner.cost_config_for_mode("reduce", model)
    dt = 1.0 / model.sample_rate
    observed = model.observed_channels

    stage_samples: dict[str, list[float]] = {
        "predict": [], "update": [], "plan": [], "total": []}
    done = 0
    stride = 0
    while done < steps:
        truth = synth.simulate_stride(world, synth.stride_seed(seed + 1, stride))
        session = MpcSession(model, config,
                             seed=np.random.SeedSequence((seed, stride, 2)))
        for t in range(truth.demo.length):
            obs = Observation(
                channels=tuple(observed),
                values=np.array([truth.demo.channels[c][t] for c in observed]))
            _, diag = session.mpc_step(obs, dt)
            for name in stage_samples:
                stage_samples[name].append(diag["timings_s"][name] * 1e3)
            done += 1
            if done >= steps:
                break
        stride += 1

    report = {"steps": done, "ensemble": model.ensemble_size,
              "basis_per_channel": model.basis.feature_count(
                  model.control_channel),
              "channels": len(model.channel_order), "stages_ms": {}}
    for name, samples in stage_samples.items():
        arr = np.array(samples)
        report["stages_ms"][name] = {
            "p50": float(np.percentile(arr, 50)),
            "p95": float(np.percentile(arr, 95)),
            "mean": float(arr.mean()),
        }
    report["steps_per_second"] = float(1e3 / np.mean(stage_samples["total"]))
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpip",
        description="Learn movement primitives from demonstrations, filter "
                    "live observations, and plan load-aware control.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--world", default="walk",
                   help="preset name (walk, jump, bench) or JSON file")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--strides", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--basis-count", dest="basis_count", type=int)
    p.add_argument("--ensemble-size", dest="ensemble_size", type=int)
    p.add_argument("--ridge", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run filtering and control over trials")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True,
                   help="dataset directory; its manifest provides the world")
    p.add_argument("--objective", choices=runner.MODES)
    p.add_argument("--config")
    p.add_argument("--strides", type=int,
                   help="generate this many fresh trials (default: one per "
                        "dataset demonstration)")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon-x", dest="horizon_x", type=float)
    p.add_argument("--horizon-u", dest="horizon_u", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="aggregate run metrics into a table")
    p.add_argument("metrics", nargs="+",
                   help="metrics JSON files or run output directories")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="measure per-stage control-loop latency")
    p.add_argument("--model")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        log.error("format error: %s", exc)
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericalError as exc:
        log.error("numerical error: %s", exc)
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DomainError, MpipError, FileNotFoundError) as exc:
        log.error("configuration error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
