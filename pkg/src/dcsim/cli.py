"""Command-line entry point: run one simulation, sweep a parameter, or
re-summarize existing run directories.

Exit codes: 0 success, 2 configuration error, 3 runtime assertion failure.
"""

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import (ConfigFileError, RunConfig, apply_overrides,
                     load_config_file)
from .experiment import run_config
from .fabric import ConfigError
from .metrics import read_flow_csv
from .runio import (FLOWS_CSV, OutputCollision, format_summary, read_meta,
                    summarize, write_outputs)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_SHORTHAND = ("scenario", "flows", "aqm", "tcp", "seed", "alpha", "gamma",
              "load", "workload", "pattern", "duration_s")


def _add_config_args(p):
    p.add_argument("--config", metavar="FILE", help="key=value config file")
    p.add_argument("--set", dest="sets", action="append", default=[],
                   metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--scenario", choices=["case1", "case2", "poisson"])
    p.add_argument("--flows", type=int)
    p.add_argument("--aqm", choices=["droptail", "droprand", "red-ecn", "dctcp"])
    p.add_argument("--tcp", choices=["newreno", "newreno-ecn", "dctcp"])
    p.add_argument("--shim", choices=["on", "off"])
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=int)
    p.add_argument("--gamma", help="bytes, or 'inf'")
    p.add_argument("--load", type=float)
    p.add_argument("--workload")
    p.add_argument("--pattern", choices=["all_to_all", "one_to_all"])
    p.add_argument("--duration", dest="duration_s", type=float,
                   help="simulated seconds")


def _build_config(args) -> RunConfig:
    cfg = load_config_file(args.config) if args.config else RunConfig()
    overrides = list(args.sets)
    for name in _SHORTHAND:
        val = getattr(args, name, None)
        if val is not None:
            overrides.append(f"{name}={val}")
    if getattr(args, "shim", None) is not None:
        overrides.append(f"shim={args.shim}")
    cfg = apply_overrides(cfg, overrides)
    return cfg.resolve().validate()


def _out_root():
    return Path(os.environ.get("DCSIM_OUT_ROOT", "runs"))


def _default_out(cfg):
    shim = "on" if cfg.shim else "off"
    return _out_root() / f"{cfg.scenario}-{cfg.aqm}-{cfg.tcp}-shim{shim}-s{cfg.seed}-{cfg.digest()}"


def cmd_run(args):
    cfg = _build_config(args)
    out_dir = Path(args.out) if args.out else _default_out(cfg)
    result = run_config(cfg)
    write_outputs(result, out_dir, overwrite=args.overwrite)
    if not args.quiet:
        print(format_summary(result.records, title=f"run -> {out_dir}"))
    return EXIT_OK


SWEEP_HEADER = ["point", "class", "n", "completed", "mean_fct_us",
                "p95_fct_us", "rto_events", "deadline_misses", "status"]


def _sweep_point(payload):
    cfg_dict, param, value, out_dir, overwrite = payload
    try:
        cfg = apply_overrides(RunConfig(**cfg_dict), [f"{param}={value}"])
        cfg.resolve().validate()
        result = run_config(cfg)
        write_outputs(result, out_dir, overwrite=overwrite)
        rows = [[f"{param}={value}", r["class"], r["n"], r["completed"],
                 r["mean_fct_us"], r["p95_fct_us"], r["rto_events"],
                 r["deadline_misses"], "ok"]
                for r in summarize(result.records)]
        return rows
    except Exception as exc:  # a failed point must not kill the sweep
        return [[f"{param}={value}", "", "", "", "", "", "", "", f"error: {exc}"]]


def cmd_sweep(args):
    cfg = _build_config(args)
    values = [v for v in args.values.split(",") if v]
    if not values:
        print("sweep: empty axis, nothing to do", file=sys.stderr)
        return EXIT_OK
    out_root = Path(args.out) if args.out else _default_out(cfg).with_name(
        f"sweep-{args.param}-{cfg.digest()}")
    payloads = [(cfg.as_dict(), args.param, v,
                 out_root / f"{args.param}={v}", args.overwrite)
                for v in values]
    all_rows = []
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            for rows in pool.map(_sweep_point, payloads):
                all_rows.extend(rows)
    else:
        for payload in payloads:
            all_rows.extend(_sweep_point(payload))
    out_root.mkdir(parents=True, exist_ok=True)
    summary = out_root / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(all_rows)
    failed = [r for r in all_rows if r[-1] != "ok"]
    if not args.quiet:
        print(f"sweep wrote {summary} ({len(values)} points, "
              f"{len(failed)} failed)")
    return EXIT_OK


def cmd_analyze(args):
    status = EXIT_OK
    for d in args.dirs:
        flows_path = Path(d) / FLOWS_CSV
        try:
            records = read_flow_csv(flows_path)
        except (OSError, ValueError) as exc:
            print(f"{d}: cannot analyze: {exc}", file=sys.stderr)
            status = EXIT_RUNTIME
            continue
        try:
            meta = read_meta(d)
            title = (f"{d} seed={meta.get('seed', '?')} "
                     f"config={meta.get('config_hash', '?')}")
        except OSError:
            title = str(d)
        print(format_summary(records, title=title))
    return status


def make_parser():
    parser = argparse.ArgumentParser(
        prog="dcsim",
        description="Packet-level data-center TCP simulator with a host-side "
                    "dupACK-injection recovery shim.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configuration")
    _add_config_args(p_run)
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--overwrite", action="store_true")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="one run per axis value")
    _add_config_args(p_sweep)
    p_sweep.add_argument("--param", required=True, help="config key to vary")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated axis values")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--out", help="sweep output root")
    p_sweep.add_argument("--overwrite", action="store_true")
    p_sweep.add_argument("--quiet", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)

    p_an = sub.add_parser("analyze", help="re-derive summaries from CSVs")
    p_an.add_argument("dirs", nargs="+", help="run directories")
    p_an.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigFileError, ConfigError, OutputCollision) as exc:
        print(f"dcsim: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionError as exc:
        print(f"dcsim: runtime assertion failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
