"""Command-line interface: ``entroflow run | validate | plot``.

Exit codes: 0 success, 1 configuration error, 2 runtime or solver
error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, EntroflowError
from .scenario_runner import (
    build_grid, build_initial, build_model, initial_condition, load_config, parse_overrides, read_csv,
    run_scenario, step_policy,
)
from .svgplot import write_line_plot

log = logging.getLogger("entroflow")


def _cmd_run(args) -> int:
    cfg = load_config(args.config, parse_overrides(args.override))
    outcome = run_scenario(cfg, args.out)
    derived = outcome.summary.get("derived", {})
    print(f"{cfg.kind}: OK -> {outcome.out_dir}")
    for k in ("steps", "t_final", "mass_rel_drift", "runtime_s"):
        if k in derived:
            print(f"  {k} = {derived[k]}")
    for row in outcome.summary.get("mean_flow", []):
        label = row["model"] if row["v_star"] == "" else f"{row['model']} v*={row['v_star']:g} km/h"
        print(f"  {label}: mean flow {row['mean_flow_veh_h']:.1f} veh/h")
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config, parse_overrides(args.override))
    if cfg.kind in ("academic", "compare-implicit"):
        mf = build_model(cfg)
        field = build_initial(initial_condition(cfg), build_grid(cfg), upper=mf.R)
        pol = step_policy(cfg, field, mf)
        if pol["positivity_margin"] < 0 and not cfg["time.allow_cfl_violation"]:
            raise ConfigError(f"time.dt = {pol['dt']:g} violates the positivity bound {pol['cfl_dt']:g}")
        for k, v in pol.items():
            print(f"# {k} = {v!r}")
    for line in cfg.manifest_lines():
        print(line)
    return 0


def _cmd_plot(args) -> int:
    cols = read_csv(args.csv)
    ys = [y for item in args.y for y in item.split(",")]
    for c in [args.x] + ys:
        if c not in cols:
            raise ConfigError(f"column {c!r} not in {args.csv} (have {', '.join(cols)})")
    x = [float(v) for v in cols[args.x]]
    series = [(y, x, [float(v) for v in cols[y]]) for y in ys]
    write_line_plot(args.output, series, title=args.title or str(args.csv), xlabel=args.x)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="entroflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: output.dir)")
    run.add_argument("--override", action="append", metavar="KEY=VALUE", help="override a config key")
    run.set_defaults(func=_cmd_run)

    val = sub.add_parser("validate", help="parse and check a config without running it")
    val.add_argument("config")
    val.add_argument("--override", action="append", metavar="KEY=VALUE")
    val.set_defaults(func=_cmd_validate)

    plot = sub.add_parser("plot", help="line plot of CSV columns as SVG")
    plot.add_argument("csv")
    plot.add_argument("--x", required=True)
    plot.add_argument("--y", required=True, action="append", help="column(s); repeat or comma-separate")
    plot.add_argument("-o", "--output", required=True)
    plot.add_argument("--title")
    plot.set_defaults(func=_cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except EntroflowError as exc:
        print(f"entroflow: error: {exc}", file=sys.stderr)
        if "implicit" in str(exc):
            print("entroflow: hint: halve compare.dt_implicit or lower implicit.damping", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"entroflow: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
