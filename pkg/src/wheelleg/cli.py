"""``wheelleg`` command line: run scenarios, compare runs, summarize logs.

Exit codes:
  0  success
  1  I/O failure (missing file, unwritable output directory)
  2  usage error
  3  scenario parse or validation failure
  4  solver failure during a run (previous input was held)
  5  plant divergence (run aborted, partial log written)
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .behavior import ScheduleError
from .scenario import ScenarioError, dump_scenario, parse_scenario, preset_names, preset_text
from .sim import TrajectoryLog, compare_runs, compute_metrics, run_closed_loop

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_PARSE, EXIT_SOLVER, EXIT_DIVERGED = 0, 1, 2, 3, 4, 5
OUTPUT_ENV = "WHEELLEG_OUTPUT_DIR"
DEFAULT_OUTPUT = "wheelleg-out"


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def _status_code(log: TrajectoryLog) -> int:
    return {"ok": EXIT_OK, "solver-failure": EXIT_SOLVER, "diverged": EXIT_DIVERGED}[log.status]


def write_run(log: TrajectoryLog, scenario, out: Path) -> dict[str, Path]:
    """Write the log, metrics, behavior segments and resolved scenario."""
    out.mkdir(parents=True, exist_ok=True)
    stem = scenario.name
    files = {
        "log": out / f"{stem}_log.csv",
        "metrics": out / f"{stem}_metrics.csv",
        "behaviors": out / f"{stem}_behaviors.csv",
        "scenario": out / f"{stem}_scenario.toml",
    }
    log.to_csv(files["log"])
    files["metrics"].write_text(compute_metrics(log, scenario.reconverge_band).to_csv()
                                if len(log) else "metric,value\n")
    rows = ["kind,t_start,t_end,d_from,d_target,gamma,obstacle"]
    for b in log.behaviors:
        obs = "" if b.obstacle is None else b.obstacle
        rows.append(f"{b.kind},{b.t_start!r},{b.t_end!r},{b.d_from!r},{b.d_target!r},{b.gamma},{obs}")
    files["behaviors"].write_text("\n".join(rows) + "\n")
    files["scenario"].write_text(dump_scenario(scenario))
    return files


def _run_one(source: str, overrides, out: Path | None, quiet: bool):
    scenario = parse_scenario(source, overrides)
    if not quiet:
        print(f"running {scenario.name}: {scenario.n_ticks} controller ticks, "
              f"N_p={scenario.controller.N_p}, N_c={scenario.controller.N_c}", file=sys.stderr)
    log = run_closed_loop(scenario)
    files = write_run(log, scenario, out) if out is not None else {}
    return scenario, log, files


def cmd_run(args) -> int:
    scenario, log, files = _run_one(args.scenario, args.set, _out_dir(args.output), args.quiet)
    if len(log):
        for line in compute_metrics(log, scenario.reconverge_band).summary_lines():
            print(line)
    for kind, path in files.items():
        print(f"wrote {kind}: {path}")
    if log.status != "ok":
        print(f"error: {log.message}", file=sys.stderr)
    return _status_code(log)


def _load_or_run(source: str, overrides, out: Path, quiet: bool):
    if source.endswith(".csv"):
        try:
            return Path(source).stem, TrajectoryLog.from_csv(source), 0.05, EXIT_OK
        except OSError as exc:
            raise FileNotFoundError(f"cannot read log {source}: {exc.strerror or exc}") from None
    scenario, log, _ = _run_one(source, overrides, out, quiet)
    return scenario.name, log, scenario.reconverge_band, _status_code(log)


def cmd_compare(args) -> int:
    out = _out_dir(args.output)
    name_a, log_a, band, code_a = _load_or_run(args.a, args.set, out, args.quiet)
    name_b, log_b, _, code_b = _load_or_run(args.b, args.set, out, args.quiet)
    if name_a == name_b:
        name_b = f"{name_b}(2)"
    comp = compare_runs(log_a, log_b, band)
    for label, m in ((name_a, comp.metrics_a), (name_b, comp.metrics_b)):
        print(f"[{label}]")
        for line in m.summary_lines():
            print(f"  {line}")
    print(f"[{name_b} vs {name_a}]")
    for line in comp.lines(name_a, name_b):
        print(f"  {line}")
    return max(code_a, code_b)


def cmd_metrics(args) -> int:
    try:
        log = TrajectoryLog.from_csv(args.log)
    except OSError as exc:
        raise FileNotFoundError(f"cannot read log {args.log}: {exc.strerror or exc}") from None
    m = compute_metrics(log, args.band)
    for line in m.summary_lines():
        print(line)
    print(m.to_text(), end="")
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in preset_names():
        if args.show:
            print(f"# {name}")
            print(preset_text(name))
        else:
            scenario = parse_scenario(name)
            c = scenario.controller
            print(f"{name}: path={scenario.path.name or scenario.path.kind} "
                  f"obstacles={len(scenario.obstacles)} N_p={c.N_p} N_c={c.N_c}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wheelleg", description=__doc__.split("\n")[0],
                                epilog=__doc__.split("\n", 1)[1],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("-o", "--output", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a scenario value, e.g. controller.N_p=20 (repeatable)")
        sp.add_argument("-q", "--quiet", action="store_true")

    sp = sub.add_parser("run", help="simulate a scenario file or shipped preset")
    sp.add_argument("scenario")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="compare two runs (scenarios, presets or log CSVs)")
    sp.add_argument("a")
    sp.add_argument("b")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("metrics", help="summarize a trajectory log CSV")
    sp.add_argument("log")
    sp.add_argument("--band", type=float, default=0.05, help="reconvergence band on |Ye|, m")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("presets", help="list shipped scenarios")
    sp.add_argument("--show", action="store_true", help="print the preset files")
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ScheduleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed log files and mismatched comparisons
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
