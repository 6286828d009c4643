"""Command-line front end: ``limitbichar <stage> --scenario <name-or-path>``."""

from __future__ import annotations

import argparse
import os
import platform
import sys
import time
import traceback
from pathlib import Path

from . import __version__
from .errors import LimitBicharError, ScenarioError
from .pipeline import NEEDS_PREPARED, STAGES, dump_json
from .scenario import load_scenario, shipped_scenarios

ENV_OUT = "LIMITBICHAR_OUT"
EXIT_OK, EXIT_PIPELINE, EXIT_SCENARIO = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="limitbichar", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["all"]:
        sp = sub.add_parser(name)
        sp.add_argument("--scenario", required=True, help="scenario JSON path or shipped scenario name")
        sp.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUT}/<name> or ./limitbichar-out/<name>)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    sub.add_parser("list", help="print the shipped scenario names")
    return ap


def output_dir(args, sc) -> Path:
    if args.out:
        return Path(args.out)
    explicit = sc.get("output", "directory")
    if explicit:
        return Path(explicit)
    root = os.environ.get(ENV_OUT, "limitbichar-out")
    return Path(root) / sc.name


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print("\n".join(shipped_scenarios()))
        return EXIT_OK
    try:
        sc = load_scenario(args.scenario, args.override)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    out = output_dir(args, sc)
    out.mkdir(parents=True, exist_ok=True)
    names = list(STAGES) if args.command == "all" else [args.command]
    status = {}
    timings = {}
    code = EXIT_OK
    for name in names:
        if name in NEEDS_PREPARED and not sc.has_prepared:
            if args.command == "all":
                status[name] = {"status": "skipped", "reason": "scenario has no prepared block"}
                continue
            print(f"{name}: scenario {sc.name!r} has no prepared block", file=sys.stderr)
            status[name] = {"status": "error", "error": "ScenarioError: no prepared block"}
            code = EXIT_SCENARIO
            break
        t0 = time.perf_counter()
        try:
            summary = STAGES[name](sc, out, max(1, args.threads))
            status[name] = {"status": "ok", "summary": summary}
            print(f"{name}: ok")
        except LimitBicharError as exc:
            status[name] = {"status": "error", "error": f"{type(exc).__name__}: {exc}"}
            print(f"{name}: {type(exc).__name__}: {exc}", file=sys.stderr)
            code = EXIT_PIPELINE
        except Exception as exc:  # report unexpected failures per stage as well
            status[name] = {"status": "error", "error": f"{type(exc).__name__}: {exc}", "trace": traceback.format_exc()}
            print(f"{name}: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
            code = EXIT_PIPELINE
        timings[name] = time.perf_counter() - t0
    (out / "stages.json").write_text(dump_json({"scenario": sc.name, "command": args.command, "stages": status}))
    meta = {
        "scenario_source": sc.source,
        "version": __version__,
        "python": platform.python_version(),
        "platform": platform.platform(),
        "wall_seconds": timings,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out / "metadata.json").write_text(dump_json(meta))
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
