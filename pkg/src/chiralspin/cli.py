"""Command line entry point ``chiralspin``."""

import argparse
import json
import logging
import sys

from . import __version__
from . import scenario as sc


class _UsageError(Exception):
    pass


def _parse_grid(items):
    grid = {}
    for item in items or []:
        key, _, values = item.partition("=")
        if not values:
            raise _UsageError(f"--grid expects PATH=V1,V2,...; got {item!r}")
        try:
            grid[key] = [float(v) for v in values.split(",")]
        except ValueError:
            raise _UsageError(f"--grid values must be numbers; got {values!r}") from None
    return grid


def _add_run_options(p):
    p.add_argument("scenario", help="scenario JSON file (or the name of a shipped scenario)")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $CHIRALSPIN_THREADS or 1)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")


def _load(path):
    try:
        return sc.load_scenario(path)
    except (sc.ScenarioError, FileNotFoundError) as exc:
        raise _UsageError(str(exc)) from None


def _report(manifest, code):
    status = "ok" if code == 0 else "FAILED"
    print(f"{manifest['scenario']['name']}: {status} in {manifest['wall_time_s']:.2f} s; "
          f"wrote {', '.join(manifest['outputs']) or 'manifest only'}")
    if manifest["error"]:
        print(f"error: {manifest['error']['type']}: {manifest['error']['message']}",
              file=sys.stderr)
    return code


def cmd_run(args):
    s = _load(args.scenario)
    return _report(*sc.run_scenario(s, args.out, args.threads, args.seed))


def cmd_sweep(args):
    s = _load(args.scenario)
    grid = _parse_grid(args.grid)
    if grid:
        raw = dict(s.raw)
        if s.task != "sweep":
            raw["params"] = {"task": s.task, "params": s.raw.get("params", {}), "grid": grid}
            raw["task"] = "sweep"
        else:
            raw["params"] = dict(raw["params"], grid=grid)
        try:
            s = sc.validate_scenario(raw)
        except sc.ScenarioError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    elif s.task != "sweep":
        print("error: scenario has no grid; pass --grid PATH=V1,V2,...", file=sys.stderr)
        return 2
    return _report(*sc.run_scenario(s, args.out, args.threads, args.seed))


def cmd_fit(args):
    header, data = sc.read_csv(args.table)
    for col in [args.x, args.y] + ([args.group] if args.group else []):
        if col not in header:
            print(f"error: column {col!r} not in {header}", file=sys.stderr)
            return 2
    xi, yi = header.index(args.x), header.index(args.y)
    groups = {None: data}
    if args.group:
        gi = header.index(args.group)
        groups = {g: data[data[:, gi] == g] for g in sorted(set(data[:, gi]))}
    out = []
    code = 0
    for g, rows in groups.items():
        entry = {"group": g}
        try:
            f = sc.fit_susceptibility(rows[:, xi], rows[:, yi], args.kind)
            entry.update(kind=f.kind, coefficient=f.coefficient, fit_window=list(f.fit_window),
                         residual=f.residual, n_points=f.n_points)
        except ValueError as exc:
            entry["error"] = str(exc)
            code = 1
        out.append(entry)
    print(json.dumps(out, indent=2))
    return code


def cmd_validate(args):
    try:
        s = sc.load_scenario(args.scenario)
    except (sc.ScenarioError, FileNotFoundError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(f"valid: {s.name} (task {s.task}, N={s.network.n_spins})")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="chiralspin",
                                 description="Driven spin networks coupled to chiral waveguides.")
    ap.add_argument("--version", action="version", version=f"chiralspin {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario")
    _add_run_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="execute a scenario over a parameter grid")
    _add_run_options(p)
    p.add_argument("--grid", action="append", metavar="PATH=V1,V2,...",
                   help="grid over a scalar field (repeat for a second field)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit susceptibilities to a sweep table")
    p.add_argument("table", help="CSV written by 'chiralspin sweep'")
    p.add_argument("--x", required=True, help="column with the offset or decay rate")
    p.add_argument("--y", default="P", help="purity column (default P)")
    p.add_argument("--kind", choices=("quadratic", "linear"), required=True)
    p.add_argument("--group", help="fit separately for each value of this column")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
