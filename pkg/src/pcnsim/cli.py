"""Command-line front end.

Two modes. `--config` runs one scenario and writes trace.ndjson,
metrics.json, and verdicts.json into the output directory; the exit code
reports the property checks selected with `--check`. `--sweep` evaluates a
grid file and writes sweep.csv: either instrumented complexity cells over
(protocol, k, n) or committee-sampling curves over (N, F, sizes).

Exit codes: 0 all selected checks pass, 1 property violation, 2 invalid
input, 3 the event or time budget was exhausted before quiescence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from pathlib import Path

from . import analysis
from .scenario import ConfigError, RunResult, happy_line, run_file, run_scenario

CHECK_NAMES = ("def1", "def2", "def3", "def4")

EXIT_PASS = 0
EXIT_VIOLATION = 1
EXIT_INVALID = 2
EXIT_BUDGET = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pcnsim",
        description="Run committee-backed payment-channel scenarios and "
                    "cost sweeps.")
    p.add_argument("--config",
                   help="scenario JSON file, or the name of a bundled scenario")
    p.add_argument("--seed", help="override the scenario seed")
    p.add_argument("--out-dir", default=".",
                   help="directory for the fixed-name artifacts (default: .)")
    p.add_argument("--check", choices=("all",) + CHECK_NAMES, default="all",
                   help="which property verdicts gate the exit code")
    p.add_argument("--sweep", help="grid JSON file; writes sweep.csv")
    return p


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("pcnsim") / "scenarios"
    return {p.name[:-len(".json")]: Path(str(p))
            for p in root.iterdir() if p.name.endswith(".json")}


def resolve_config(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    bundle = bundled_scenarios()
    name = arg[:-len(".json")] if arg.endswith(".json") else arg
    if name in bundle:
        return bundle[name]
    raise ConfigError("config", f"no such file, and no bundled scenario "
                                f"named {name!r} (have: {', '.join(sorted(bundle))})")


def _print_verdicts(result: RunResult, out) -> None:
    for v in result.verdicts:
        if v.passed:
            print(f"{v.check} {v.label}: pass ({v.checked} checked)", file=out)
            continue
        ce = v.counterexamples[0]
        where = f" at trace index {ce.trace_index}" if ce.trace_index is not None else ""
        print(f"{v.check} {v.label}: FAIL ({len(v.counterexamples)} "
              f"counterexample(s); first{where}: {ce.reason})", file=out)


def cmd_run(args) -> int:
    result = run_file(resolve_config(args.config), seed=args.seed,
                      out_dir=args.out_dir)
    _print_verdicts(result, sys.stdout)
    print(f"artifacts: {Path(args.out_dir).resolve()}")
    if result.budget_exceeded or result.sim.time_limit_hit:
        print("budget exceeded before quiescence", file=sys.stderr)
        return EXIT_BUDGET
    if args.check == "all":
        gate = result.verdicts
    else:
        gate = [v for v in result.verdicts if v.check == args.check]
    return EXIT_PASS if all(v.passed for v in gate) else EXIT_VIOLATION


def _grid_list(data: dict, key: str, fallback=None) -> list:
    values = data.get(key, fallback)
    if values is None:
        raise ConfigError(key, "missing")
    if isinstance(values, (int, str)):
        values = [values]
    if not isinstance(values, list) or not values:
        raise ConfigError(key, "empty grid")
    return values


def sweep_complexity(data: dict) -> str:
    protocols = [p for p in _grid_list(data, "protocol")]
    ks = _grid_list(data, "k")
    ns = _grid_list(data, "n")
    delta = data.get("delta", 1)
    seed = str(data.get("seed", "sweep"))
    rows: list[dict] = []
    for proto in protocols:
        models = [None] if proto == "syncpcn" else \
            _grid_list(data, "cost_model", fallback=["pbft-like"])
        for model in models:
            for k in ks:
                for n in ns:
                    cfg = happy_line(proto, k, n, cost_model=model,
                                     delta=delta, seed=f"{seed}/{proto}/{k}/{n}")
                    res = run_scenario(cfg)
                    if res.budget_exceeded:
                        raise BudgetExceeded(f"{proto} k={k} n={n}")
                    if not res.passed:
                        bad = [v.check for v in res.verdicts if not v.passed]
                        raise SweepCellFailed(f"{proto} k={k} n={n}: {bad}")
                    rows.append(dict(res.metrics["complexity"]))
    for row in rows:
        row.pop("breakdown", None)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def sweep_sampling(data: dict) -> str:
    n_total = data.get("N", 1200)
    if not isinstance(n_total, int) or n_total < 1:
        raise ConfigError("N", "must be a positive integer")
    faulty = _grid_list(data, "F", fallback=list(analysis.FIG3_FAULTY_COUNTS))
    sizes = data.get("sizes")
    if sizes is not None:
        sizes = _grid_list(data, "sizes")
    return analysis.sampling_plot_csv(n_total, faulty, sizes)


class BudgetExceeded(RuntimeError):
    pass


class SweepCellFailed(RuntimeError):
    pass


def cmd_sweep(args) -> int:
    path = Path(args.sweep)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(str(path), f"cannot read grid: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("", "grid must be a JSON object")
    kind = data.get("kind", "complexity")
    if kind == "complexity":
        text = sweep_complexity(data)
    elif kind == "sampling":
        text = sweep_sampling(data)
    else:
        raise ConfigError("kind", f"unknown sweep kind {kind!r}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "sweep.csv"
    target.write_text(text)
    print(f"wrote {target} ({len(text.splitlines()) - 1} rows)")
    return EXIT_PASS


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if bool(args.config) == bool(args.sweep):
        parser.print_usage(sys.stderr)
        print("error: exactly one of --config or --sweep is required",
              file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.config:
            return cmd_run(args)
        return cmd_sweep(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except BudgetExceeded as e:
        print(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except SweepCellFailed as e:
        print(f"property violation in sweep cell: {e}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
