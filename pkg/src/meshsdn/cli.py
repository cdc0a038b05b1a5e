"""Command-line front end: run, validate, sweep, report.

A scenario argument is either a path to a YAML file or the name of a shipped
scenario (``merge``, ``partition``).  Runs print one summary line per seed;
with ``--out`` they also write one ndjson log per run plus a ``results.csv``
holding the summary rows, which ``report`` aggregates.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import sys
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .metrics import SUMMARY_COLUMNS, SummaryRow
from .scenario import ScenarioError, apply_overrides, scenario_from_mapping
from .simulation import RunResult, run_scenario


def _builtin_names() -> list[str]:
    base = resources.files("meshsdn").joinpath("scenarios")
    return sorted(p.name[: -len(".yaml")] for p in base.iterdir() if p.name.endswith(".yaml"))


def _load_doc(ref: str) -> tuple[Any, str]:
    path = Path(ref)
    if path.is_file():
        text, source = path.read_text(), str(path)
    else:
        candidate = resources.files("meshsdn").joinpath("scenarios", f"{ref}.yaml")
        if not candidate.is_file():
            raise ScenarioError(
                f"{ref}: no such file or built-in scenario"
                f" (built-ins: {', '.join(_builtin_names())})"
            )
        text, source = candidate.read_text(), f"builtin:{ref}"
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: not valid YAML: {exc}") from None
    return doc, source


def _parse_params(pairs: list[str]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise ScenarioError(f"--param {pair!r}: expected KEY=VALUE")
        out[key] = yaml.safe_load(raw)
    return out


def _parse_seeds(args: argparse.Namespace) -> list[int]:
    if args.seed is not None and args.seeds is not None:
        raise ScenarioError("--seed and --seeds are mutually exclusive")
    if args.seed is not None:
        return [args.seed]
    if args.seeds is None:
        return [0]
    lo, sep, hi = args.seeds.partition(":")
    try:
        start, stop = int(lo), int(hi)
    except ValueError:
        raise ScenarioError(f"--seeds {args.seeds!r}: expected A:B") from None
    if not sep or stop <= start:
        raise ScenarioError(f"--seeds {args.seeds!r}: need A < B")
    return list(range(start, stop))


def _describe(summary: SummaryRow) -> str:
    cells = summary.as_csv_values()
    parts = [f"{col}={cell or '-'}" for col, cell in zip(SUMMARY_COLUMNS[2:], cells[2:])]
    return f"{summary.scenario} seed={summary.seed}: " + " ".join(parts)


def _write_outputs(out_dir: Path, results: list[RunResult]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for result in results:
        log_path = out_dir / f"{result.scenario}-seed{result.seed}.ndjson"
        log_path.write_text(result.log.to_ndjson())
        rows.append(result.summary.as_csv_line())
    header = ",".join(SUMMARY_COLUMNS)
    (out_dir / "results.csv").write_text("\n".join([header, *rows]) + "\n")


def _run_series(doc: Any, source: str, overrides: dict[str, Any], seeds: list[int]) -> list[RunResult]:
    scenario = scenario_from_mapping(apply_overrides(doc, overrides), source=source)
    results = []
    for seed in seeds:
        result = run_scenario(scenario, seed)
        print(_describe(result.summary))
        results.append(result)
    return results


def cmd_run(args: argparse.Namespace) -> int:
    doc, source = _load_doc(args.scenario)
    results = _run_series(doc, source, _parse_params(args.param), _parse_seeds(args))
    if args.out is not None:
        _write_outputs(Path(args.out), results)
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    doc, source = _load_doc(args.scenario)
    s = scenario_from_mapping(doc, source=source)
    print(
        f"ok: {s.name} ({len(s.wmrs)} wmrs, {len(s.controllers)} controllers,"
        f" {len(s.hosts)} hosts, {len(s.links)} mesh links, {s.duration_s}s)"
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    doc, source = _load_doc(args.scenario)
    if not isinstance(doc, dict):
        raise ScenarioError(f"{source}: expected a mapping")
    seeds = _parse_seeds(args)
    axes: list[tuple[str, list[Any]]] = []
    for pair in args.param:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise ScenarioError(f"--param {pair!r}: expected KEY=V1,V2,...")
        axes.append((key, [yaml.safe_load(v) for v in raw.split(",")]))
    base_name = str(doc.get("name", "scenario"))
    results: list[RunResult] = []
    for combo in itertools.product(*(values for _, values in axes)):
        overrides: dict[str, Any] = dict(zip((k for k, _ in axes), combo))
        label = ",".join(f"{k}={v}" for k, v in overrides.items())
        overrides["name"] = f"{base_name}[{label}]"
        # Each combination gets a pristine copy of the document.
        fresh = yaml.safe_load(yaml.safe_dump(doc))
        results.extend(_run_series(fresh, source, overrides, seeds))
    if args.out is not None:
        _write_outputs(Path(args.out), results)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    csv_path = Path(args.out_dir) / "results.csv"
    if not csv_path.is_file():
        raise ScenarioError(f"{csv_path}: no results.csv here (run with --out first)")
    with csv_path.open(newline="") as handle:
        rows = list(csv.DictReader(handle))
    if not rows:
        raise ScenarioError(f"{csv_path}: empty")
    by_scenario: dict[str, list[dict]] = {}
    for row in rows:
        by_scenario.setdefault(row["scenario"], []).append(row)
    print(f"{'scenario':<30} {'metric':<22} {'runs':>4} {'mean':>10} {'min':>10} {'max':>10}")
    for name in sorted(by_scenario):
        group = by_scenario[name]
        for column in SUMMARY_COLUMNS[2:]:
            values = [float(row[column]) for row in group if row[column]]
            if not values:
                continue
            mean = sum(values) / len(values)
            print(
                f"{name:<30} {column:<22} {len(values):>4}"
                f" {mean:>10.3f} {min(values):>10.3f} {max(values):>10.3f}"
            )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="meshsdn",
        description="Deterministic simulator for hybrid SDN over wireless mesh networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario for one or more seeds")
    run_p.add_argument("scenario", help="YAML path or built-in scenario name")
    run_p.add_argument("--seed", type=int, default=None, help="single seed (default 0)")
    run_p.add_argument("--seeds", default=None, metavar="A:B", help="seed range, half-open")
    run_p.add_argument("--out", default=None, help="write ndjson logs and results.csv here")
    run_p.add_argument(
        "--param",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a scenario value with a dotted key, e.g. eftm.poll_period_s=2",
    )

    val_p = sub.add_parser("validate", help="load and validate a scenario, run nothing")
    val_p.add_argument("scenario")

    sweep_p = sub.add_parser("sweep", help="run the cartesian product of --param value lists")
    sweep_p.add_argument("scenario")
    sweep_p.add_argument(
        "--param", action="append", required=True, metavar="KEY=V1,V2,..."
    )
    sweep_p.add_argument("--seed", type=int, default=None)
    sweep_p.add_argument("--seeds", default=None, metavar="A:B")
    sweep_p.add_argument("--out", default=None)

    rep_p = sub.add_parser("report", help="aggregate a results.csv written by run --out")
    rep_p.add_argument("out_dir")

    args = parser.parse_args(argv)
    handler = {
        "run": cmd_run,
        "validate": cmd_validate,
        "sweep": cmd_sweep,
        "report": cmd_report,
    }[args.command]
    try:
        return handler(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
