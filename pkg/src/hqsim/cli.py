"""Command-line front end.

Exit codes: 0 success, 1 configuration/usage error, 2 validation or parse
error, 3 simulation fault. Errors go to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .config import ConfigError, ScenarioConfig, StrategyConfig, load_config
from .core import ValidationError
from .engine import HandlerFault, Trace
from .hetjob import HetjobSyntaxError, parse_script
from .metrics import (
    MalformedTrace,
    MetricsReport,
    compare,
    job_rows,
    rows_to_csv,
    summary_row,
)
from .strategies import STRATEGY_NAMES, simulate
from .workload import PAPER_TECHNOLOGIES, contended_scenario, paper_scenario

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_FAULT = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra) -> None:
        self.code = code
        self.kind = kind
        self.message = message
        self.extra = extra
        super().__init__(message)


def _error(err: CliError) -> int:
    payload = {"error": err.kind, "message": err.message, **err.extra}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return err.code


def _run(cfg: ScenarioConfig, strategy: StrategyConfig) -> tuple[Trace, MetricsReport]:
    from .metrics import analyze

    try:
        trace = simulate(
            cfg.cluster,
            cfg.jobs,
            strategy.name,
            seed=cfg.seed,
            retain=strategy.retain,
            backfill=strategy.backfill,
        )
    except ValidationError as exc:
        raise CliError(EXIT_VALIDATION, type(exc).__name__, str(exc)) from None
    except HandlerFault as exc:
        raise CliError(EXIT_FAULT, "HandlerFault", str(exc), events=len(exc.trace)) from None
    try:
        return trace, analyze(trace, cfg.cluster)
    except MalformedTrace as exc:
        raise CliError(EXIT_FAULT, "MalformedTrace", str(exc)) from None


def _load(args) -> ScenarioConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "strategy", None):
        overrides.append(f'strategy.name="{args.strategy}"')
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, "ConfigError", exc.message, field=exc.field) from None
    if args.out is not None:
        cfg = replace(cfg, output_dir=Path(args.out))
    if args.format is not None:
        cfg = replace(cfg, output_format=args.format)
    if args.trace:
        cfg = replace(cfg, trace=True)
    if cfg.trace and cfg.output_dir is None:
        raise CliError(EXIT_CONFIG, "ConfigError", "--trace needs an output directory", field="output.dir")
    return cfg


def _write(directory: Path, name: str, text: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / name).write_text(text, encoding="utf-8")


def _human_summary(strategy: str, report: MetricsReport) -> str:
    lines = [f"strategy: {strategy}"]
    for key, value in report.summary().items():
        lines.append(f"  {key:<24} {value:.6g}" if isinstance(value, float) else f"  {key:<24} {value}")
    return "\n".join(lines)


def _emit_reports(cfg: ScenarioConfig, results: list[tuple[str, Trace, MetricsReport]]) -> None:
    if cfg.output_dir is None:
        return
    if cfg.output_format == "csv":
        _write(cfg.output_dir, "summary.csv", rows_to_csv([summary_row(n, r) for n, _, r in results]))
        _write(cfg.output_dir, "jobs.csv", rows_to_csv([row for n, _, r in results for row in job_rows(n, r)]))
    else:
        doc = {name: report.to_dict() for name, _, report in results}
        _write(cfg.output_dir, "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if cfg.trace:
        for name, trace, _ in results:
            _write(cfg.output_dir, f"trace-{name}.tsv" if len(results) > 1 else "trace.tsv", trace.dumps())


def cmd_simulate(args) -> int:
    cfg = _load(args)
    trace, report = _run(cfg, cfg.strategy)
    _emit_reports(cfg, [(cfg.strategy.name, trace, report)])
    if args.format == "json":
        print(json.dumps({"strategy": cfg.strategy.name, **report.summary()}, sort_keys=True))
    else:
        print(_human_summary(cfg.strategy.name, report))
    return EXIT_OK


def _strategy_list(raw: list[str]) -> list[str]:
    names = [n.strip() for item in raw for n in item.split(",") if n.strip()]
    unknown = [n for n in names if n not in STRATEGY_NAMES]
    if unknown:
        raise CliError(
            EXIT_CONFIG, "ConfigError", f"unknown strategy {unknown[0]!r}; valid: {', '.join(STRATEGY_NAMES)}",
            field="strategies",
        )
    if len(names) < 2:
        raise CliError(EXIT_CONFIG, "ConfigError", "compare needs at least two strategies", field="strategies")
    return names


def _compare_results(cfg: ScenarioConfig, names: list[str]) -> list[tuple[str, Trace, MetricsReport]]:
    results = []
    for name in names:
        backfill = cfg.strategy.backfill and name in ("workflow", "malleable")
        trace, report = _run(cfg, StrategyConfig(name, cfg.strategy.retain, backfill))
        results.append((name, trace, report))
    return results


def cmd_compare(args) -> int:
    names = _strategy_list(args.strategies)
    cfg = _load(args)
    results = _compare_results(cfg, names)
    table = compare([(n, r) for n, _, r in results])
    _emit_reports(cfg, results)
    if cfg.output_dir is not None:
        _write(cfg.output_dir, "comparison.csv", table.to_csv())
    if args.format == "json":
        print(json.dumps({"imbalance": table.imbalance, "rows": table.rows()}, sort_keys=True))
    else:
        print(table.render())
        print()
        print(table.to_csv(), end="")
    return EXIT_OK


def cmd_paper_scenario(args) -> int:
    tech = args.tech
    if tech not in PAPER_TECHNOLOGIES:
        raise CliError(
            EXIT_CONFIG, "ConfigError", f"no canonical scenario for {tech!r}; choose {', '.join(PAPER_TECHNOLOGIES)}",
            field="tech",
        )
    sections = []
    out = {}
    for label, (cluster, jobs) in (
        ("canonical", paper_scenario(tech)),
        ("contended", contended_scenario(tech, args.k)),
    ):
        if label == "canonical":
            cluster = replace(cluster, vqpus_per_qpu=args.k)
        cfg = ScenarioConfig(cluster, tuple(jobs), StrategyConfig(retain=args.retain), args.seed or 0)
        results = _compare_results(cfg, list(STRATEGY_NAMES))
        table = compare([(n, r) for n, _, r in results])
        sections.append((label, table, results))
        out[label] = {"imbalance": table.imbalance, "rows": table.rows()}

    base = sections[0][2][0][2]
    if tech == "superconducting":
        headline = f"coschedule QPU utilization (busy/allocated): {base.qpu_utilization:.6f}"
    else:
        headline = f"coschedule allocated-idle node fraction: {base.node_idle_fraction:.6f}"

    if args.out is not None:
        out_dir = Path(args.out)
        for label, table, results in sections:
            _write(out_dir, f"{label}-comparison.csv", table.to_csv())
            _write(out_dir, f"{label}-jobs.csv", rows_to_csv([row for n, _, r in results for row in job_rows(n, r)]))
    if args.format == "json":
        print(json.dumps({"tech": tech, "headline": headline, **out}, sort_keys=True))
        return EXIT_OK
    print(f"scenario: {tech}")
    print(headline)
    for label, table, _ in sections:
        print()
        print(f"[{label}]")
        print(table.render())
    return EXIT_OK


def cmd_parse(args) -> int:
    path = Path(args.script)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_CONFIG, "FileError", f"cannot read {path}: {exc.strerror}") from None
    try:
        parsed = parse_script(text)
    except HetjobSyntaxError as exc:
        for err in exc.errors:
            print(err.format(str(path)), file=sys.stderr)
        return EXIT_VALIDATION
    doc = {
        "components": [
            {
                "component_id": r.component_id,
                "partition": r.partition,
                "nodes": r.nodes,
                "qpu_gres": r.qpu_gres,
                "walltime": r.walltime,
            }
            for r in parsed.requests
        ],
        "commands": parsed.commands,
    }
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hqsim", description="Hybrid HPC-quantum cluster allocation simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", help="directory for CSV/JSON reports and traces")
        p.add_argument("--format", choices=("csv", "json"), help="report format; json also goes to stdout")
        p.add_argument("--trace", action="store_true", help="dump the event trace (tab-separated)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")

    p = sub.add_parser("simulate", help="run one strategy")
    run_options(p)
    p.add_argument("--strategy", help=f"one of {', '.join(STRATEGY_NAMES)}")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run several strategies on the same workload")
    run_options(p)
    p.add_argument("--strategies", action="append", required=True, help="comma-separated strategy names")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("paper-scenario", help="reproduce the superconducting / neutral-atoms imbalance cases")
    p.add_argument("tech")
    p.add_argument("--k", type=int, default=2, help="virtual QPUs per physical QPU (default 2)")
    p.add_argument("--retain", type=int, default=1, help="nodes kept by malleable jobs in quantum phases")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    p.set_defaults(func=cmd_paper_scenario)

    p = sub.add_parser("parse", help="parse a hetjob script")
    p.add_argument("script")
    p.set_defaults(func=cmd_parse)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as err:
        return _error(err)
    except ValueError as exc:
        return _error(CliError(EXIT_CONFIG, "ConfigError", str(exc)))


if __name__ == "__main__":
    sys.exit(main())
