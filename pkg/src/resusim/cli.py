"""Command-line front end.

    resusim validate SCENARIO
    resusim run SCENARIO [--seed N] [--protocol V] [--out DIR] [--emit-graph]
    resusim batch SCENARIO --runs N [--seed BASE] [--parallelism P] [--out DIR]
    resusim compare SCENARIO [SCENARIO_B] [--arm-a V --arm-b V] --runs N ...
    resusim distribution EVENTS_JSONL [--out DIR]

Exit status: 0 ok, 1 invalid scenario, 2 bad arguments or unreadable input,
3 a run failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from . import engine, metrics
from .comms import Variant
from .domain import IntegrityFault
from .scenario import ScenarioConfig, ScenarioError, scenario_from_dict, validate_scenario

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_FAULT = 3

VARIANTS = [v.value for v in Variant]


class UsageError(Exception):
    """Bad arguments or an input file that cannot be read."""


class _Parser(argparse.ArgumentParser):
    # argparse exits on its own; raise instead so main() owns the status.
    def error(self, message):
        raise UsageError(message)


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _load(path: str, protocol: Optional[str] = None) -> ScenarioConfig:
    sc = scenario_from_dict(_read_json(path))
    return sc.with_variant(protocol) if protocol else sc


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc.strerror or exc}") from exc
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ------------------------------------------------------------ subcommands
def cmd_validate(args) -> int:
    problems = validate_scenario(_read_json(args.scenario))
    if problems:
        for p in problems:
            print(f"INVALID {p}")
        return EXIT_INVALID
    print(f"OK {args.scenario}")
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _load(args.scenario, args.protocol)
    out = _out_dir(args.out)
    result, events = engine.run(sc, args.seed)
    (out / "events.jsonl").write_text(engine.events_to_jsonl(events), encoding="utf-8")
    summary = result.to_dict()
    summary["variant"] = sc.protocol.variant.value
    summary["distribution"] = metrics.fipa_distribution(events).to_dict()
    _write_json(out / "summary.json", summary)
    if args.emit_graph:
        metrics.write_csv(out / "graph.csv", metrics.GRAPH_COLUMNS, metrics.message_edges(events))
    print(f"{result.outcome} total={result.total_seconds}s no_flow={result.no_flow_seconds}s "
          f"messages={result.total_messages}")
    return EXIT_OK


def _batch(sc: ScenarioConfig, args) -> dict:
    return engine.monte_carlo(sc, args.runs, base_seed=args.seed, parallelism=args.parallelism)


def _aggregate(summary: dict) -> dict:
    return {k: v for k, v in summary.items() if k != "runs"}


def cmd_batch(args) -> int:
    sc = _load(args.scenario, args.protocol)
    out = _out_dir(args.out)
    summary = _batch(sc, args)
    metrics.write_csv(out / "batch.csv", metrics.BATCH_COLUMNS, metrics.batch_rows(summary["runs"]))
    agg = _aggregate(summary)
    agg["variant"] = sc.protocol.variant.value
    _write_json(out / "summary.json", agg)
    print(f"{summary['n_completed']}/{summary['n_runs']} runs, ROSC rate {summary['rosc_rate']:.3f}, "
          f"mean no-flow {summary['no_flow_seconds']['mean']:.1f}s")
    return EXIT_FAULT if summary["errors"] else EXIT_OK


def _arm_names(args) -> tuple:
    if args.scenario_b is None:
        return args.arm_a, args.arm_b
    a = args.arm_a or Path(args.scenario).stem
    b = args.arm_b or Path(args.scenario_b).stem
    if a == b:
        a, b = f"{a}_a", f"{b}_b"
    return a, b


def cmd_compare(args) -> int:
    if args.scenario_b is None and not (args.arm_a and args.arm_b):
        raise UsageError("compare needs two scenarios or both --arm-a and --arm-b")
    sc_a = _load(args.scenario, args.arm_a)
    sc_b = _load(args.scenario_b or args.scenario, args.arm_b)
    out = _out_dir(args.out)
    name_a, name_b = _arm_names(args)
    a, b = _batch(sc_a, args), _batch(sc_b, args)
    metrics.write_csv(out / f"batch_{name_a}.csv", metrics.BATCH_COLUMNS, metrics.batch_rows(a["runs"]))
    metrics.write_csv(out / f"batch_{name_b}.csv", metrics.BATCH_COLUMNS, metrics.batch_rows(b["runs"]))
    ok_a = [r for r in a["runs"] if "error" not in r]
    ok_b = [r for r in b["runs"] if "error" not in r]
    if len(ok_a) < 2 or len(ok_b) < 2:
        log.error("too few completed runs to compare (%d, %d)", len(ok_a), len(ok_b))
        return EXIT_FAULT
    rows = [metrics.compare_arms(ok_a, ok_b, m, name_a, name_b) for m in metrics.METRIC_KEYS]
    metrics.write_csv(out / "compare.csv", metrics.COMPARISON_COLUMNS, [c.row() for c in rows])
    _write_json(out / "summary.json", {name_a: _aggregate(a), name_b: _aggregate(b)})
    for c in rows:
        print(f"{c.metric}: {name_a} {c.a.mean:.2f} vs {name_b} {c.b.mean:.2f}, "
              f"U={c.u_a:.1f} p={c.p_value:.4g} ({c.direction})")
    return EXIT_FAULT if a["errors"] or b["errors"] else EXIT_OK


def cmd_distribution(args) -> int:
    try:
        with open(args.events, encoding="utf-8") as fh:
            events = [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise UsageError(f"cannot read {args.events}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.events} is not a JSON-lines event log: {exc}") from exc
    out = _out_dir(args.out)
    report = metrics.fipa_distribution(events)
    metrics.write_csv(out / "distribution.csv", metrics.DISTRIBUTION_COLUMNS, report.rows())
    print(f"{report.total} messages, modal performative {report.modal_performative()}")
    return EXIT_OK


# ----------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="resusim", description="Resuscitation team communication simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="one seeded run: events.jsonl and summary.json")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--protocol", choices=VARIANTS)
    r.add_argument("--out", default="out")
    r.add_argument("--emit-graph", action="store_true", help="also write graph.csv (sender, receiver, count)")
    r.set_defaults(func=cmd_run)

    def batch_flags(q):
        q.add_argument("--runs", type=int, required=True)
        q.add_argument("--seed", type=int, default=0, help="first seed; runs use seed .. seed+runs-1")
        q.add_argument("--parallelism", type=int, default=1)
        q.add_argument("--out", default="out")

    b = sub.add_parser("batch", help="Monte Carlo batch: batch.csv and summary.json")
    b.add_argument("scenario")
    b.add_argument("--protocol", choices=VARIANTS)
    batch_flags(b)
    b.set_defaults(func=cmd_batch)

    c = sub.add_parser("compare", help="two arms on the same seeds: compare.csv")
    c.add_argument("scenario")
    c.add_argument("scenario_b", nargs="?")
    c.add_argument("--arm-a", choices=VARIANTS)
    c.add_argument("--arm-b", choices=VARIANTS)
    batch_flags(c)
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("distribution", help="performative and category shares of an event log")
    d.add_argument("events")
    d.add_argument("--out", default="out")
    d.set_defaults(func=cmd_distribution)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "runs", 1) < 1:
            raise UsageError("--runs must be >= 1")
        if getattr(args, "parallelism", 1) < 1:
            raise UsageError("--parallelism must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"resusim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        for v in exc.violations:
            print(f"INVALID {v}", file=sys.stderr)
        return EXIT_INVALID
    except (IntegrityFault, metrics.LogError) as exc:
        print(f"resusim: fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
