"""Command line front end: classify templates, run simulations, verify
recorded traces.

Three subcommands share one convention: machine-readable results go to
files under --out, human summaries go to standard output. Exit code 0
means success, 1 means a verified property was violated, 2 means the
input could not be used (unknown files, parse errors, bad flags).

Schema, template, workload, and latency arguments accept either a file
path or the name of a bundled resource (`ministore`, `synthetic`,
`tpcw`, and `wan5` for the latency matrix).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from .checker import Verdict, check_trace
from .minisql import (
    ParseError,
    TEMPLATES_HEADER,
    parse_schema,
    parse_templates,
)
from .partitioner import SearchSpaceExceeded, partition_templates
from .simulate import (
    LatencyError,
    LatencyMatrix,
    WorkloadError,
    WorkloadSpec,
    run,
    sweep_local_ratio,
)
from .trace import TraceError
from .workloads import load_data

# sweep probes grow the client count; desk runs stay bounded
SWEEP_MAX_CLIENTS = 32
DEFAULT_SWEEP_RATIOS = "0,0.3,0.5,0.7,0.9"


class CliError(Exception):
    pass


def _resolve(value: str, suffix: str) -> str:
    """File contents from a path, or from the bundled data directory
    when the argument is a known resource name."""
    path = Path(value)
    if path.exists():
        return path.read_text()
    if value.isidentifier() or "-" in value:
        try:
            return load_data(f"{value}_{suffix}")
        except FileNotFoundError:
            pass
    raise CliError(f"no such file or bundled resource: {value}")


def _write(out_dir: str, name: str, text: str) -> Path:
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / name
    target.write_text(text)
    return target


def _print_verdict(verdict: Verdict) -> None:
    width = max(len(r.name) for r in verdict.results)
    for r in verdict.results:
        mark = "ok" if r.ok else "FAIL"
        line = f"{r.name.ljust(width)}  {mark}"
        if not r.ok and r.detail:
            line += f"  {r.detail}"
        print(line)
    failed = verdict.failed()
    if failed:
        print(f"FAIL: {len(failed)} of {len(verdict.results)} checks failed")
    else:
        s = verdict.stats
        print(
            f"PASS: {len(verdict.results)} checks over "
            f"{s.get('operations', 0)} operations, "
            f"{s.get('epochs', 0)} epochs"
        )


# ------------------------------------------------------------ partition


def cmd_partition(args) -> int:
    templates_text = _resolve(args.templates, "templates.sql")
    stripped = templates_text.strip()
    if not stripped or stripped == TEMPLATES_HEADER:
        templates = []
    else:
        if args.schema:
            schema_text = _resolve(args.schema, "schema.sql")
        elif not Path(args.templates).exists():
            # a bundled template name implies its bundled schema
            schema_text = _resolve(args.templates, "schema.sql")
        else:
            raise CliError(
                "--schema is required when --templates is a file path"
            )
        schema = parse_schema(schema_text)
        templates = parse_templates(templates_text, schema)

    if args.weights:
        doc = json.loads(Path(args.weights).read_text())
        weights = doc.get("weights")
        if not isinstance(weights, dict):
            raise CliError(f"{args.weights}: expected a 'weights' object")
        known = {t.name for t in templates}
        unknown = sorted(set(weights) - known)
        if unknown:
            raise CliError(f"weights name unknown transactions: {unknown}")
        for t in templates:
            if t.name in weights:
                t.weight = float(weights[t.name])

    report = partition_templates(templates)
    path = _write(args.out, "partition_report.json", report.to_json())
    print(report.human_table(), end="")
    print(f"report written to {path}")
    return 0


# ------------------------------------------------------------- simulate


def _load_latency(arg: Optional[str], n_servers: int) -> Optional[LatencyMatrix]:
    if arg is None:
        return None
    matrix = LatencyMatrix.from_json(_resolve(arg, "latency.json"))
    if len(matrix.sites) > n_servers:
        matrix = matrix.restrict(n_servers)
    return matrix


def cmd_simulate(args) -> int:
    spec = WorkloadSpec.from_json(_resolve(args.workload, "workload.json"))
    spec = spec.with_(seed=args.seed)
    if args.misdirect_prob is not None:
        spec = spec.with_(misdirect_prob=args.misdirect_prob)
    latency = _load_latency(args.latency, args.servers)

    if args.sweep_local_ratio is not None:
        if args.check:
            raise CliError("--check does not combine with a sweep")
        try:
            ratios = [float(r) for r in args.sweep_local_ratio.split(",") if r]
        except ValueError:
            raise CliError(
                f"bad sweep ratios: {args.sweep_local_ratio!r}"
            ) from None
        rows = sweep_local_ratio(
            spec,
            args.servers,
            latency,
            ratios=ratios,
            max_clients_per_site=SWEEP_MAX_CLIENTS,
        )
        lines = ["local_ratio,clients_per_site,throughput_ops_s,mean_ms"]
        for ratio, sat in rows:
            lines.append(
                f"{ratio:g},{sat['clients_per_site']},"
                f"{sat['throughput']:.3f},{sat['mean_ms']:.3f}"
            )
        csv = "\n".join(lines) + "\n"
        path = _write(args.out, "sweep.csv", csv)
        print(csv, end="")
        print(f"sweep written to {path}")
        return 0

    result = run(spec, args.servers, latency)
    m = result.metrics
    trace_path = _write(args.out, "trace.jsonl", result.jsonl())
    _write(args.out, "metrics.json", m.to_json())
    _write(args.out, "metrics.csv", m.to_csv([m]))
    print(
        f"{m.scenario}: {m.per_class['all']['count']} ops on "
        f"{m.n_servers} servers, {m.makespan_ms:.1f} ms simulated, "
        f"{m.throughput('all'):.1f} ops/s, mean {m.mean_ms('all'):.2f} ms, "
        f"{m.errors} errors"
    )
    print(f"trace written to {trace_path}")
    if args.check:
        verdict = check_trace(result.trace())
        _print_verdict(verdict)
        return 0 if verdict.ok else 1
    return 0


# ---------------------------------------------------------------- check


def cmd_check(args) -> int:
    path = Path(args.trace)
    if not path.exists():
        raise CliError(f"no such trace file: {args.trace}")
    verdict = check_trace(path.read_text())
    if args.out:
        _write(args.out, "verdict.json", verdict.to_json())
    _print_verdict(verdict)
    return 0 if verdict.ok else 1


# ----------------------------------------------------------- entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opring",
        description="classify transaction templates, simulate a "
        "replicated server group, and verify recorded traces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "partition", help="classify templates and emit the routing report"
    )
    p.add_argument("--templates", required=True,
                   help="template file or bundled name")
    p.add_argument("--schema", help="schema file (defaults to the bundled "
                   "schema when --templates names a bundled set)")
    p.add_argument("--weights", help="JSON file with per-transaction weights")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(fn=cmd_partition)

    s = sub.add_parser("simulate", help="run one deterministic scenario")
    s.add_argument("--workload", required=True,
                   help="workload file or bundled name")
    s.add_argument("--servers", required=True, type=int)
    s.add_argument("--seed", required=True,
                   help="run seed; reruns reproduce outputs byte for byte")
    s.add_argument("--latency", help="latency matrix file or bundled name")
    s.add_argument("--out", default=".", help="output directory")
    s.add_argument("--misdirect-prob", type=float,
                   help="chance a request first goes to the wrong server")
    s.add_argument("--check", action="store_true",
                   help="verify the produced trace and fail on violations")
    s.add_argument("--sweep-local-ratio", nargs="?",
                   const=DEFAULT_SWEEP_RATIOS, metavar="RATIOS",
                   help="saturation sweep over comma-separated local "
                   f"shares (default {DEFAULT_SWEEP_RATIOS})")
    s.set_defaults(fn=cmd_simulate)

    c = sub.add_parser("check", help="verify a recorded trace file")
    c.add_argument("trace", help="trace file (JSON lines)")
    c.add_argument("--out", help="directory for the verdict JSON")
    c.set_defaults(fn=cmd_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (
        CliError,
        ParseError,
        SearchSpaceExceeded,
        WorkloadError,
        LatencyError,
        TraceError,
        json.JSONDecodeError,
        OSError,
    ) as e:
        print(f"opring: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
