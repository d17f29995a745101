"""Command-line front end: run, compare, replay, report.

Configuration is a JSON file; relative paths inside it (script files, template
directory) resolve against the config file's own directory.  Remote backends
read their API key from the environment variable named in the config and
refuse to start when it is unset.  Replay and report work purely from trace
files — no backend and no environment is ever constructed for them.
"""

from __future__ import annotations

import argparse
import glob as globlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from .baselines import BASELINES, run_baseline
from .engine import RunConfig, RunReport, run_task
from .environments import TaskInstance, load_task_instance, make_environment
from .roles import ModelBackend, RemoteChatBackend, ScriptedBackend
from .telemetry import (
    CounterClock,
    MetricsRecord,
    TraceSink,
    compare_report,
    compute_metrics,
    read_trace,
)

__all__ = ["CliError", "load_config", "dispatch", "main", "METHODS"]

METHODS = ("tdp",) + tuple(sorted(BASELINES))


class CliError(ValueError):
    """User-facing command failure; rendered as one line on stderr."""


# ---------------------------------------------------------------------------
# config + inputs


def _build_backend(spec: dict[str, Any], base_dir: Path) -> ModelBackend:
    kind = spec.get("kind")
    if kind == "scripted":
        rules = spec.get("rules")
        if isinstance(rules, str):
            path = (base_dir / rules).resolve() if not Path(rules).is_absolute() else Path(rules)
            if not path.exists():
                raise CliError(f"script file not found: {path}")
            return ScriptedBackend.from_file(path)
        if isinstance(rules, list):
            return ScriptedBackend(rules)
        raise CliError("scripted backend needs 'rules': a file path or an inline list")
    if kind == "remote":
        for key in ("endpoint", "model", "credential_env"):
            if not spec.get(key):
                raise CliError(f"remote backend config missing {key!r}")
        try:
            return RemoteChatBackend(
                endpoint=spec["endpoint"],
                model=spec["model"],
                credential_env=spec["credential_env"],
                temperature=float(spec.get("temperature", 0.0)),
            )
        except RuntimeError as err:  # unset credential env var
            raise CliError(str(err)) from None
    raise CliError(f"unknown backend kind {kind!r} (expected 'scripted' or 'remote')")


def load_config(path: str | Path) -> RunConfig:
    """Read a run-config JSON file into a RunConfig with live backends."""
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    base_dir = path.parent
    backends = {
        role: _build_backend(spec, base_dir)
        for role, spec in doc.get("backends", {}).items()
    }
    template_dir = doc.get("template_dir")
    if template_dir is not None and not Path(template_dir).is_absolute():
        template_dir = str((base_dir / template_dir).resolve())
    return RunConfig(
        s_max=int(doc.get("s_max", 30)),
        max_replans_per_node=int(doc.get("max_replans_per_node", 3)),
        parser_retry_budget=int(doc.get("parser_retry_budget", 2)),
        history_cap=int(doc.get("history_cap", 30)),
        outcome_keep=int(doc.get("outcome_keep", 3)),
        role_backends=backends,
        environment=doc.get("environment"),
        template_dir=template_dir,
        trace_dir=doc.get("trace_dir"),
        deterministic_clock=bool(doc.get("deterministic_clock", True)),
        parallel_tasks=int(doc.get("parallel_tasks", 1)),
    )


def _collect_instances(tasks_path: str, config: RunConfig) -> list[TaskInstance]:
    path = Path(tasks_path)
    if not path.exists():
        raise CliError(f"tasks path not found: {path}")
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    if not files:
        raise CliError(f"no fixture files under: {path}")
    instances = [load_task_instance(f) for f in files]
    if config.environment:
        instances = [i for i in instances if i.environment == config.environment]
        if not instances:
            raise CliError(
                f"no fixtures for environment {config.environment!r} under {path}"
            )
    return instances


def _single_run(
    method: str, instance: TaskInstance, config: RunConfig, trace_dir: Path
) -> tuple[RunReport, MetricsRecord, Path]:
    if method not in METHODS:
        raise CliError(f"unknown method {method!r}; known: {', '.join(METHODS)}")
    env = make_environment(instance.environment)
    run_id = f"{method}__{instance.id}"
    trace_path = trace_dir / f"{run_id}.jsonl"
    sink = TraceSink(path=trace_path, clock=config.make_clock())
    if method == "tdp":
        report = run_task(instance, env, config, sink=sink, run_id=run_id)
    else:
        report = run_baseline(method, instance, env, config, sink=sink, run_id=run_id)
    record = compute_metrics(
        sink.events_for(run_id), instance.gold, method=method, run_id=run_id
    )
    return report, record, trace_path


def _run_matrix(
    methods: Sequence[str],
    instances: Sequence[TaskInstance],
    config: RunConfig,
    trace_dir: Path,
) -> list[tuple[RunReport, MetricsRecord, Path]]:
    jobs = [(method, instance) for method in methods for instance in instances]
    if config.parallel_tasks > 1:
        with ThreadPoolExecutor(max_workers=config.parallel_tasks) as pool:
            futures = [
                pool.submit(_single_run, method, instance, config, trace_dir)
                for method, instance in jobs
            ]
            return [f.result() for f in futures]
    return [_single_run(method, instance, config, trace_dir) for method, instance in jobs]


def _trace_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    raw = getattr(args, "trace_dir", None) or config.trace_dir or "traces"
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _report_line(report: RunReport) -> str:
    tokens = sum(usage["output_tokens"] for usage in report.role_tokens.values())
    return (
        f"{report.run_id}: {report.terminal} ({report.reason}) "
        f"steps={report.steps_used} delivered={report.delivered} output_tokens={tokens}"
    )


# ---------------------------------------------------------------------------
# commands


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    instances = _collect_instances(args.tasks, config)
    trace_dir = _trace_dir(args, config)
    results = _run_matrix([args.method], instances, config, trace_dir)
    for report, _record, trace_path in results:
        print(_report_line(report))
        print(f"  trace: {trace_path}")
    print(f"completed {len(results)} run(s)")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise CliError("--methods must name at least one method")
    for method in methods:
        if method not in METHODS:
            raise CliError(f"unknown method {method!r}; known: {', '.join(METHODS)}")
    config = load_config(args.config)
    instances = _collect_instances(args.tasks, config)
    trace_dir = _trace_dir(args, config)
    results = _run_matrix(methods, instances, config, trace_dir)
    for report, _record, _path in results:
        print(_report_line(report))
    batches: dict[str, list[MetricsRecord]] = {m: [] for m in methods}
    for _report, record, _path in results:
        batches[record.method].append(record)
    reference = args.reference
    if reference not in batches:
        raise CliError(
            f"reference method {reference!r} is not among --methods {', '.join(methods)}"
        )
    report_obj = compare_report(batches, reference=reference)
    print()
    print(report_obj.format_table())
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    path = Path(args.trace)
    if not path.exists():
        raise CliError(f"trace file not found: {path}")
    headers, events = read_trace(path)
    if not headers:
        raise CliError(f"trace file has no run header: {path}")
    for run_id in sorted(headers):
        meta = headers[run_id].get("meta", {})
        run_events = [e for e in events if e.run_id == run_id]
        record = compute_metrics(
            run_events, meta.get("gold") or {}, method=meta.get("method", ""), run_id=run_id
        )
        print(json.dumps(record.to_dict(), sort_keys=True))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    paths: list[Path] = []
    for pattern in args.traces:
        expanded = [Path(p) for p in sorted(globlib.glob(pattern))]
        if not expanded and Path(pattern).exists():
            expanded = [Path(pattern)]
        if not expanded:
            raise CliError(f"no trace files match: {pattern}")
        paths.extend(expanded)
    batches: dict[str, list[MetricsRecord]] = {}
    for path in paths:
        headers, events = read_trace(path)
        for run_id in sorted(headers):
            meta = headers[run_id].get("meta", {})
            run_events = [e for e in events if e.run_id == run_id]
            record = compute_metrics(
                run_events, meta.get("gold") or {}, method=meta.get("method", ""), run_id=run_id
            )
            batches.setdefault(record.method or "unknown", []).append(record)
    if not batches:
        raise CliError("no runs found in the given traces")
    reference = args.reference or ("plan-act" if "plan-act" in batches else sorted(batches)[0])
    if reference not in batches:
        raise CliError(f"reference method {reference!r} not present in traces")
    print(compare_report(batches, reference=reference).format_table())
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdp",
        description="Run, compare, replay, and report graph-orchestrated agent tasks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one method over a fixture set")
    run_p.add_argument("--method", required=True, choices=METHODS)
    run_p.add_argument("--tasks", required=True, help="fixture file or directory")
    run_p.add_argument("--config", required=True, help="run-config JSON file")
    run_p.add_argument("--trace-dir", default=None, help="where trace files go")
    run_p.set_defaults(handler=_cmd_run)

    cmp_p = sub.add_parser("compare", help="run several methods and tabulate metrics")
    cmp_p.add_argument("--methods", required=True, help="comma-separated method names")
    cmp_p.add_argument("--tasks", required=True)
    cmp_p.add_argument("--config", required=True)
    cmp_p.add_argument("--reference", default="plan-act", help="token-reduction reference")
    cmp_p.add_argument("--trace-dir", default=None)
    cmp_p.set_defaults(handler=_cmd_compare)

    rep_p = sub.add_parser("replay", help="recompute metrics from a trace file")
    rep_p.add_argument("--trace", required=True)
    rep_p.set_defaults(handler=_cmd_replay)

    rpt_p = sub.add_parser("report", help="aggregate existing traces into a table")
    rpt_p.add_argument("--traces", required=True, nargs="+", help="trace files or globs")
    rpt_p.add_argument("--reference", default=None)
    rpt_p.set_defaults(handler=_cmd_report)

    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on bad flags; keep it a return code
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())
