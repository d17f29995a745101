"""Run telemetry: append-only traces, token accounting, metrics, comparisons.

A trace is line-delimited JSON: one versioned header line per run followed by
its events, sequence-numbered contiguously from 0.  Everything needed to
recompute a run's metrics rides inside the trace (gold record included in the
header), so replay never touches a backend or an environment.

The composite ``avg_score`` reported per method is the arithmetic mean over
whichever fraction-valued metrics are defined for that method's runs
(delivery rate, accuracy, delivered accuracy, reward, constraint micro/macro).
"""

from __future__ import annotations

import json
import string
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .roles import TokenUsage

__all__ = [
    "EVENT_KINDS",
    "TraceEvent",
    "TraceError",
    "SequenceError",
    "TraceSink",
    "CounterClock",
    "append_event",
    "read_trace",
    "TokenLedger",
    "MetricsRecord",
    "normalize_answer",
    "compute_metrics",
    "MethodSummary",
    "ComparisonReport",
    "compare_report",
]

TRACE_VERSION = 1

EVENT_KINDS = frozenset(
    {
        "graph_constructed",
        "node_dispatched",
        "role_call",
        "env_step",
        "node_status",
        "replan",
        "revision",
        "run_end",
    }
)


class TraceError(ValueError):
    """Malformed trace input or event."""


class SequenceError(TraceError):
    """An appended event whose sequence number is not last+1 for its run."""


@dataclass(frozen=True)
class TraceEvent:
    run_id: str
    seq: int
    timestamp: float
    kind: str
    payload: dict[str, Any] = field(default_factory=dict)

    def to_line(self) -> str:
        return json.dumps(
            {
                "run_id": self.run_id,
                "seq": self.seq,
                "ts": self.timestamp,
                "kind": self.kind,
                "payload": self.payload,
            },
            sort_keys=True,
        )


class CounterClock:
    """A clock that ticks one unit per read — for bit-reproducible traces."""

    def __init__(self, start: float = 0.0, step: float = 1.0):
        self._next = start
        self._step = step
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            value = self._next
            self._next += self._step
            return value


class TraceSink:
    """Append-only event stream, optionally mirrored to a JSONL file.

    Tolerates concurrent appends from independent runs; each run's events stay
    contiguous by sequence number (gaps are rejected loudly, not repaired).
    """

    def __init__(self, path: str | Path | None = None, clock: Callable[[], float] = time.time):
        self.path = Path(path) if path is not None else None
        self.clock = clock
        self._lock = threading.Lock()
        self._last_seq: dict[str, int] = {}
        self._events: list[TraceEvent] = []
        self._headers: dict[str, dict[str, Any]] = {}
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def begin_run(self, run_id: str, meta: Mapping[str, Any]) -> None:
        with self._lock:
            if run_id in self._headers:
                raise TraceError(f"run {run_id!r} already started in this sink")
            header = {
                "kind": "header",
                "version": TRACE_VERSION,
                "run_id": run_id,
                "meta": dict(meta),
            }
            self._headers[run_id] = header
            self._last_seq[run_id] = -1
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as handle:
                    handle.write(json.dumps(header, sort_keys=True) + "\n")

    def append_event(self, event: TraceEvent) -> int:
        """Append one event; returns its sequence number as acknowledgment."""
        if event.kind not in EVENT_KINDS:
            raise TraceError(f"unknown event kind {event.kind!r}")
        with self._lock:
            if event.run_id not in self._headers:
                raise TraceError(f"run {event.run_id!r} has no header; call begin_run first")
            expected = self._last_seq[event.run_id] + 1
            if event.seq != expected:
                raise SequenceError(
                    f"run {event.run_id!r}: expected seq {expected}, got {event.seq}"
                )
            self._last_seq[event.run_id] = event.seq
            self._events.append(event)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as handle:
                    handle.write(event.to_line() + "\n")
            return event.seq

    def emit(self, run_id: str, kind: str, **payload: Any) -> TraceEvent:
        """Build the next event for `run_id` and append it."""
        with self._lock:
            seq = self._last_seq.get(run_id, -1) + 1
            ts = self.clock()
        event = TraceEvent(run_id=run_id, seq=seq, timestamp=ts, kind=kind, payload=payload)
        self.append_event(event)
        return event

    def events_for(self, run_id: str) -> list[TraceEvent]:
        with self._lock:
            return [e for e in self._events if e.run_id == run_id]

    def header_for(self, run_id: str) -> dict[str, Any]:
        with self._lock:
            return dict(self._headers[run_id])

    def run_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._headers)


def append_event(sink: TraceSink, event: TraceEvent) -> int:
    """Module-level alias for :meth:`TraceSink.append_event`."""
    return sink.append_event(event)


def read_trace(path: str | Path) -> tuple[dict[str, dict[str, Any]], list[TraceEvent]]:
    """Load a trace file back into (headers by run_id, events in file order).

    Re-validates version, event kinds, and per-run sequence contiguity.
    """
    headers: dict[str, dict[str, Any]] = {}
    events: list[TraceEvent] = []
    last_seq: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as err:
                raise TraceError(f"{path}:{line_no}: not JSON: {err}") from None
            if doc.get("kind") == "header":
                if doc.get("version") != TRACE_VERSION:
                    raise TraceError(
                        f"{path}:{line_no}: unsupported trace version {doc.get('version')!r}"
                    )
                headers[doc["run_id"]] = doc
                last_seq[doc["run_id"]] = -1
                continue
            if doc.get("kind") not in EVENT_KINDS:
                raise TraceError(f"{path}:{line_no}: unknown event kind {doc.get('kind')!r}")
            run_id = doc["run_id"]
            if run_id not in headers:
                raise TraceError(f"{path}:{line_no}: event before header for run {run_id!r}")
            expected = last_seq[run_id] + 1
            if doc["seq"] != expected:
                raise SequenceError(
                    f"{path}:{line_no}: run {run_id!r} expected seq {expected}, got {doc['seq']}"
                )
            last_seq[run_id] = doc["seq"]
            events.append(
                TraceEvent(
                    run_id=run_id,
                    seq=doc["seq"],
                    timestamp=doc["ts"],
                    kind=doc["kind"],
                    payload=doc.get("payload", {}),
                )
            )
    return headers, events


# ---------------------------------------------------------------------------
# token accounting


class TokenLedger:
    """Per-(role, scope) token cells; conservation holds by construction.

    Every role call lands in exactly one cell, so the grand total always
    equals the sum over roles and over scopes alike.
    """

    def __init__(self) -> None:
        self._cells: dict[tuple[str, str], TokenUsage] = {}
        self._lock = threading.Lock()

    def record(self, role: str, scope: str, usage: TokenUsage) -> None:
        with self._lock:
            key = (role, scope)
            self._cells[key] = self._cells.get(key, TokenUsage()) + usage

    def role_totals(self) -> dict[str, TokenUsage]:
        with self._lock:
            out: dict[str, TokenUsage] = {}
            for (role, _scope), usage in sorted(self._cells.items()):
                out[role] = out.get(role, TokenUsage()) + usage
            return out

    def scope_totals(self) -> dict[str, TokenUsage]:
        with self._lock:
            out: dict[str, TokenUsage] = {}
            for (_role, scope), usage in sorted(self._cells.items()):
                out[scope] = out.get(scope, TokenUsage()) + usage
            return out

    def total(self) -> TokenUsage:
        with self._lock:
            total = TokenUsage()
            for usage in self._cells.values():
                total = total + usage
            return total

    def to_dict(self) -> dict[str, Any]:
        with self._lock:
            return {
                f"{role}/{scope}": usage.to_dict()
                for (role, scope), usage in sorted(self._cells.items())
            }


# ---------------------------------------------------------------------------
# metrics

_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    lowered = text.casefold().translate(_PUNCT_TABLE)
    words = [w for w in lowered.split() if w not in _ARTICLES]
    return " ".join(words)


@dataclass(frozen=True)
class MetricsRecord:
    """Per-run metrics; ``None`` marks a metric that is undefined for the run."""

    run_id: str
    method: str
    delivery: bool
    accuracy: bool | None
    delivered_accuracy: bool | None
    avg_reward: float | None
    avg_output_tokens: float  # for one run: its total output tokens
    replans_total: int
    nodes_touched_per_replan: float | None
    constraint_micro: float | None = None
    constraint_macro: bool | None = None
    steps_used: int = 0
    terminal: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "method": self.method,
            "delivery": self.delivery,
            "accuracy": self.accuracy,
            "delivered_accuracy": self.delivered_accuracy,
            "avg_reward": self.avg_reward,
            "avg_output_tokens": self.avg_output_tokens,
            "replans_total": self.replans_total,
            "nodes_touched_per_replan": self.nodes_touched_per_replan,
            "constraint_micro": self.constraint_micro,
            "constraint_macro": self.constraint_macro,
            "steps_used": self.steps_used,
            "terminal": self.terminal,
        }


def _check_constraints(plan_text: str, constraints: Sequence[Mapping[str, Any]]) -> tuple[float, bool]:
    satisfied = 0
    for constraint in constraints:
        value = str(constraint["value"])
        present = value.casefold() in plan_text.casefold()
        ok = present if constraint["kind"] == "mentions" else not present
        satisfied += int(ok)
    micro = satisfied / len(constraints)
    return micro, satisfied == len(constraints)


def compute_metrics(
    events: Sequence[TraceEvent],
    gold: Mapping[str, Any] | None = None,
    *,
    method: str = "",
    run_id: str = "",
) -> MetricsRecord:
    """Reduce one run's events (+ its gold record) to a MetricsRecord.

    Pure function of its inputs — this is what both live reporting and
    offline replay call, so the two can be compared for exact equality.
    """
    gold = gold or {}
    run_end = next((e for e in reversed(events) if e.kind == "run_end"), None)
    if run_end is None:
        raise TraceError("run has no run_end event")
    if not run_id:
        run_id = run_end.run_id
    env_metrics = run_end.payload.get("env_metrics", {})

    delivery = bool(run_end.payload.get("delivered", False))

    accuracy: bool | None = None
    gold_answer = gold.get("answer")
    answer = env_metrics.get("answer")
    if gold_answer is not None:
        accuracy = (
            answer is not None
            and normalize_answer(str(answer)) == normalize_answer(str(gold_answer))
        )
    delivered_accuracy = accuracy if (delivery and accuracy is not None) else None

    output_tokens = sum(
        e.payload.get("output_tokens", 0) for e in events if e.kind == "role_call"
    )

    accepted_replans = [
        e for e in events if e.kind == "replan" and e.payload.get("accepted", False)
    ]
    touched = [
        e.payload["nodes_touched"]
        for e in accepted_replans
        if e.payload.get("nodes_touched") is not None
    ]
    nodes_touched = (sum(touched) / len(touched)) if touched else None

    constraint_micro: float | None = None
    constraint_macro: bool | None = None
    constraints = gold.get("constraints")
    if constraints:
        plan_text = env_metrics.get("plan_text") or ""
        if plan_text:
            constraint_micro, constraint_macro = _check_constraints(plan_text, constraints)
        else:
            constraint_micro, constraint_macro = 0.0, False

    return MetricsRecord(
        run_id=run_id,
        method=method or run_end.payload.get("method", ""),
        delivery=delivery,
        accuracy=accuracy,
        delivered_accuracy=delivered_accuracy,
        avg_reward=env_metrics.get("reward"),
        avg_output_tokens=float(output_tokens),
        replans_total=len(accepted_replans),
        nodes_touched_per_replan=nodes_touched,
        constraint_micro=constraint_micro,
        constraint_macro=constraint_macro,
        steps_used=int(run_end.payload.get("steps_used", 0)),
        terminal=str(run_end.payload.get("terminal", "")),
    )


# ---------------------------------------------------------------------------
# comparisons


def _mean(values: Iterable[float]) -> float | None:
    values = list(values)
    if not values:
        return None
    return sum(values) / len(values)


@dataclass(frozen=True)
class MethodSummary:
    method: str
    runs: int
    delivery_rate: float
    accuracy_rate: float | None
    delivered_accuracy_rate: float | None
    avg_reward: float | None
    avg_output_tokens: float
    replans_mean: float
    nodes_touched_mean: float | None
    constraint_micro: float | None
    constraint_macro_rate: float | None
    avg_score: float | None
    token_reduction_vs_reference: float | None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ComparisonReport:
    reference: str
    methods: tuple[MethodSummary, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "reference": self.reference,
            "methods": [m.to_dict() for m in self.methods],
        }

    def format_table(self) -> str:
        headers = [
            "method",
            "runs",
            "delivery",
            "accuracy",
            "deliv_acc",
            "reward",
            "out_tokens",
            "replans",
            "avg_score",
            "tok_reduction",
        ]

        def fmt(value: Any, percent: bool = False) -> str:
            if value is None:
                return "-"
            if isinstance(value, float):
                return f"{value * 100:.1f}%" if percent else f"{value:.2f}"
            return str(value)

        rows = [headers]
        for m in self.methods:
            rows.append(
                [
                    m.method + (" (ref)" if m.method == self.reference else ""),
                    str(m.runs),
                    fmt(m.delivery_rate, percent=True),
                    fmt(m.accuracy_rate, percent=True),
                    fmt(m.delivered_accuracy_rate, percent=True),
                    fmt(m.avg_reward),
                    fmt(m.avg_output_tokens),
                    fmt(m.replans_mean),
                    fmt(m.avg_score, percent=True),
                    fmt(m.token_reduction_vs_reference, percent=True),
                ]
            )
        widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
        lines = []
        for r, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
            if r == 0:
                lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
        return "\n".join(lines)


def _summarize(method: str, records: Sequence[MetricsRecord]) -> dict[str, Any]:
    delivery_rate = _mean(float(r.delivery) for r in records) or 0.0
    accuracy_rate = _mean(float(r.accuracy) for r in records if r.accuracy is not None)
    delivered_accuracy_rate = _mean(
        float(r.delivered_accuracy) for r in records if r.delivered_accuracy is not None
    )
    avg_reward = _mean(r.avg_reward for r in records if r.avg_reward is not None)
    avg_output_tokens = _mean(r.avg_output_tokens for r in records) or 0.0
    replans_mean = _mean(float(r.replans_total) for r in records) or 0.0
    nodes_touched_mean = _mean(
        r.nodes_touched_per_replan for r in records if r.nodes_touched_per_replan is not None
    )
    constraint_micro = _mean(
        r.constraint_micro for r in records if r.constraint_micro is not None
    )
    constraint_macro_rate = _mean(
        float(r.constraint_macro) for r in records if r.constraint_macro is not None
    )
    score_parts = [
        v
        for v in (
            delivery_rate,
            accuracy_rate,
            delivered_accuracy_rate,
            avg_reward,
            constraint_micro,
            constraint_macro_rate,
        )
        if v is not None
    ]
    return {
        "method": method,
        "runs": len(records),
        "delivery_rate": delivery_rate,
        "accuracy_rate": accuracy_rate,
        "delivered_accuracy_rate": delivered_accuracy_rate,
        "avg_reward": avg_reward,
        "avg_output_tokens": avg_output_tokens,
        "replans_mean": replans_mean,
        "nodes_touched_mean": nodes_touched_mean,
        "constraint_micro": constraint_micro,
        "constraint_macro_rate": constraint_macro_rate,
        "avg_score": _mean(score_parts),
    }


def compare_report(
    batches: Mapping[str, Sequence[MetricsRecord]], reference: str = "plan-act"
) -> ComparisonReport:
    """Aggregate per-method batches and compute token reduction vs the reference.

    reduction = 1 - tokens(method) / tokens(reference); e.g. 250 vs 1000 -> 75%.
    """
    if not batches:
        raise TraceError("compare_report needs at least one method batch")
    for method, records in batches.items():
        if not records:
            raise TraceError(f"method {method!r} has an empty batch")
    if reference not in batches:
        raise TraceError(
            f"reference method {reference!r} not among batches: {sorted(batches)}"
        )
    summaries = {method: _summarize(method, records) for method, records in batches.items()}
    ref_tokens = summaries[reference]["avg_output_tokens"]
    methods = []
    for method in sorted(summaries):
        summary = summaries[method]
        reduction = None
        if method != reference and ref_tokens > 0:
            reduction = 1.0 - summary["avg_output_tokens"] / ref_tokens
        methods.append(MethodSummary(token_reduction_vs_reference=reduction, **summary))
    return ComparisonReport(reference=reference, methods=tuple(methods))
