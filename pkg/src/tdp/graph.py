"""Task graph: sub-task nodes, dependency edges, and the operations the engine
runs against them.

The graph is the engine's shared blackboard.  Nodes are planned and executed in
isolation, so everything a downstream consumer may legitimately see is funneled
through :class:`OutcomeSummary` records and :func:`build_node_context`.  All
mutation happens on the engine's single logical control thread; between
mutations a graph value behaves as a snapshot.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

NodeId = str

_GENERATED_ID_RE = re.compile(r"^node_(\d+)$")


class GraphError(ValueError):
    """Base class for graph-level failures."""


class SchedulingError(GraphError):
    """Raised when a node is asked for context before its dependencies finished."""


class NodeStatus(str, Enum):
    """Lifecycle of a sub-task node.

    Legal transitions: Pending -> InProgress, InProgress -> Completed/Failed,
    and InProgress -> InProgress while a node keeps stepping.  Terminal states
    are never left.
    """

    PENDING = "pending"
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"
    FAILED = "failed"

    @property
    def terminal(self) -> bool:
        return self in (NodeStatus.COMPLETED, NodeStatus.FAILED)


_LEGAL_TRANSITIONS: dict[NodeStatus, frozenset[NodeStatus]] = {
    NodeStatus.PENDING: frozenset({NodeStatus.IN_PROGRESS}),
    NodeStatus.IN_PROGRESS: frozenset(
        {NodeStatus.IN_PROGRESS, NodeStatus.COMPLETED, NodeStatus.FAILED}
    ),
    NodeStatus.COMPLETED: frozenset(),
    NodeStatus.FAILED: frozenset(),
}


def legal_transition(old: NodeStatus, new: NodeStatus) -> bool:
    """True when `old -> new` is an allowed status move."""
    return new in _LEGAL_TRANSITIONS[old]


@dataclass(frozen=True)
class TraceEntry:
    """One environment interaction: what was done and what came back.

    ``step_index`` is the run-global interaction counter, so indices are
    strictly increasing within any node's local trace as well.
    """

    step_index: int
    action: str
    observation: str


@dataclass(frozen=True)
class OutcomeSummary:
    """What a finished node hands to its dependents.

    ``summary_text`` must be nonempty for completed nodes; ``key_observations``
    keeps only the last few raw observations (the engine decides how many).
    """

    terminal_status: NodeStatus
    summary_text: str
    key_observations: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.terminal_status.terminal:
            raise GraphError(
                f"outcome recorded for non-terminal status {self.terminal_status.value!r}"
            )
        if self.terminal_status is NodeStatus.COMPLETED and not self.summary_text.strip():
            raise GraphError("completed outcome requires nonempty summary_text")

    def to_dict(self) -> dict[str, Any]:
        return {
            "terminal_status": self.terminal_status.value,
            "summary_text": self.summary_text,
            "key_observations": list(self.key_observations),
        }

    @staticmethod
    def from_dict(doc: Mapping[str, Any]) -> "OutcomeSummary":
        return OutcomeSummary(
            terminal_status=NodeStatus(doc["terminal_status"]),
            summary_text=str(doc["summary_text"]),
            key_observations=tuple(str(o) for o in doc.get("key_observations", [])),
        )


@dataclass
class SubTaskNode:
    """One unit of decomposed work.

    The node's ``plan`` is owned by the planner role and replaced wholesale on
    an accepted replan; ``local_trace`` holds only this node's interactions.
    ``outcome`` is present exactly when the status is terminal.
    """

    id: NodeId
    description: str
    dependencies: set[NodeId] = field(default_factory=set)
    status: NodeStatus = NodeStatus.PENDING
    plan: Any = None  # roles.Plan once planned; kept loose to avoid an import cycle
    local_trace: list[TraceEntry] = field(default_factory=list)
    outcome: OutcomeSummary | None = None
    replan_count: int = 0

    def set_status(self, new: NodeStatus) -> None:
        """Move to `new`, enforcing the lifecycle rules."""
        if not legal_transition(self.status, new):
            raise GraphError(
                f"illegal status transition {self.status.value} -> {new.value} on {self.id!r}"
            )
        self.status = new


@dataclass
class TaskGraph:
    """The full decomposition of one task."""

    task_description: str
    nodes: dict[NodeId, SubTaskNode] = field(default_factory=dict)

    def sorted_ids(self) -> list[NodeId]:
        return sorted(self.nodes)

    def sinks(self) -> list[NodeId]:
        """Nodes nothing depends on, in lexicographic order."""
        depended_on: set[NodeId] = set()
        for node in self.nodes.values():
            depended_on.update(node.dependencies)
        return [nid for nid in self.sorted_ids() if nid not in depended_on]

    def dependents_of(self, node_id: NodeId) -> list[NodeId]:
        return [
            nid
            for nid in self.sorted_ids()
            if node_id in self.nodes[nid].dependencies
        ]


@dataclass(frozen=True)
class RevisionDelta:
    """A proposed between-round edit to the graph.

    ``new_nodes`` entries are (id-or-None, description, dependencies,
    dependents); ``dependents`` wires reverse edges into existing nodes.
    """

    thought: str = ""
    need_update: bool = False
    description_updates: tuple[tuple[NodeId, str], ...] = ()
    new_nodes: tuple["NewNodeSpec", ...] = ()
    remove_nodes: tuple[NodeId, ...] = ()


@dataclass(frozen=True)
class NewNodeSpec:
    id: NodeId | None
    description: str
    dependencies: tuple[NodeId, ...] = ()
    dependents: tuple[NodeId, ...] = ()


@dataclass(frozen=True)
class NodeScopedContext:
    """Everything the planner/executor roles may see while working one node.

    By construction: the node's own description, the outcomes of its direct
    dependencies (in dependency-id order, ids carried alongside for labeling),
    its own local trace, and optional supervisor guidance.  Nothing else.
    """

    subgoal: str
    dependency_ids: tuple[NodeId, ...]
    dependency_outcomes: tuple[OutcomeSummary, ...]
    local_trace: tuple[TraceEntry, ...]
    guidance: str | None = None


# ---------------------------------------------------------------------------
# validation


def _cycle_violations(nodes: Mapping[NodeId, SubTaskNode]) -> list[str]:
    # Kahn peel; whatever survives sits on at least one cycle.
    indeg: dict[NodeId, int] = {}
    dependents: dict[NodeId, list[NodeId]] = {nid: [] for nid in nodes}
    for nid, node in nodes.items():
        deps_in_graph = [d for d in node.dependencies if d in nodes]
        indeg[nid] = len(deps_in_graph)
        for dep in deps_in_graph:
            dependents[dep].append(nid)
    queue = sorted(nid for nid, d in indeg.items() if d == 0)
    seen = 0
    while queue:
        nid = queue.pop()
        seen += 1
        for child in dependents[nid]:
            indeg[child] -= 1
            if indeg[child] == 0:
                queue.append(child)
    if seen == len(nodes):
        return []
    stuck = sorted(nid for nid, d in indeg.items() if d > 0)
    return [f"cycle: nodes {', '.join(stuck)} form or feed a dependency cycle"]


def validate_graph(graph: TaskGraph) -> list[str]:
    """Check every structural rule; return all violations as data (empty = valid).

    Total: never raises on malformed input, just reports.
    """
    violations: list[str] = []
    for nid, node in sorted(graph.nodes.items()):
        if not nid:
            violations.append("id: empty node id")
        if node.id != nid:
            violations.append(f"id: node keyed {nid!r} carries id {node.id!r}")
        if not node.description or not node.description.strip():
            violations.append(f"description: node {nid!r} has an empty description")
        if nid in node.dependencies:
            violations.append(f"cycle: node {nid!r} depends on itself")
        for dep in sorted(node.dependencies):
            if dep not in graph.nodes:
                violations.append(f"dangling: node {nid!r} depends on unknown {dep!r}")
        if node.outcome is not None and not node.status.terminal:
            violations.append(f"outcome: non-terminal node {nid!r} carries an outcome")
        if node.status.terminal and node.outcome is None:
            violations.append(f"outcome: terminal node {nid!r} has no outcome")
    if graph.nodes:
        violations.extend(_cycle_violations(graph.nodes))
        if not graph.sinks():
            violations.append("sink: graph has no sink node")
    else:
        violations.append("empty: graph has no nodes")
    return violations


def ready_nodes(graph: TaskGraph) -> list[NodeId]:
    """Pending nodes whose dependencies are all Completed, lexicographic.

    A failed dependency permanently blocks its dependents (until a revision
    rewires them).
    """
    out: list[NodeId] = []
    for nid in graph.sorted_ids():
        node = graph.nodes[nid]
        if node.status is not NodeStatus.PENDING:
            continue
        if all(
            dep in graph.nodes
            and graph.nodes[dep].status is NodeStatus.COMPLETED
            for dep in node.dependencies
        ):
            out.append(nid)
    return out


def build_node_context(
    graph: TaskGraph, node_id: NodeId, guidance: str | None = None
) -> NodeScopedContext:
    """Assemble the complete — and only — context for working `node_id`."""
    if node_id not in graph.nodes:
        raise SchedulingError(f"unknown node {node_id!r}")
    node = graph.nodes[node_id]
    dep_ids = sorted(node.dependencies)
    outcomes: list[OutcomeSummary] = []
    for dep in dep_ids:
        dep_node = graph.nodes.get(dep)
        if dep_node is None or dep_node.status is not NodeStatus.COMPLETED:
            have = dep_node.status.value if dep_node else "missing"
            raise SchedulingError(
                f"node {node_id!r} scheduled before dependency {dep!r} completed "
                f"(status: {have})"
            )
        assert dep_node.outcome is not None  # terminal ⇒ outcome, enforced above
        outcomes.append(dep_node.outcome)
    return NodeScopedContext(
        subgoal=node.description,
        dependency_ids=tuple(dep_ids),
        dependency_outcomes=tuple(outcomes),
        local_trace=tuple(node.local_trace),
        guidance=guidance,
    )


# ---------------------------------------------------------------------------
# revision


@dataclass(frozen=True)
class RevisionResult:
    """Outcome of applying a delta: the (possibly unchanged) graph plus a verdict."""

    graph: TaskGraph
    status: str  # "applied" | "noop" | "rejected"
    reasons: tuple[str, ...] = ()

    @property
    def applied(self) -> bool:
        return self.status == "applied"


def next_generated_id(existing: Iterable[NodeId]) -> NodeId:
    """`node_<n+1>` where n is the largest numeric suffix already in use (0 if none)."""
    best = 0
    for nid in existing:
        m = _GENERATED_ID_RE.match(nid)
        if m:
            best = max(best, int(m.group(1)))
    return f"node_{best + 1}"


def apply_revision(graph: TaskGraph, delta: RevisionDelta) -> RevisionResult:
    """Apply a revision atomically.

    Either every edit in the delta lands and the result validates, or the
    original graph object is returned untouched with the rejection reasons.
    Terminal nodes may be removed but never rewritten or resurrected.
    """
    if not delta.need_update:
        return RevisionResult(graph=graph, status="noop")

    reasons: list[str] = []
    work = copy.deepcopy(graph)

    for node_id, new_description in delta.description_updates:
        node = work.nodes.get(node_id)
        if node is None:
            reasons.append(f"update: unknown node {node_id!r}")
        elif node.status.terminal:
            reasons.append(f"update: node {node_id!r} is terminal and cannot be rewritten")
        elif not new_description.strip():
            reasons.append(f"update: empty description for node {node_id!r}")
        else:
            node.description = new_description

    removed_terminal: set[NodeId] = set()
    for node_id in delta.remove_nodes:
        if node_id not in work.nodes:
            reasons.append(f"remove: unknown node {node_id!r}")
            continue
        if work.nodes[node_id].status.terminal:
            removed_terminal.add(node_id)
        del work.nodes[node_id]
        for other in work.nodes.values():
            other.dependencies.discard(node_id)

    for spec in delta.new_nodes:
        nid = spec.id if spec.id else next_generated_id(work.nodes)
        if nid in work.nodes:
            reasons.append(f"add: id {nid!r} already exists")
            continue
        if nid in removed_terminal:
            reasons.append(f"add: id {nid!r} would resurrect a terminal node removed above")
            continue
        if not spec.description.strip():
            reasons.append(f"add: empty description for node {nid!r}")
            continue
        work.nodes[nid] = SubTaskNode(
            id=nid,
            description=spec.description,
            dependencies=set(spec.dependencies),
        )
        for dependent in spec.dependents:
            target = work.nodes.get(dependent)
            if target is None:
                reasons.append(f"add: node {nid!r} lists unknown dependent {dependent!r}")
            elif target.status.terminal:
                reasons.append(
                    f"add: node {nid!r} cannot become a dependency of terminal {dependent!r}"
                )
            else:
                target.dependencies.add(nid)

    if reasons:
        return RevisionResult(graph=graph, status="rejected", reasons=tuple(reasons))

    violations = validate_graph(work)
    if violations:
        return RevisionResult(graph=graph, status="rejected", reasons=tuple(violations))
    return RevisionResult(graph=work, status="applied")


# ---------------------------------------------------------------------------
# rendering + serialization


def render_dag_state(graph: TaskGraph) -> str:
    """Deterministic one-line-per-node view handed to the revision prompt."""
    lines = []
    for nid in graph.sorted_ids():
        node = graph.nodes[nid]
        deps = ", ".join(sorted(node.dependencies)) or "none"
        lines.append(f"- {nid} [{node.status.value}] (deps: {deps}): {node.description}")
    return "\n".join(lines) if lines else "(empty graph)"


def graph_to_doc(graph: TaskGraph) -> dict[str, Any]:
    """JSON-ready document; mirrors the construction schema plus status fields."""
    subgoals = []
    for nid in graph.sorted_ids():
        node = graph.nodes[nid]
        subgoals.append(
            {
                "id": nid,
                "description": node.description,
                "dependencies": sorted(node.dependencies),
                "status": node.status.value,
                "outcome": node.outcome.to_dict() if node.outcome else None,
                "replan_count": node.replan_count,
            }
        )
    return {
        "version": 1,
        "task_description": graph.task_description,
        "subgoals": subgoals,
    }


def graph_to_json(graph: TaskGraph) -> str:
    return json.dumps(graph_to_doc(graph), sort_keys=True)


def graph_from_doc(doc: Mapping[str, Any]) -> TaskGraph:
    """Inverse of :func:`graph_to_doc`; strict about shape, silent on extras."""
    if not isinstance(doc, Mapping):
        raise GraphError("graph document must be an object")
    entries = doc.get("subgoals")
    if not isinstance(entries, Sequence) or isinstance(entries, (str, bytes)):
        raise GraphError("graph document missing 'subgoals' list")
    graph = TaskGraph(task_description=str(doc.get("task_description", "")))
    for entry in entries:
        nid = str(entry["id"])
        if nid in graph.nodes:
            raise GraphError(f"duplicate node id {nid!r} in document")
        outcome_doc = entry.get("outcome")
        node = SubTaskNode(
            id=nid,
            description=str(entry["description"]),
            dependencies={str(d) for d in entry.get("dependencies", [])},
            status=NodeStatus(entry.get("status", "pending")),
            outcome=OutcomeSummary.from_dict(outcome_doc) if outcome_doc else None,
            replan_count=int(entry.get("replan_count", 0)),
        )
        graph.nodes[nid] = node
    return graph


def graph_from_json(text: str) -> TaskGraph:
    return graph_from_doc(json.loads(text))


__all__ = [
    "NodeId",
    "GraphError",
    "SchedulingError",
    "NodeStatus",
    "legal_transition",
    "TraceEntry",
    "OutcomeSummary",
    "SubTaskNode",
    "TaskGraph",
    "RevisionDelta",
    "NewNodeSpec",
    "NodeScopedContext",
    "RevisionResult",
    "validate_graph",
    "ready_nodes",
    "build_node_context",
    "apply_revision",
    "next_generated_id",
    "render_dag_state",
    "graph_to_doc",
    "graph_to_json",
    "graph_from_doc",
    "graph_from_json",
]
