"""Role plumbing: prompt templates, structured-output parsers, and model backends.

Each agent role (supervisor, planner, executor) is a prompt template plus a
parser over the model's raw reply.  All parsing is strict — silent coercion of
a malformed reply into a default would hide model drift, so every defect is a
:class:`ParseFault` and the bounded retry loop in :func:`call_role` decides
what happens next.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .graph import NewNodeSpec, RevisionDelta

__all__ = [
    "ParseFault",
    "RenderFault",
    "RoleFault",
    "TokenUsage",
    "Completion",
    "PromptTemplate",
    "TEMPLATE_PLACEHOLDERS",
    "load_template",
    "load_templates",
    "render_prompt",
    "extract_json",
    "SubgoalSpec",
    "parse_subgoals",
    "PlanStep",
    "Plan",
    "parse_plan",
    "render_plan",
    "Evaluation",
    "parse_evaluation",
    "ReplanDecision",
    "parse_replan",
    "parse_revision",
    "extract_action",
    "ModelBackend",
    "ScriptedBackend",
    "ScriptRule",
    "RemoteChatBackend",
    "call_role",
    "FORMAT_REMINDER",
]


class ParseFault(ValueError):
    """A model reply that does not satisfy the expected output contract."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class RenderFault(ValueError):
    """A template rendered without a required placeholder binding."""


class RoleFault(RuntimeError):
    """A role call whose retry budget ran out; carries the last raw reply."""

    def __init__(self, message: str, raw_text: str, usage: "TokenUsage", attempts: int):
        super().__init__(message)
        self.raw_text = raw_text
        self.usage = usage
        self.attempts = attempts


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    output_tokens: int = 0

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            prompt_tokens=self.prompt_tokens + other.prompt_tokens,
            output_tokens=self.output_tokens + other.output_tokens,
        )

    def to_dict(self) -> dict[str, int]:
        return {"prompt_tokens": self.prompt_tokens, "output_tokens": self.output_tokens}


@dataclass(frozen=True)
class Completion:
    """One raw model reply plus its token accounting."""

    text: str
    usage: TokenUsage


# ---------------------------------------------------------------------------
# templates

#: Exact placeholder set each template must carry — no more, no fewer.
TEMPLATE_PLACEHOLDERS: dict[str, frozenset[str]] = {
    "construct": frozenset({"task_description", "admissible_commands"}),
    "plan": frozenset(
        {"task_description", "nodes_description", "admissible_commands", "history"}
    ),
    "execute": frozenset(
        {
            "task_description",
            "subgoal",
            "plan",
            "guidance",
            "admissible_commands",
            "history",
        }
    ),
    "evaluate": frozenset(
        {"task_description", "subgoal", "current_plan", "admissible_commands", "history"}
    ),
    "replan": frozenset(
        {
            "task_description",
            "subgoal",
            "current_plan",
            "reason",
            "admissible_commands",
            "history",
        }
    ),
    "revise": frozenset(
        {"task_description", "current_step", "history", "dag_state", "admissible_commands"}
    ),
    "react": frozenset({"task_description", "admissible_commands", "history"}),
}

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    """A named template body with a declared placeholder set."""

    name: str
    body: str
    placeholders: frozenset[str]

    def found_placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.body))


def _check_template(template: PromptTemplate) -> PromptTemplate:
    found = template.found_placeholders()
    if found != template.placeholders:
        missing = sorted(template.placeholders - found)
        extra = sorted(found - template.placeholders)
        raise RenderFault(
            f"template {template.name!r} placeholder mismatch"
            + (f"; missing: {missing}" if missing else "")
            + (f"; undeclared: {extra}" if extra else "")
        )
    return template


def load_template(name: str, template_dir: str | Path | None = None) -> PromptTemplate:
    """Load one template by name, from `template_dir` if given else the built-ins."""
    if name not in TEMPLATE_PLACEHOLDERS:
        raise KeyError(f"unknown template {name!r}")
    if template_dir is not None:
        path = Path(template_dir) / f"{name}.txt"
        body = path.read_text(encoding="utf-8")
    else:
        body = (resources.files("tdp") / "templates" / f"{name}.txt").read_text(
            encoding="utf-8"
        )
    return _check_template(
        PromptTemplate(name=name, body=body, placeholders=TEMPLATE_PLACEHOLDERS[name])
    )


def load_templates(template_dir: str | Path | None = None) -> dict[str, PromptTemplate]:
    return {name: load_template(name, template_dir) for name in sorted(TEMPLATE_PLACEHOLDERS)}


def render_prompt(template: PromptTemplate, bindings: Mapping[str, Any]) -> str:
    """Substitute bindings into the template in one pass.

    Values are inserted verbatim and never re-scanned, so a binding containing
    brace text cannot smuggle in another expansion.  ``None`` renders as the
    literal string "None".  A declared placeholder without a binding is a
    :class:`RenderFault` naming the placeholder.
    """
    missing = sorted(template.placeholders - set(bindings))
    if missing:
        raise RenderFault(
            f"template {template.name!r} missing binding(s): {', '.join(missing)}"
        )

    def _sub(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in template.placeholders:
            return match.group(0)  # literal text that merely looks like a placeholder
        value = bindings[name]
        return "None" if value is None else str(value)

    return _PLACEHOLDER_RE.sub(_sub, template.body)


# ---------------------------------------------------------------------------
# reply parsing

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*$")


def _strip_fences(text: str) -> str:
    lines = [line for line in text.splitlines() if not _FENCE_RE.match(line)]
    return "\n".join(lines)


def extract_json(text: str) -> dict[str, Any]:
    """Pull the first balanced top-level JSON object out of a noisy reply.

    Code fences and surrounding prose are tolerated; the inside of the object
    must be strict JSON.
    """
    cleaned = _strip_fences(text)
    decoder = json.JSONDecoder()
    idx = cleaned.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(cleaned, idx)
        except json.JSONDecodeError:
            idx = cleaned.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = cleaned.find("{", idx + 1)
    raise ParseFault("no JSON object found in reply", raw_text=text)


def _require(doc: Mapping[str, Any], key: str, raw: str) -> Any:
    if key not in doc:
        raise ParseFault(f"missing required field {key!r}", raw_text=raw)
    return doc[key]


def _as_bool(value: Any, key: str, raw: str) -> bool:
    if isinstance(value, bool):
        return value
    raise ParseFault(f"field {key!r} must be a JSON boolean, got {value!r}", raw_text=raw)


def _as_str_list(value: Any, key: str, raw: str) -> list[str]:
    if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
        raise ParseFault(f"field {key!r} must be a list of strings", raw_text=raw)
    return list(value)


@dataclass(frozen=True)
class SubgoalSpec:
    """One node of a proposed decomposition, before it becomes a graph node."""

    id: str
    description: str
    dependencies: tuple[str, ...]


def parse_subgoals(text: str) -> list[SubgoalSpec]:
    """Parse a decomposition reply: ``{"subgoals": [{id, description, dependencies}]}``.

    Rejects an empty decomposition, duplicate ids, and dependency references
    to ids not present in the same reply (the offending name is reported).
    """
    doc = extract_json(text)
    entries = _require(doc, "subgoals", text)
    if not isinstance(entries, list):
        raise ParseFault("'subgoals' must be a list", raw_text=text)
    if not entries:
        raise ParseFault("empty decomposition: 'subgoals' has no entries", raw_text=text)
    specs: list[SubgoalSpec] = []
    seen: set[str] = set()
    for entry in entries:
        if not isinstance(entry, Mapping):
            raise ParseFault("each subgoal must be an object", raw_text=text)
        sid = _require(entry, "id", text)
        desc = _require(entry, "description", text)
        if not isinstance(sid, str) or not sid.strip():
            raise ParseFault(f"subgoal id must be a nonempty string, got {sid!r}", raw_text=text)
        if not isinstance(desc, str) or not desc.strip():
            raise ParseFault(f"subgoal {sid!r} has an empty description", raw_text=text)
        if sid in seen:
            raise ParseFault(f"duplicate subgoal id {sid!r}", raw_text=text)
        seen.add(sid)
        deps = _as_str_list(entry.get("dependencies", []), "dependencies", text)
        specs.append(SubgoalSpec(id=sid, description=desc, dependencies=tuple(deps)))
    ids = {s.id for s in specs}
    for spec in specs:
        for dep in spec.dependencies:
            if dep not in ids:
                raise ParseFault(
                    f"subgoal {spec.id!r} references unknown dependency {dep!r}",
                    raw_text=text,
                )
    return specs


@dataclass(frozen=True)
class PlanStep:
    index: int
    reasoning: str
    step_text: str


@dataclass(frozen=True)
class Plan:
    """An ordered, contiguously numbered list of plan steps (1..n)."""

    steps: tuple[PlanStep, ...]

    def __post_init__(self) -> None:
        for pos, step in enumerate(self.steps, start=1):
            if step.index != pos:
                raise ParseFault(
                    f"plan steps must be numbered 1..n contiguously; "
                    f"step at position {pos} is numbered {step.index}"
                )
            if not step.step_text.strip():
                raise ParseFault(f"plan step {step.index} has empty step text")


_STEP_HEADER_RE = re.compile(r"^##\s*Step\s+(\d+)\s*$", re.MULTILINE)


def parse_plan(text: str) -> Plan:
    """Parse the ``## Step N`` / ``Reasoning:`` / ``Step:`` plan format.

    Missing headers, non-contiguous numbering, or a block without its
    ``Step:`` line are parse faults.  ``Reasoning:`` is tolerated when absent;
    step text may span lines up to the next header.
    """
    cleaned = _strip_fences(text)
    headers = list(_STEP_HEADER_RE.finditer(cleaned))
    if not headers:
        raise ParseFault("no '## Step N' headers found in plan", raw_text=text)
    steps: list[PlanStep] = []
    for i, match in enumerate(headers):
        number = int(match.group(1))
        block_end = headers[i + 1].start() if i + 1 < len(headers) else len(cleaned)
        block = cleaned[match.end() : block_end]
        step_match = re.search(r"^Step:\s*(.*)$", block, re.MULTILINE | re.DOTALL)
        if not step_match:
            raise ParseFault(f"plan step {number} has no 'Step:' line", raw_text=text)
        reasoning_match = re.search(r"^Reasoning:\s*(.*?)^Step:", block, re.MULTILINE | re.DOTALL)
        reasoning = reasoning_match.group(1).strip() if reasoning_match else ""
        step_text = step_match.group(1).strip()
        if not step_text:
            raise ParseFault(f"plan step {number} has empty step text", raw_text=text)
        steps.append(PlanStep(index=number, reasoning=reasoning, step_text=step_text))
    try:
        return Plan(steps=tuple(steps))
    except ParseFault as fault:
        raise ParseFault(str(fault), raw_text=text) from None


def render_plan(plan: Plan) -> str:
    """Inverse of :func:`parse_plan` for well-formed plans."""
    blocks = []
    for step in plan.steps:
        blocks.append(f"## Step {step.index}\nReasoning: {step.reasoning}\nStep: {step.step_text}")
    return "\n".join(blocks)


_EVAL_STATUSES = frozenset({"completed", "failed", "needs_more_steps"})


@dataclass(frozen=True)
class Evaluation:
    """Supervisor verdict on the current sub-goal after the latest step."""

    status: str  # completed | failed | needs_more_steps
    reason: str | None
    need_replan: bool


def parse_evaluation(text: str) -> Evaluation:
    doc = extract_json(text)
    status = _require(doc, "status", text)
    if status not in _EVAL_STATUSES:
        raise ParseFault(
            f"status must be one of {sorted(_EVAL_STATUSES)}, got {status!r}", raw_text=text
        )
    need_replan = _as_bool(_require(doc, "need_replan", text), "need_replan", text)
    reason = doc.get("reason")
    if reason is not None and not isinstance(reason, str):
        raise ParseFault("'reason' must be a string or null", raw_text=text)
    if status == "needs_more_steps" and not need_replan and not (reason or "").strip():
        raise ParseFault(
            "status 'needs_more_steps' without replanning requires guidance in 'reason'",
            raw_text=text,
        )
    return Evaluation(status=status, reason=reason, need_replan=need_replan)


@dataclass(frozen=True)
class ReplanDecision:
    """Planner's answer to a replan proposal: keep the plan or replace it."""

    replan: bool
    thought: str | None
    new_plan: Plan | None


def parse_replan(text: str) -> ReplanDecision:
    doc = extract_json(text)
    replan = _as_bool(_require(doc, "RePlan", text), "RePlan", text)
    thought = doc.get("Thought")
    if thought is not None and not isinstance(thought, str):
        raise ParseFault("'Thought' must be a string or null", raw_text=text)
    raw_plan = doc.get("NewPlan")
    if replan:
        if not isinstance(raw_plan, str) or not raw_plan.strip():
            raise ParseFault("RePlan is true but 'NewPlan' is missing or empty", raw_text=text)
        new_plan = parse_plan(raw_plan)
    else:
        if raw_plan not in (None, ""):
            raise ParseFault("RePlan is false but 'NewPlan' is present", raw_text=text)
        new_plan = None
    return ReplanDecision(replan=replan, thought=thought, new_plan=new_plan)


def parse_revision(text: str) -> RevisionDelta:
    """Parse a graph-update reply into a :class:`~tdp.graph.RevisionDelta`.

    Unknown top-level fields are ignored; list fields default to empty.
    """
    doc = extract_json(text)
    need_update = _as_bool(_require(doc, "need_update", text), "need_update", text)
    thought = doc.get("thought", "")
    if not isinstance(thought, str):
        raise ParseFault("'thought' must be a string", raw_text=text)

    updates: list[tuple[str, str]] = []
    for entry in doc.get("description_updates") or []:
        if not isinstance(entry, Mapping):
            raise ParseFault("each description update must be an object", raw_text=text)
        node_id = _require(entry, "node_id", text)
        new_description = _require(entry, "new_description", text)
        if not isinstance(node_id, str) or not isinstance(new_description, str):
            raise ParseFault("description updates need string node_id/new_description", raw_text=text)
        updates.append((node_id, new_description))

    new_nodes: list[NewNodeSpec] = []
    for entry in doc.get("new_nodes") or []:
        if not isinstance(entry, Mapping):
            raise ParseFault("each new node must be an object", raw_text=text)
        raw_id = entry.get("id")
        if raw_id is not None and (not isinstance(raw_id, str) or not raw_id.strip()):
            raise ParseFault("new node 'id' must be a nonempty string when present", raw_text=text)
        description = _require(entry, "description", text)
        if not isinstance(description, str):
            raise ParseFault("new node 'description' must be a string", raw_text=text)
        deps = _as_str_list(entry.get("dependencies", []), "dependencies", text)
        dependents = _as_str_list(entry.get("dependents", []), "dependents", text)
        new_nodes.append(
            NewNodeSpec(
                id=raw_id,
                description=description,
                dependencies=tuple(deps),
                dependents=tuple(dependents),
            )
        )

    remove_nodes = _as_str_list(doc.get("remove_nodes", []) or [], "remove_nodes", text)
    return RevisionDelta(
        thought=thought,
        need_update=need_update,
        description_updates=tuple(updates),
        new_nodes=tuple(new_nodes),
        remove_nodes=tuple(remove_nodes),
    )


_WRAPPING_QUOTES = ('"', "'", "`")


def extract_action(text: str) -> str:
    """The executor's reply, taken verbatim after trimming.

    Strips surrounding whitespace, one wrapping code fence, and one matched
    pair of wrapping quotes.  An empty result is a parse fault — the executor
    must always emit an action.
    """
    action = _strip_fences(text).strip()
    if (
        len(action) >= 2
        and action[0] == action[-1]
        and action[0] in _WRAPPING_QUOTES
    ):
        action = action[1:-1].strip()
    if not action:
        raise ParseFault("executor reply contains no action", raw_text=text)
    return action


# ---------------------------------------------------------------------------
# backends

FORMAT_REMINDER = (
    "Format reminder: the previous reply could not be parsed; "
    "follow the required output format exactly."
)


class ModelBackend:
    """Interface every model backend satisfies.

    ``complete`` must tolerate concurrent calls from independent runs.
    """

    def complete(self, role_tag: str, prompt: str) -> Completion:  # pragma: no cover
        raise NotImplementedError


def _whitespace_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class ScriptRule:
    """One scripted reply: fires when every `match` string appears in the prompt.

    ``responses`` is indexed by the number of retry-reminder lines present in
    the prompt (clamped to the last entry), which keeps the backend a pure
    function of the prompt while letting retry scenarios script distinct
    replies per attempt.  ``role`` restricts the rule to one role tag.
    """

    match: tuple[str, ...]
    responses: tuple[str, ...]
    role: str | None = None
    regex: bool = False

    def matches(self, role_tag: str, prompt: str) -> bool:
        if self.role is not None and self.role != role_tag:
            return False
        if self.regex:
            return all(re.search(pattern, prompt) for pattern in self.match)
        return all(needle in prompt for needle in self.match)


class ScriptedBackend(ModelBackend):
    """Deterministic pattern -> response backend for tests and offline runs.

    First matching rule wins.  Identical (role_tag, prompt) pairs always yield
    identical completions; the `calls` log records every request for test
    introspection without affecting behavior.
    """

    def __init__(self, rules: Sequence[ScriptRule | Mapping[str, Any]]):
        self.rules: list[ScriptRule] = [
            rule if isinstance(rule, ScriptRule) else self._rule_from_mapping(rule)
            for rule in rules
        ]
        self.calls: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    @staticmethod
    def _rule_from_mapping(doc: Mapping[str, Any]) -> ScriptRule:
        raw_match = doc.get("match", "")
        match = (raw_match,) if isinstance(raw_match, str) else tuple(raw_match)
        raw_responses = doc["responses"]
        responses = (
            (raw_responses,) if isinstance(raw_responses, str) else tuple(raw_responses)
        )
        if not responses:
            raise ValueError("script rule needs at least one response")
        return ScriptRule(
            match=match,
            responses=responses,
            role=doc.get("role"),
            regex=bool(doc.get("regex", False)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        with open(path, "r", encoding="utf-8") as handle:
            rules = json.load(handle)
        if not isinstance(rules, list):
            raise ValueError(f"script file {path} must hold a JSON list of rules")
        return cls(rules)

    def complete(self, role_tag: str, prompt: str) -> Completion:
        with self._lock:
            self.calls.append((role_tag, prompt))
        attempt = prompt.count(FORMAT_REMINDER)
        for rule in self.rules:
            if rule.matches(role_tag, prompt):
                text = rule.responses[min(attempt, len(rule.responses) - 1)]
                usage = TokenUsage(
                    prompt_tokens=_whitespace_tokens(prompt),
                    output_tokens=_whitespace_tokens(text),
                )
                return Completion(text=text, usage=usage)
        raise LookupError(
            f"no scripted rule matches role {role_tag!r}; prompt starts: {prompt[:120]!r}"
        )


class RemoteChatBackend(ModelBackend):
    """Chat-completions HTTP backend.

    The API key is read from the environment variable named in the
    configuration — never stored in config files.  Construction fails fast
    when the variable is unset so no run starts half-credentialed.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        credential_env: str,
        temperature: float = 0.0,
        timeout: float = 120.0,
    ):
        key = os.environ.get(credential_env, "")
        if not key:
            raise RuntimeError(
                f"remote backend refused: environment variable {credential_env!r} is not set"
            )
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.timeout = timeout
        self._key = key

    def complete(self, role_tag: str, prompt: str) -> Completion:
        import requests

        response = requests.post(
            self.endpoint,
            headers={
                "Authorization": f"Bearer {self._key}",
                "Content-Type": "application/json",
            },
            json={
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": self.temperature,
            },
            timeout=self.timeout,
        )
        response.raise_for_status()
        doc = response.json()
        text = doc["choices"][0]["message"]["content"]
        usage = doc.get("usage", {})
        return Completion(
            text=text,
            usage=TokenUsage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                output_tokens=int(usage.get("completion_tokens", 0)),
            ),
        )


# ---------------------------------------------------------------------------
# the role-call loop


def call_role(
    backend: ModelBackend,
    template: PromptTemplate,
    bindings: Mapping[str, Any],
    parser: Callable[[str], Any],
    retry_budget: int = 2,
    role_tag: str | None = None,
) -> tuple[Any, TokenUsage, int]:
    """Render, complete, parse — with a bounded parse-retry loop.

    Each retry re-sends the prompt with one more reminder line appended, so
    every attempt is a distinct prompt.  Returns (value, usage summed over all
    attempts, attempts made).  When the budget runs out the accumulated usage
    travels on the :class:`RoleFault`.
    """
    prompt = render_prompt(template, bindings)
    tag = role_tag or template.name
    usage = TokenUsage()
    attempts = 0
    last_text = ""
    last_error = "no attempts made"
    max_attempts = 1 + max(0, retry_budget)
    for _ in range(max_attempts):
        attempts += 1
        completion = backend.complete(tag, prompt)
        usage = usage + completion.usage
        last_text = completion.text
        try:
            return parser(completion.text), usage, attempts
        except ParseFault as fault:
            last_error = str(fault)
            prompt = prompt + "\n" + FORMAT_REMINDER
    raise RoleFault(
        f"role {tag!r} failed after {attempts} attempt(s): {last_error}",
        raw_text=last_text,
        usage=usage,
        attempts=attempts,
    )
