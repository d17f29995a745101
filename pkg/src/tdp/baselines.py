"""Reference agent loops for cost/quality comparison.

All three baselines share the engine's backends, budgets, and telemetry, and
reuse its prompt templates with whole-task bindings wherever the shape allows,
so the comparison isolates orchestration strategy rather than prompt wording:

* ReAct     — a single role; every step sees the full accumulated history.
* CoT       — one up-front plan, executed step-for-step, never revised.
* Plan-and-Act — a global plan; an evaluator may trigger regeneration of the
  whole plan with the full history in the prompt (the global-replan scope the
  node-scoped engine is measured against).
"""

from __future__ import annotations

import re
from enum import Enum
from typing import Any, Callable

from .engine import (
    NO_ACTIONS_YET,
    RunConfig,
    RunReport,
    StepCounter,
    assemble_history,
    call_and_record,
    format_commands,
)
from .environments import Environment, TaskInstance
from .graph import TraceEntry
from .roles import (
    ParseFault,
    Plan,
    RoleFault,
    extract_action,
    load_templates,
    parse_evaluation,
    parse_plan,
    parse_replan,
    render_plan,
)
from .telemetry import TokenLedger, TraceSink

__all__ = [
    "BaselineKind",
    "parse_react",
    "run_react",
    "run_cot",
    "run_plan_and_act",
    "run_baseline",
    "BASELINES",
]


class BaselineKind(str, Enum):
    REACT = "react"
    COT = "cot"
    PLAN_AND_ACT = "plan-act"


_ACTION_LINE_RE = re.compile(r"^Action:\s*(.+)$", re.MULTILINE)
_THOUGHT_LINE_RE = re.compile(r"^Thought:\s*(.+)$", re.MULTILINE)


def parse_react(text: str) -> tuple[str, str]:
    """(thought, action) from a think-then-act reply; the Action line is required."""
    action_match = _ACTION_LINE_RE.search(text)
    if not action_match:
        raise ParseFault("reply has no 'Action:' line", raw_text=text)
    action = extract_action(action_match.group(1))
    thought_match = _THOUGHT_LINE_RE.search(text)
    thought = thought_match.group(1).strip() if thought_match else ""
    return thought, action


def _full_history(trace: list[TraceEntry]) -> str:
    # Deliberately uncapped: these baselines carry everything, every step.
    if not trace:
        return NO_ACTIONS_YET
    return "\n".join(f"Action: {e.action}\nObservation: {e.observation}" for e in trace)


class _BaselineRun:
    """Shared scaffolding: reset, trace, events, and the final report."""

    def __init__(
        self,
        method: str,
        instance: TaskInstance,
        env: Environment,
        config: RunConfig,
        sink: TraceSink | None,
        run_id: str | None,
    ):
        self.method = method
        self.instance = instance
        self.env = env
        self.config = config
        self.run_id = run_id or f"{method}__{instance.id}"
        self.sink = sink if sink is not None else TraceSink(clock=config.make_clock())
        self.templates = load_templates(config.template_dir)
        self.ledger = TokenLedger()
        self.steps = StepCounter(used=0, limit=config.s_max)
        self.trace: list[TraceEntry] = []
        env.reset(instance)
        self.commands = format_commands(env)
        self.sink.begin_run(
            self.run_id,
            meta={
                "method": method,
                "task_id": instance.id,
                "environment": instance.environment,
                "query": instance.query,
                "gold": dict(instance.gold),
                "s_max": config.s_max,
            },
        )

    def call(
        self, role: str, template_name: str, bindings: dict[str, Any], parser: Callable[[str], Any]
    ) -> Any:
        return call_and_record(
            role,
            self.templates[template_name],
            bindings,
            parser,
            scope="global",
            config=self.config,
            ledger=self.ledger,
            sink=self.sink,
            run_id=self.run_id,
        )

    def act(self, action: str) -> None:
        result = self.env.step(action)
        index = self.steps.next_index()
        entry = TraceEntry(step_index=index, action=action, observation=result.observation)
        self.trace.append(entry)
        self.sink.emit(
            self.run_id,
            "env_step",
            step_index=index,
            action=action,
            observation=result.observation,
            reward_delta=result.reward_delta,
            done=result.done,
            scope="global",
        )

    def finish(self, terminal: str, reason: str) -> RunReport:
        env_metrics = self.env.metrics()
        delivered = bool(env_metrics.get("delivered", False))
        role_tokens = {
            role: usage.to_dict() for role, usage in self.ledger.role_totals().items()
        }
        self.sink.emit(
            self.run_id,
            "run_end",
            terminal=terminal,
            reason=reason,
            steps_used=self.steps.used,
            delivered=delivered,
            method=self.method,
            env_metrics=env_metrics,
            node_records={},
            role_tokens=role_tokens,
        )
        return RunReport(
            run_id=self.run_id,
            method=self.method,
            terminal=terminal,
            reason=reason,
            steps_used=self.steps.used,
            node_records={},
            role_tokens=role_tokens,
            env_metrics=env_metrics,
            delivered=delivered,
        )


def run_react(
    instance: TaskInstance,
    env: Environment,
    config: RunConfig,
    *,
    sink: TraceSink | None = None,
    run_id: str | None = None,
) -> RunReport:
    """Interleaved think/act loop; one role, full history in every prompt."""
    config.require_roles("executor")
    run = _BaselineRun("react", instance, env, config, sink, run_id)
    while True:
        if env.done:
            return run.finish("Completed", "task done")
        if run.steps.exhausted():
            return run.finish("Terminated", "step budget exhausted")
        try:
            _thought, action = run.call(
                "executor",
                "react",
                {
                    "task_description": instance.query,
                    "admissible_commands": run.commands,
                    "history": _full_history(run.trace),
                },
                parse_react,
            )
        except RoleFault as fault:
            return run.finish("Terminated", f"role fault: {fault}")
        run.act(action)


def run_cot(
    instance: TaskInstance,
    env: Environment,
    config: RunConfig,
    *,
    sink: TraceSink | None = None,
    run_id: str | None = None,
) -> RunReport:
    """One up-front plan, executed step-for-step; the plan is never revised.

    The planner is consulted exactly once; if the plan runs out before the
    environment reports done, the run terminates with a plan-exhausted record.
    """
    config.require_roles("planner", "executor")
    run = _BaselineRun("cot", instance, env, config, sink, run_id)
    try:
        plan: Plan = run.call(
            "planner",
            "plan",
            {
                "task_description": instance.query,
                "nodes_description": instance.query,
                "admissible_commands": run.commands,
                "history": NO_ACTIONS_YET,
            },
            parse_plan,
        )
    except RoleFault as fault:
        return run.finish("Terminated", f"role fault: {fault}")

    for _step in plan.steps:
        if env.done:
            break
        if run.steps.exhausted():
            return run.finish("Terminated", "step budget exhausted")
        try:
            action = run.call(
                "executor",
                "execute",
                {
                    "task_description": instance.query,
                    "subgoal": instance.query,
                    "plan": render_plan(plan),
                    "guidance": None,
                    "admissible_commands": run.commands,
                    "history": _full_history(run.trace),
                },
                extract_action,
            )
        except RoleFault as fault:
            return run.finish("Terminated", f"role fault: {fault}")
        run.act(action)

    if env.done:
        return run.finish("Completed", "task done")
    return run.finish("Terminated", "plan exhausted before task completion")


def run_plan_and_act(
    instance: TaskInstance,
    env: Environment,
    config: RunConfig,
    *,
    sink: TraceSink | None = None,
    run_id: str | None = None,
) -> RunReport:
    """Global plan + stepwise execution; deviations regenerate the whole plan.

    The evaluator (the engine's evaluation prompt, bound to the whole task)
    runs after every step; when it flags need_replan, the replanner sees the
    full accumulated history and may replace the entire plan.  The per-node
    replan cap applies to the single global plan.
    """
    config.require_roles("supervisor", "planner", "executor")
    run = _BaselineRun("plan-act", instance, env, config, sink, run_id)
    try:
        plan: Plan = run.call(
            "planner",
            "plan",
            {
                "task_description": instance.query,
                "nodes_description": instance.query,
                "admissible_commands": run.commands,
                "history": NO_ACTIONS_YET,
            },
            parse_plan,
        )
    except RoleFault as fault:
        return run.finish("Terminated", f"role fault: {fault}")

    replans = 0
    guidance: str | None = None
    while True:
        if env.done:
            return run.finish("Completed", "task done")
        if run.steps.exhausted():
            return run.finish("Terminated", "step budget exhausted")
        try:
            action = run.call(
                "executor",
                "execute",
                {
                    "task_description": instance.query,
                    "subgoal": instance.query,
                    "plan": render_plan(plan),
                    "guidance": guidance,
                    "admissible_commands": run.commands,
                    "history": _full_history(run.trace),
                },
                extract_action,
            )
        except RoleFault as fault:
            return run.finish("Terminated", f"role fault: {fault}")
        guidance = None
        run.act(action)

        try:
            evaluation = run.call(
                "supervisor",
                "evaluate",
                {
                    "task_description": instance.query,
                    "subgoal": instance.query,
                    "current_plan": render_plan(plan),
                    "admissible_commands": run.commands,
                    "history": _full_history(run.trace),
                },
                parse_evaluation,
            )
        except RoleFault as fault:
            return run.finish("Terminated", f"role fault: {fault}")

        if evaluation.need_replan:
            if replans >= config.max_replans_per_node:
                run.sink.emit(
                    run.run_id,
                    "replan",
                    scope="global",
                    accepted=False,
                    budget_exhausted=True,
                    replan_count=replans,
                    nodes_touched=None,
                )
                return run.finish("Terminated", f"replan budget exhausted ({replans})")
            try:
                decision = run.call(
                    "planner",
                    "replan",
                    {
                        "task_description": instance.query,
                        "subgoal": instance.query,
                        "current_plan": render_plan(plan),
                        "reason": evaluation.reason,
                        "admissible_commands": run.commands,
                        "history": _full_history(run.trace),
                    },
                    parse_replan,
                )
            except RoleFault as fault:
                return run.finish("Terminated", f"role fault: {fault}")
            if decision.replan:
                assert decision.new_plan is not None
                plan = decision.new_plan
                replans += 1
                run.sink.emit(
                    run.run_id,
                    "replan",
                    scope="global",
                    accepted=True,
                    replan_count=replans,
                    nodes_touched=None,
                )
            else:
                run.sink.emit(
                    run.run_id,
                    "replan",
                    scope="global",
                    accepted=False,
                    replan_count=replans,
                    nodes_touched=None,
                )
        elif evaluation.status == "needs_more_steps":
            guidance = evaluation.reason


BASELINES: dict[str, Callable[..., RunReport]] = {
    BaselineKind.REACT.value: run_react,
    BaselineKind.COT.value: run_cot,
    BaselineKind.PLAN_AND_ACT.value: run_plan_and_act,
}


def run_baseline(
    kind: str | BaselineKind,
    instance: TaskInstance,
    env: Environment,
    config: RunConfig,
    *,
    sink: TraceSink | None = None,
    run_id: str | None = None,
) -> RunReport:
    key = kind.value if isinstance(kind, BaselineKind) else str(kind)
    try:
        runner = BASELINES[key]
    except KeyError:
        raise ValueError(
            f"unknown baseline {key!r}; known: {', '.join(sorted(BASELINES))}"
        ) from None
    return runner(instance, env, config, sink=sink, run_id=run_id)
