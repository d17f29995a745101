"""Baseline loops: react, cot, plan-act — full-history prompts, global replans."""

from __future__ import annotations

import pytest

from tdp.baselines import (
    BASELINES,
    parse_react,
    run_baseline,
    run_cot,
    run_plan_and_act,
    run_react,
)
from tdp.engine import RunConfig
from tdp.environments import make_environment
from tdp.roles import ParseFault, ScriptedBackend
from tdp.telemetry import CounterClock, TraceSink

from scenarios import (
    ChainEnv,
    backends,
    chain_config,
    chain_instance,
    diamond_instance,
    eval_reply,
    plan_reply,
    planact_chain_rules,
    replan_decline,
    rule,
)

FOUND_RIVER = "seated on the Illinois River"  # fragment of the Peoria page


def _wiki_env(wiki_instance):
    env = make_environment("mockwiki")
    env.reset(wiki_instance)  # run loops reset again; harmless
    return env


# -- the react reply parser ------------------------------------------------------


class TestParseReact:
    def test_thought_and_action(self):
        thought, action = parse_react(
            "Thought: the page will name the river\nAction: Search[Peoria, Illinois]")
        assert thought == "the page will name the river"
        assert action == "Search[Peoria, Illinois]"

    def test_action_alone_is_enough(self):
        thought, action = parse_react("Action: Lookup[river]")
        assert thought == "" and action == "Lookup[river]"

    def test_quoted_action_unwrapped(self):
        _, action = parse_react('Thought: go\nAction: "Finish[Illinois River]"')
        assert action == "Finish[Illinois River]"

    def test_missing_action_line(self):
        with pytest.raises(ParseFault, match="no 'Action:' line"):
            parse_react("Thought: hmm, unsure what to do next")


# -- react -------------------------------------------------------------------------


def _react_backend():
    return ScriptedBackend([
        rule("executor:react", [FOUND_RIVER],
             "Thought: the river is named\nAction: Finish[Illinois River]"),
        rule("executor:react", [],
             "Thought: look the city up\nAction: Search[Peoria, Illinois]"),
    ])


class TestReact:
    def test_completes_and_answers(self, wiki_instance):
        backend = _react_backend()
        config = RunConfig(s_max=6, role_backends={"executor": backend})
        report = run_react(wiki_instance, _wiki_env(wiki_instance), config)
        assert report.terminal == "Completed" and report.reason == "task done"
        assert report.delivered is True
        assert report.env_metrics["answer"] == "Illinois River"
        assert report.steps_used == 2
        assert report.run_id == "react__wiki_peoria"

    def test_every_prompt_carries_the_full_history(self, wiki_instance):
        backend = _react_backend()
        config = RunConfig(s_max=6, role_backends={"executor": backend})
        run_react(wiki_instance, _wiki_env(wiki_instance), config)
        prompts = [prompt for _tag, prompt in backend.calls]
        assert "(no actions yet)" in prompts[0]
        assert "Action: Search[Peoria, Illinois]" in prompts[1]
        assert FOUND_RIVER in prompts[1]  # observation included verbatim

    def test_step_budget_cuts_the_loop(self, wiki_instance):
        backend = ScriptedBackend([
            rule("executor:react", [], "Thought: again\nAction: Lookup[river]")])
        config = RunConfig(s_max=3, role_backends={"executor": backend})
        report = run_react(wiki_instance, _wiki_env(wiki_instance), config)
        assert report.terminal == "Terminated"
        assert report.reason == "step budget exhausted"
        assert report.steps_used == 3

    def test_role_fault_terminates(self, wiki_instance):
        backend = ScriptedBackend([rule("executor:react", [], "no action line here")])
        config = RunConfig(parser_retry_budget=0, role_backends={"executor": backend})
        report = run_react(wiki_instance, _wiki_env(wiki_instance), config)
        assert report.terminal == "Terminated"
        assert report.reason.startswith("role fault:")
        assert report.steps_used == 0


# -- cot ----------------------------------------------------------------------------


def _cot_backends(plan_steps):
    return backends(
        [],
        [rule("planner:plan", [], plan_reply(*plan_steps))],
        [
            rule("executor:execute", [FOUND_RIVER], "Finish[Illinois River]"),
            rule("executor:execute", [], "Search[Peoria, Illinois]"),
        ],
    )


class TestCot:
    def test_one_plan_executed_step_for_step(self, wiki_instance):
        role_backends = _cot_backends(
            ["Find the Peoria page.", "Submit the river's name."])
        config = RunConfig(s_max=6, role_backends=role_backends)
        sink = TraceSink(clock=CounterClock())
        report = run_cot(wiki_instance, _wiki_env(wiki_instance), config, sink=sink)
        assert report.terminal == "Completed"
        assert report.delivered is True
        assert len(role_backends["planner"].calls) == 1
        events = sink.events_for(report.run_id)
        assert [e.kind for e in events if e.kind == "replan"] == []

    def test_plan_exhaustion_is_a_terminal_reason(self, wiki_instance):
        role_backends = _cot_backends(["Find the Peoria page."])  # never finishes
        config = RunConfig(s_max=6, role_backends=role_backends)
        report = run_cot(wiki_instance, _wiki_env(wiki_instance), config)
        assert report.terminal == "Terminated"
        assert report.reason == "plan exhausted before task completion"
        assert report.delivered is False

    def test_episode_end_stops_remaining_steps(self, wiki_instance):
        role_backends = _cot_backends(
            ["Find the page.", "Answer.", "This step is never reached."])
        config = RunConfig(s_max=6, role_backends=role_backends)
        report = run_cot(wiki_instance, _wiki_env(wiki_instance), config)
        assert report.terminal == "Completed"
        assert len(role_backends["executor"].calls) == 2

    def test_planner_fault_terminates_before_any_step(self, wiki_instance):
        role_backends = _cot_backends(["x"])
        role_backends["planner"] = ScriptedBackend([rule(None, [], "not a plan")])
        config = RunConfig(parser_retry_budget=0, role_backends=role_backends)
        report = run_cot(wiki_instance, _wiki_env(wiki_instance), config)
        assert report.reason.startswith("role fault:")
        assert report.steps_used == 0


# -- plan-act --------------------------------------------------------------------------


def _planact_wiki_backends():
    return backends(
        [
            rule("supervisor:evaluate", ["Final answer recorded"],
                 eval_reply("completed", "The answer went in.")),
            rule("supervisor:evaluate", [FOUND_RIVER],
                 eval_reply("needs_more_steps",
                            "Now deliver the final answer with Finish.")),
        ],
        [rule("planner:plan", [],
              plan_reply("Find the Peoria page.", "Submit the river's name."))],
        [
            rule("executor:execute", [FOUND_RIVER], "Finish[Illinois River]"),
            rule("executor:execute", [], "Search[Peoria, Illinois]"),
        ],
    )


class TestPlanAct:
    def test_evaluates_after_every_step_including_the_last(self, wiki_instance):
        role_backends = _planact_wiki_backends()
        config = RunConfig(s_max=6, role_backends=role_backends)
        report = run_plan_and_act(wiki_instance, _wiki_env(wiki_instance), config)
        assert report.terminal == "Completed"
        assert report.steps_used == 2
        assert len(role_backends["supervisor"].calls) == 2

    def test_guidance_reaches_the_next_executor_prompt(self, wiki_instance):
        role_backends = _planact_wiki_backends()
        config = RunConfig(s_max=6, role_backends=role_backends)
        run_plan_and_act(wiki_instance, _wiki_env(wiki_instance), config)
        prompts = [prompt for _tag, prompt in role_backends["executor"].calls]
        assert "Now deliver the final answer" not in prompts[0]
        assert "Now deliver the final answer" in prompts[1]

    def test_completed_verdict_does_not_end_the_episode(self):
        # the loop only exits on env.done; a premature "completed" verdict is noted
        # and the loop simply continues
        instance = diamond_instance()
        instance = type(instance)(
            id="one_condition", environment="textlab", query="Focus the plant.",
            gold={"conditions": [{"kind": "focused", "object": "plant"}]},
            payload=instance.payload)
        role_backends = backends(
            [rule("supervisor:evaluate", [], eval_reply("completed", "Looks done."))],
            [rule("planner:plan", [], plan_reply("Focus the plant."))],
            [
                rule("executor:execute", ["You open the drawer"], "focus plant"),
                rule("executor:execute", [], "open drawer"),
            ],
        )
        config = RunConfig(s_max=6, role_backends=role_backends)
        env = make_environment("textlab")
        report = run_plan_and_act(instance, env, config)
        assert report.terminal == "Completed"
        assert report.steps_used == 2  # verdict after step 1 didn't stop the run
        assert len(role_backends["executor"].calls) == 2

    def test_replan_decline_keeps_going(self, wiki_instance):
        role_backends = backends(
            [
                rule("supervisor:evaluate", ["Final answer recorded"],
                     eval_reply("completed", "Delivered.")),
                rule("supervisor:evaluate", [FOUND_RIVER],
                     eval_reply("needs_more_steps", "The plan looks stale.",
                                need_replan=True)),
            ],
            [
                rule("planner:plan", [], plan_reply("Search, then answer.")),
                rule("planner:replan", [], replan_decline("Stale but workable.")),
            ],
            [
                rule("executor:execute", [FOUND_RIVER], "Finish[Illinois River]"),
                rule("executor:execute", [], "Search[Peoria, Illinois]"),
            ],
        )
        config = RunConfig(s_max=6, role_backends=role_backends)
        sink = TraceSink(clock=CounterClock())
        report = run_plan_and_act(wiki_instance, _wiki_env(wiki_instance), config,
                                  sink=sink)
        assert report.terminal == "Completed"
        (replan,) = [e for e in sink.events_for(report.run_id) if e.kind == "replan"]
        assert replan.payload["accepted"] is False
        assert replan.payload["scope"] == "global"

    def test_replan_budget_exhaustion_terminates(self, wiki_instance):
        role_backends = backends(
            [rule("supervisor:evaluate", [],
                  eval_reply("needs_more_steps", "Blocked.", need_replan=True))],
            [rule("planner:plan", [], plan_reply("Look around."))],
            [rule("executor:execute", [], "Lookup[river]")],
        )
        config = RunConfig(s_max=6, max_replans_per_node=0,
                           role_backends=role_backends)
        sink = TraceSink(clock=CounterClock())
        report = run_plan_and_act(wiki_instance, _wiki_env(wiki_instance), config,
                                  sink=sink)
        assert report.terminal == "Terminated"
        assert report.reason == "replan budget exhausted (0)"
        (replan,) = [e for e in sink.events_for(report.run_id) if e.kind == "replan"]
        assert replan.payload["budget_exhausted"] is True

    def test_chain_replans_see_the_whole_past(self):
        stages = 3
        role_backends = planact_chain_rules(stages)
        config = chain_config(stages, role_backends)
        sink = TraceSink(clock=CounterClock())
        report = run_plan_and_act(chain_instance(stages), ChainEnv(), config, sink=sink)
        assert report.terminal == "Completed"
        assert report.env_metrics["stages_cleared"] == stages
        replans = [e for e in sink.events_for(report.run_id) if e.kind == "replan"]
        assert len(replans) == stages
        assert all(e.payload["accepted"] for e in replans)
        replan_prompts = [prompt for tag, prompt in role_backends["planner"].calls
                          if tag == "planner:replan"]
        assert len(replan_prompts) == stages
        # the stage-3 replan still carries stage 1's obstacle: full-history prompts
        assert "obstacle at stage 1:" in replan_prompts[-1]
        assert "obstacle at stage 2:" in replan_prompts[-1]
        sizes = [len(p) for p in replan_prompts]
        assert sizes[0] < sizes[1] < sizes[2]


# -- dispatch ---------------------------------------------------------------------------


class TestDispatch:
    def test_registry_names(self):
        assert sorted(BASELINES) == ["cot", "plan-act", "react"]

    def test_unknown_kind(self, wiki_instance):
        with pytest.raises(ValueError, match="unknown baseline 'zen'"):
            run_baseline("zen", wiki_instance, _wiki_env(wiki_instance), RunConfig())

    def test_dispatch_by_name_runs_the_right_loop(self, wiki_instance):
        backend = _react_backend()
        config = RunConfig(s_max=6, role_backends={"executor": backend})
        report = run_baseline("react", wiki_instance, _wiki_env(wiki_instance), config)
        assert report.method == "react"
        assert report.terminal == "Completed"
