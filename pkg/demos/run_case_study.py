#!/usr/bin/env python3
"""A dead end inside one sub-task, repaired without disturbing the others.

The trip-planning task decomposes into four nodes.  The flights node discovers
mid-execution that no direct return flight exists that day, and its plan is
rewritten in place — the city-confirmation and lodging nodes never see the
failed search, and the final assembled plan routes the return through Chicago.
"""

from pathlib import Path

from tdp.cli import load_config
from tdp.engine import run_task
from tdp.environments import load_task_instance, make_environment
from tdp.telemetry import TraceSink

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    instance = load_task_instance(ROOT / "fixtures" / "travel" / "illinois_trip.json")
    config = load_config(ROOT / "configs" / "scripted_travel.json")
    sink = TraceSink(clock=config.make_clock())

    print(f"task: {instance.query}\n")
    report = run_task(instance, make_environment(instance.environment), config, sink=sink)
    events = sink.events_for(report.run_id)

    flights_node = None
    print("what the flights node went through:")
    for event in events:
        if event.kind == "replan":
            flights_node = event.payload["scope"]
        if event.kind == "env_step" and "FlightSearch" in event.payload["action"]:
            print(f"  {event.payload['action']}")
            print(f"    -> {event.payload['observation']}")

    print(f"\nreplanned node: {flights_node}")
    print("replan counts per node:")
    for node_id, record in sorted(report.node_records.items()):
        marker = "  <- plan rewritten here" if record["replan_count"] else ""
        print(f"  {node_id}: {record['replan_count']}{marker}")

    print(f"\noutcome: {report.terminal} ({report.reason}) in {report.steps_used} steps")
    print("final plan:")
    for line in report.env_metrics.get("plan_text", "").splitlines():
        print(f"  {line}")


if __name__ == "__main__":
    main()
