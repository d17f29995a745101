"""Mock environments and the task-fixture registry."""

from __future__ import annotations

from .base import (
    Environment,
    EnvironmentClosedError,
    EnvironmentError_,
    FixtureError,
    StepResult,
    TaskInstance,
    load_task_instance,
)
from .mockwiki import MockWiki
from .textlab import TextLab
from .traveltoy import TravelToy

ENVIRONMENTS: dict[str, type[Environment]] = {
    MockWiki.name: MockWiki,
    TravelToy.name: TravelToy,
    TextLab.name: TextLab,
}


def make_environment(env_id: str) -> Environment:
    """Instantiate a registered environment by id."""
    try:
        return ENVIRONMENTS[env_id]()
    except KeyError:
        raise FixtureError(
            f"unknown environment {env_id!r}; known: {', '.join(sorted(ENVIRONMENTS))}"
        ) from None


def validate_instance(instance: TaskInstance) -> None:
    """Run the fixture's environment-specific consistency checks."""
    cls = ENVIRONMENTS.get(instance.environment)
    if cls is None:
        raise FixtureError(
            f"fixture {instance.id}: unknown environment {instance.environment!r}"
        )
    cls.validate_instance(instance)


__all__ = [
    "Environment",
    "EnvironmentError_",
    "EnvironmentClosedError",
    "FixtureError",
    "StepResult",
    "TaskInstance",
    "load_task_instance",
    "MockWiki",
    "TravelToy",
    "TextLab",
    "ENVIRONMENTS",
    "make_environment",
    "validate_instance",
]
