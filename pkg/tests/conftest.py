"""Shared paths for the test suite."""

from __future__ import annotations

from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURE_DIR = REPO_ROOT / "fixtures"
CONFIG_DIR = REPO_ROOT / "configs"
SCRIPT_DIR = CONFIG_DIR / "scripts"

WIKI_FIXTURES = sorted((FIXTURE_DIR / "wiki").glob("*.json"))
TRAVEL_FIXTURE = FIXTURE_DIR / "travel" / "illinois_trip.json"
LAB_FIXTURE = FIXTURE_DIR / "lab" / "heat_water.json"


@pytest.fixture
def wiki_instance():
    from tdp.environments import load_task_instance

    return load_task_instance(FIXTURE_DIR / "wiki" / "wiki_peoria.json")


@pytest.fixture
def travel_instance():
    from tdp.environments import load_task_instance

    return load_task_instance(TRAVEL_FIXTURE)


@pytest.fixture
def lab_instance():
    from tdp.environments import load_task_instance

    return load_task_instance(LAB_FIXTURE)
