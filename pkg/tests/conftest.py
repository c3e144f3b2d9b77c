import json
from pathlib import Path

import pytest

from asa.engine import builtin_registry, run_simulation
from asa.jsonutil import canonical_line
from asa.scenario import ScenarioSpec, scenario_from_json

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def registry():
    return builtin_registry()


@pytest.fixture()
def reference_2v1() -> ScenarioSpec:
    return scenario_from_json(json.loads((FIXTURES / "scenario_2v1.json").read_text()))


def run_collect(spec, registry, **kwargs):
    """Run a scenario collecting every record; returns (outcome, records)."""
    records: list[dict] = []
    outcome = run_simulation(spec, registry, records.extend, **kwargs)
    return outcome, records


def records_canonical(records) -> bytes:
    """The byte-identity form of a record stream: canonical JSON lines."""
    return b"".join(canonical_line(r) for r in records)


@pytest.fixture()
def golden_2v1_bytes() -> bytes:
    return (FIXTURES / "golden_2v1.jsonl").read_bytes()
