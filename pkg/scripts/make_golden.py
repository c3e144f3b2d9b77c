#!/usr/bin/env python3
"""Regenerate the frozen golden record log for the reference 2v1 scenario.

The golden log pins the engine's exact output: canonical JSON record lines
for run_id "golden" with the scenario's own seed. Tests compare fresh runs
byte-for-byte against this file, so regenerate it only after a deliberate,
reviewed change to engine behavior.

Usage: python scripts/make_golden.py
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from asa.engine import builtin_registry, run_simulation
from asa.jsonutil import canonical_line
from asa.scenario import scenario_from_json

FIXTURES = Path(__file__).parent.parent / "tests" / "fixtures"


def main() -> int:
    spec = scenario_from_json(json.loads((FIXTURES / "scenario_2v1.json").read_text()))
    records: list[dict] = []
    outcome = run_simulation(spec, builtin_registry(), records.extend, run_id="golden")
    if outcome.state != "COMPLETED":
        print(f"reference run did not complete: {outcome}", file=sys.stderr)
        return 1
    out = FIXTURES / "golden_2v1.jsonl"
    with open(out, "wb") as fh:
        for record in records:
            fh.write(canonical_line(record))
    print(f"{out}: {len(records)} records over {outcome.steps} steps")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
