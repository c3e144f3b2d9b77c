"""CLI exit codes, output modes, and the end-to-end smoke script."""

import csv
import json
import time

import pytest

from asa.cli import main as cli_main

from cluster import Cluster, slow_scenario_doc


@pytest.fixture(scope="module")
def stack(tmp_path_factory):
    c = Cluster(tmp_path_factory.mktemp("cli") / "data")
    c.add_node("n1", capacity=2)
    c.wait_nodes(1)
    yield c
    c.close()


def run_cli(stack, *argv):
    return cli_main(["--manager", stack.http_base, *argv])


def test_usage_errors_exit_1(stack, capsys):
    assert cli_main([]) == 1
    assert run_cli(stack, "scenario", "add") == 1
    assert run_cli(stack, "batch", "submit") == 1
    assert run_cli(stack, "run", "control", "r1") == 1
    capsys.readouterr()


def test_transport_failure_exit_3(capsys):
    assert cli_main(["--manager", "http://127.0.0.1:9", "scenario", "list"]) == 3
    assert "transport failure" in capsys.readouterr().err


def test_server_error_exit_2_and_verbatim_body(stack, tmp_path, capsys):
    bad = slow_scenario_doc()
    bad["agents"][0]["model"]["name"] = "ghost"
    f = tmp_path / "bad.json"
    f.write_text(json.dumps(bad))
    assert run_cli(stack, "scenario", "add", str(f)) == 2
    err = capsys.readouterr().err
    doc = json.loads(err)
    assert doc["violations"][0]["code"] == "unknown_model"

    assert run_cli(stack, "run", "show", "no-such-run") == 2


def test_full_smoke_script(stack, tmp_path, capsys):
    # add scenario -> template -> 4-run factorial -> watch to completion -> analyze
    scenario_file = tmp_path / "scenario.json"
    scenario_file.write_text(json.dumps(slow_scenario_doc(max_steps=30, sleep_s=0.0)))
    assert run_cli(stack, "--json", "scenario", "add", str(scenario_file)) == 0
    sid = json.loads(capsys.readouterr().out)["id"]

    template_file = tmp_path / "template.json"
    template_file.write_text(
        json.dumps(
            {
                "base": json.loads(scenario_file.read_text()),
                "placeholders": [
                    {"name": "speed", "path": "agents.s1.params.speed_mps", "kind": "number", "bounds": [0, 500]}
                ],
            }
        )
    )
    assert run_cli(stack, "--json", "template", "add", str(template_file)) == 0
    tid = json.loads(capsys.readouterr().out)["id"]

    factors_file = tmp_path / "factors.json"
    factors_file.write_text(json.dumps({"speed": [50.0, 100.0, 150.0, 200.0]}))
    assert run_cli(
        stack, "--json", "batch", "submit", "--template", tid, "--factorial", str(factors_file), "--seed", "11"
    ) == 0
    batch = json.loads(capsys.readouterr().out)
    assert len(batch["run_ids"]) == 4

    for run_id in batch["run_ids"]:
        assert run_cli(stack, "run", "watch", run_id) == 0
        out = capsys.readouterr().out
        assert "COMPLETED" in out

    metrics_file = tmp_path / "metrics.json"
    metrics_file.write_text(
        json.dumps([{"name": "final_x", "reducer": "final_value", "params": {"agent_id": "s1", "key": "x"}}])
    )
    csv_path = tmp_path / "out.csv"
    assert run_cli(
        stack, "analyze", "--batch", batch["batch_id"], "--metrics", str(metrics_file), "--out", str(csv_path)
    ) == 0
    capsys.readouterr()

    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "speed", "final_x"]
    assert len(rows) == 5
    # metric tracks the bound speed: 3 s of flight at each bound speed
    for i, row in enumerate(rows[1:]):
        assert float(row[2]) == pytest.approx(float(row[1]) * 3.0)


def test_run_list_and_human_tables(stack, capsys):
    assert run_cli(stack, "run", "list") == 0
    out = capsys.readouterr().out
    assert "run_id" in out and "state" in out
    assert run_cli(stack, "scenario", "list") == 0
    assert "revision" in capsys.readouterr().out
    assert run_cli(stack, "batch", "list") == 0
    capsys.readouterr()


def test_json_outputs_are_stable(stack, capsys):
    assert run_cli(stack, "--json", "run", "list") == 0
    first = capsys.readouterr().out
    assert run_cli(stack, "--json", "run", "list") == 0
    second = capsys.readouterr().out
    assert first == second
    json.loads(first)


def wait_state(stack, run_id, state, timeout=10.0):
    deadline = time.monotonic() + timeout
    while stack.core.get_run(run_id)["state"] != state:
        assert time.monotonic() < deadline, f"run never reached {state}"
        time.sleep(0.02)


def test_control_pause_resume_cycle(stack, capsys):
    template_id = stack.setup_template("t-cli-ctl", max_steps=200, sleep_s=0.004)
    batch = stack.core.submit_batch(template_id, 2, bindings=[{"speed": 10.0}])
    run_id = batch.run_ids[0]
    wait_state(stack, run_id, "RUNNING")
    assert run_cli(stack, "run", "control", run_id, "pause") == 0
    wait_state(stack, run_id, "PAUSED")
    assert run_cli(stack, "run", "control", run_id, "resume") == 0
    assert run_cli(stack, "run", "watch", run_id) == 0
    assert "COMPLETED" in capsys.readouterr().out
