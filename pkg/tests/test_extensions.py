"""Runtime model loading: manifests, duplicates, the sample extension."""

import json
from pathlib import Path

import pytest

from asa.engine import (
    ArtifactUnloadable,
    DuplicateModel,
    ManifestInvalid,
    builtin_registry,
    register_extension,
)
from asa.manifest import ManifestError, ModelManifest
from asa.scenario import scenario_from_json, validate

from conftest import FIXTURES, run_collect

EXT_DIR = FIXTURES / "zigzag_extension"


def test_required_param_with_default_is_invalid():
    doc = json.loads((EXT_DIR / "zigzag_platform.json").read_text())
    doc["params"][0]["default"] = 100.0  # required speed_mps must not carry one
    with pytest.raises(ManifestError):
        ModelManifest.from_json(doc)


def test_manifest_invalid_surfaces_from_register(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "version": "1", "params": [{"key": "k", "type": "wat"}]}))
    registry = builtin_registry()
    with pytest.raises(ManifestInvalid):
        register_extension(EXT_DIR / "zigzag_platform.py", bad, registry)


def test_unloadable_artifact(tmp_path):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({"name": "m", "version": "1"}))
    broken = tmp_path / "m.py"
    broken.write_text("def broken(:\n")
    registry = builtin_registry()
    with pytest.raises(ArtifactUnloadable):
        register_extension(broken, manifest, registry)
    missing_behaviors = tmp_path / "m2.py"
    missing_behaviors.write_text("x = 1\n")
    with pytest.raises(ArtifactUnloadable):
        register_extension(missing_behaviors, manifest, registry)


def test_duplicate_model_rejected():
    registry = builtin_registry()
    register_extension(EXT_DIR / "zigzag_platform.py", EXT_DIR / "zigzag_platform.json", registry)
    with pytest.raises(DuplicateModel):
        register_extension(EXT_DIR / "zigzag_platform.py", EXT_DIR / "zigzag_platform.json", registry)


def test_builtin_names_cannot_be_shadowed(tmp_path):
    doc = json.loads((EXT_DIR / "zigzag_platform.json").read_text())
    doc["name"] = "waypoint_platform"
    doc["version"] = "9.9"
    manifest = tmp_path / "shadow.json"
    manifest.write_text(json.dumps(doc))
    artifact = tmp_path / "shadow.py"
    artifact.write_text(
        (EXT_DIR / "zigzag_platform.py").read_text().replace('"zigzag_platform"', '"waypoint_platform"')
    )
    registry = builtin_registry()
    with pytest.raises(DuplicateModel):
        register_extension(artifact, manifest, registry)


def test_extension_dir_scan_and_smoke_scenario():
    registry = builtin_registry(ext_dirs=[EXT_DIR])
    assert registry.has("zigzag_platform", "1.0")

    spec = scenario_from_json(
        {
            "name": "zigzag-smoke",
            "description": "",
            "sim": {"step_dt": 0.1, "max_steps": 200, "seed": 3},
            "agents": [
                {
                    "agent_id": "z1",
                    "side": "BLUE",
                    "model": {"name": "zigzag_platform", "version": "1.0"},
                    "params": {"speed_mps": 100.0, "leg_s": 2.0},
                    "components": [],
                },
                {
                    "agent_id": "w1",
                    "side": "RED",
                    "model": {"name": "waypoint_platform", "version": "1.0"},
                    "params": {"speed_mps": 50.0, "max_turn_rate_rad_s": 0.5, "start_pos": [5000.0, 0.0, 0.0]},
                    "components": [],
                },
            ],
        }
    )
    assert validate(spec, registry.manifests()) == []
    outcome, records = run_collect(spec, registry)
    assert outcome.state == "COMPLETED"
    zigs = [r for r in records if r["tag"] == "zig"]
    assert len(zigs) == 10  # 20 s run, leg change every 2 s, steps 20, 40, ... 200
    assert {r["agent_id"] for r in zigs} == {"z1"}


def test_reload_picks_up_new_models(tmp_path):
    ext = tmp_path / "ext"
    ext.mkdir()
    registry = builtin_registry(ext_dirs=[ext])
    assert not registry.has("zigzag_platform", "1.0")
    for name in ("zigzag_platform.py", "zigzag_platform.json"):
        (ext / name).write_text((EXT_DIR / name).read_text())
    loaded = registry.reload_extensions()
    assert [m.name for m in loaded] == ["zigzag_platform"]
    assert registry.has("zigzag_platform", "1.0")
