from __future__ import annotations

import json
import shutil

import pytest

from btcap.cli import main
from btcap.scenario import Event, Parameters, Scenario, ScenarioError, surjectivity_warnings
from btcap.sim import TIMELINE_COLUMNS, read_timeline

from conftest import DATA, MISSION, SCENARIOS


@pytest.fixture
def bundle(tmp_path):
    dst = tmp_path / "bundle"
    shutil.copytree(DATA, dst)
    return dst


def edit(path, fn):
    d = json.loads(path.read_text())
    fn(d)
    path.write_text(json.dumps(d))


def test_validate_clean_bundle(capsys):
    assert main(["validate", str(DATA)]) == 0
    assert capsys.readouterr().out == ""


def test_validate_rejects_option_on_capability(bundle, capsys):
    def add_option(d):
        node = next(n for n in d["nodes"] if n["kind"] == "capability")
        node["parameters"].append({"name": "speed", "kind": "option", "type": "float"})
    edit(bundle / "mission.json", add_option)
    assert main(["validate", str(bundle)]) == 1
    out = capsys.readouterr().out
    assert "mission.json" in out and "option" in out


def test_validate_rejects_missing_output_bridge(bundle, capsys):
    def drop_bridge(d):
        d["nodes"] = [n for n in d["nodes"] if n["kind"] != "io-output-bridge"]
        for n in d["nodes"]:
            n["children"] = [c for c in n.get("children", []) if c != "out"]
        d["edges"] = [e for e in d["edges"] if e["to"][0] != "out"]
    edit(bundle / "trees" / "identify.json", drop_bridge)
    assert main(["validate", str(bundle)]) == 1
    out = capsys.readouterr().out
    assert "spot.json" in out and "bridge" in out


def test_validate_reports_json_line(bundle, capsys):
    (bundle / "broken.json").write_text('{\n  "a": 1,\n  oops\n}\n')
    assert main(["validate", str(bundle)]) == 1
    assert "broken.json:3:" in capsys.readouterr().out


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "run"
    rc = main(["run", str(SCENARIOS / "team3.json"), str(MISSION), "--out", str(out)])
    assert rc == 0
    header = (out / "timeline.csv").read_text().splitlines()[0]
    assert header == ",".join(TIMELINE_COLUMNS)
    assert read_timeline(out / "timeline.csv")
    m = json.loads((out / "metrics.json").read_text())
    assert m["complete"] and all(0.0 <= u <= 1.0 for u in m["utilization"].values())
    assert (out / "messages.jsonl").stat().st_size > 0


def test_run_timeout_exit_status(tmp_path):
    rc = main(["run", str(SCENARIOS / "team3.json"), str(MISSION), "--out", str(tmp_path), "--max-time", "20"])
    assert rc == 1
    assert json.loads((tmp_path / "metrics.json").read_text())["makespan"] == "inf"


def test_run_unknown_interface_is_load_error(bundle, tmp_path, capsys):
    def rename(d):
        next(n for n in d["nodes"] if n["kind"] == "capability")["options"]["interface"] = "teleport"
    edit(bundle / "mission.json", rename)
    rc = main(["run", str(bundle / "scenarios" / "team3.json"), str(bundle / "mission.json"),
               "--out", str(tmp_path)])
    assert rc == 2
    assert "teleport" in capsys.readouterr().err


def test_unimplemented_capability_is_load_error(bundle, tmp_path):
    def only_spot(d):
        d["robots"] = [r for r in d["robots"] if r["id"] == "spot_1"]
    edit(bundle / "scenarios" / "team3.json", only_spot)
    rc = main(["run", str(bundle / "scenarios" / "team3.json"), str(bundle / "mission.json"),
               "--out", str(tmp_path)])
    assert rc == 2


def test_late_join_only_warns():
    sc = Scenario.load(SCENARIOS / "team3.json")
    sc.events = [Event(5.0, "husky_1", "join")]
    warnings = surjectivity_warnings(sc, json.loads(MISSION.read_text()))
    assert warnings == ["capability 'MoveToDecontamination': 'decontaminate' only available after a scripted join"]


def test_parameters_validated():
    with pytest.raises(ScenarioError):
        Parameters.from_dict({"bid_windw": 2})
    with pytest.raises(ScenarioError):
        Parameters(heartbeat_interval=3, heartbeat_timeout=1)
    p = Parameters()
    assert (p.bid_window, p.reauction_interval, p.hysteresis_factor) == (2.0, 10.0, 0.8)
    assert (p.heartbeat_interval, p.heartbeat_timeout, p.fail_chance) == (1.0, 3.0, 0.1)
    assert (p.retry_limit, p.tick_period, p.max_time) == (3, 0.5, 3600.0)


def test_events_must_be_ordered():
    d = json.loads((SCENARIOS / "dynamic_team.json").read_text())
    d["events"].reverse()
    with pytest.raises(ScenarioError):
        Scenario.from_dict(d, SCENARIOS)
