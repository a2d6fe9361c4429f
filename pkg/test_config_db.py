#!/usr/bin/env python3
"""
Tests for settings, scenario/profile loading and the sqlite run registry.
"""

import json
import os

import pytest

import db
from config import (
    ScenarioError,
    Settings,
    load_breath_scenario,
    load_pipeline_config,
    load_profiles,
    load_scenario,
    parse_json,
    scenario_from_doc,
)
from energy import EnergyError
from frames import FrameKind
from simulation import EventRow

HERE = os.path.dirname(os.path.abspath(__file__))
PROFILES = os.path.join(HERE, "profiles.json")

SCENARIO_TEXT = """{
  "schema": 1,
  "name": "unit",
  "ap": {"mac": "02:00:00:00:00:aa", "ssid": "HomeNet"},
  "stations": [
    {"mac": "24:0A:C4:00:00:01", "aid": 1}
  ],
  "attacker": {"target": "24:0a:c4:00:00:01", "query": "BlockAckRequest", "rate": 20}
}
"""


def _parse(text: str):
    return scenario_from_doc(parse_json(text, "unit.json"))


def test_scenario_from_text():
    scenario = _parse(SCENARIO_TEXT)
    assert scenario.name == "unit"
    assert scenario.stations[0].mac == "24:0a:c4:00:00:01"
    assert scenario.attack.query_kind is FrameKind.BLOCK_ACK_REQUEST
    assert scenario.attack.query_rate == 20
    assert scenario.attack.beacon_period_us == 200_000
    assert scenario.duration_s == 10.0


def test_unknown_key_reports_path_and_line():
    text = SCENARIO_TEXT.replace('"aid": 1}', '"aid": 1,\n     "colour": "red"}')
    with pytest.raises(ScenarioError) as err:
        _parse(text)
    assert err.value.path == "stations[0].colour"
    assert err.value.line == 7
    assert "unit.json:7" in str(err.value)


def test_bad_mac_rejected():
    with pytest.raises(ScenarioError) as err:
        _parse(SCENARIO_TEXT.replace("24:0A:C4:00:00:01", "24:0a:c4:00:01"))
    assert err.value.path == "stations[0].mac"


def test_target_must_be_a_station():
    with pytest.raises(ScenarioError) as err:
        _parse(SCENARIO_TEXT.replace('"target": "24:0a:c4:00:00:01"', '"target": "24:0a:c4:00:00:09"'))
    assert err.value.path == "attacker.target"


def test_schema_version_checked():
    with pytest.raises(ScenarioError, match="schema must be 1"):
        _parse(SCENARIO_TEXT.replace('"schema": 1', '"schema": 2'))


def test_single_attacker_only():
    text = SCENARIO_TEXT.replace(
        '"attacker": {"target": "24:0a:c4:00:00:01", "query": "BlockAckRequest", "rate": 20}',
        '"attacker": [{"target": "24:0a:c4:00:00:01"}, {"target": "24:0a:c4:00:00:01"}]',
    )
    with pytest.raises(ScenarioError, match="exactly one attacker"):
        _parse(text)


def test_zero_duration_rejected():
    with pytest.raises(ScenarioError, match="duration_s"):
        _parse(SCENARIO_TEXT.replace('"name": "unit",', '"name": "unit", "duration_s": 0,'))


def test_duplicate_stations_rejected():
    text = SCENARIO_TEXT.replace(
        '{"mac": "24:0A:C4:00:00:01", "aid": 1}',
        '{"mac": "24:0A:C4:00:00:01", "aid": 1}, {"mac": "24:0a:c4:00:00:01", "aid": 2}',
    )
    with pytest.raises(ScenarioError, match="duplicate"):
        _parse(text)


def test_bad_rate_rejected():
    with pytest.raises(ScenarioError) as err:
        _parse(SCENARIO_TEXT.replace('"rate": 20', '"rate": "fast"'))
    assert err.value.path == "attacker.rate"


@pytest.mark.parametrize("old,new,path", [
    ('"rate": 20', '"rate": 20, "target_aid": "one"', "attacker.target_aid"),
    ('"rate": 20', '"rate": 20, "payload_bytes": "big"', "attacker.payload_bytes"),
    ('"aid": 1}', '"aid": 1, "associated": 5}', "stations[0].associated"),
    ('"aid": 1}', '"aid": 1, "blocked_macs": "aa:bb:bb:bb:bb:bb"}', "stations[0].blocked_macs"),
    ('"aid": 1}', '"aid": 1, "profile": 3}', "stations[0].profile"),
    ('"name": "unit",', '"name": "unit", "legit_beacons": "no",', "legit_beacons"),
    ('"name": "unit",', '"name": "unit", "phy": {"basic_rates": "fast"},', "phy.basic_rates"),
    ('"name": "unit",', '"name": "unit", "phy": {"slot_us": "9"},', "phy.slot_us"),
])
def test_wrong_value_types_report_path(old, new, path):
    with pytest.raises(ScenarioError) as err:
        _parse(SCENARIO_TEXT.replace(old, new))
    assert err.value.path == path
    assert err.value.line is not None


def test_target_aid_and_legit_beacons_parsed():
    text = SCENARIO_TEXT.replace('"rate": 20', '"rate": 20, "target_aid": 3')
    text = text.replace('"name": "unit",', '"name": "unit", "legit_beacons": false,')
    scenario = _parse(text)
    assert scenario.attack.target_aid == 3
    assert scenario.legit_beacons is False


@pytest.mark.parametrize("extra,path", [
    ({"sensitivity": 5}, "sensitivity"),
    ({"sensitivity": ["x"] * 52}, "sensitivity[0]"),
    ({"persons": 3}, "persons"),
    ({"dominant_subcarriers": "four"}, "dominant_subcarriers"),
    ({"truth_bpm": "eighteen"}, "truth_bpm"),
])
def test_breath_value_types_report_path(tmp_path, extra, path):
    data = {"schema": 1, "duration_s": 60, "persons": [{"rate_bpm": 15}]}
    data.update(extra)
    source = tmp_path / "breath.json"
    source.write_text(json.dumps(data, indent=2))
    with pytest.raises(ScenarioError) as err:
        load_breath_scenario(str(source))
    assert err.value.path == path


def test_breath_orientation_parsed(tmp_path):
    source = tmp_path / "breath.json"
    source.write_text(json.dumps({"schema": 1, "persons": [{"rate_bpm": 15, "orientation": "back"}]}))
    scenario, _ = load_breath_scenario(str(source))
    assert scenario.persons[0].orientation == "back"
    source.write_text(json.dumps({"schema": 1, "persons": [{"rate_bpm": 15, "orientation": "up"}]}))
    with pytest.raises(ScenarioError, match="orientation"):
        load_breath_scenario(str(source))


def test_phy_preset_and_overrides():
    scenario = _parse(SCENARIO_TEXT.replace('"name": "unit",', '"name": "unit", "phy": {"preset": "calibrated", "sifs_us": 12},'))
    assert scenario.phy.cw_min == 15
    assert scenario.phy.sifs_us == 12
    with pytest.raises(ScenarioError, match="PHY preset"):
        _parse(SCENARIO_TEXT.replace('"name": "unit",', '"name": "unit", "phy": "7ghz",'))


def test_invalid_json_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "schema": 1,\n  "stations": [\n}\n')
    with pytest.raises(ScenarioError) as err:
        load_scenario(str(path))
    assert err.value.line == 4


def test_missing_file():
    with pytest.raises(ScenarioError, match="file not found"):
        load_scenario(os.path.join(HERE, "scenarios", "nope.json"))


def test_shipped_scenarios_load():
    for name in ("fig4a", "fig4b", "beacon_flood", "ap_deauth", "discovery"):
        scenario = load_scenario(os.path.join(HERE, "scenarios", f"{name}.json"))
        assert scenario.name == name
        assert scenario.attack is not None


def test_breath_scenario_truth():
    scenario, truth = load_breath_scenario(os.path.join(HERE, "scenarios", "breath_18bpm.json"))
    assert truth == 18
    assert scenario.duration_s == 120
    _, truth = load_breath_scenario(os.path.join(HERE, "scenarios", "breath_presence.json"))
    assert truth == 15


def test_pipeline_config(tmp_path):
    config = load_pipeline_config(os.path.join(HERE, "scenarios", "pipeline.json"))
    assert config.band == (0.1, 1.0)
    assert config.window_s == 30
    assert load_pipeline_config(None).stride_s == 1.0
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": 1, "window_s": 30, "windw_s": 5}')
    with pytest.raises(ScenarioError, match="windw_s"):
        load_pipeline_config(str(bad))


def test_profiles_library():
    library = load_profiles(PROFILES)
    assert library.device("ESP32").tx_mA == 240
    assert library.device("table4-fit").drain_power_W == pytest.approx(2.864, abs=0.01)
    assert library.device("ring-camera").drain_power_W == pytest.approx(0.6124, abs=1e-3)
    assert library.normal_life_hours["ring-camera"] == 4380
    assert len(library.full_drain_rows()) == 3
    assert library.battery("cr2032").capacity_Wh == 0.68


def test_unknown_names_list_alternatives():
    library = load_profiles(PROFILES)
    with pytest.raises(EnergyError, match="aa, aaa, cr2032, ring"):
        library.battery("D")
    with pytest.raises(EnergyError, match="esp32"):
        library.device("pixel")


def test_ring_pack_voltage_from_env(monkeypatch):
    monkeypatch.setenv("RING_PACK_VOLTAGE", "3.7")
    library = load_profiles(PROFILES)
    assert library.battery("ring").capacity_Wh == pytest.approx(6.04 * 3.7)


def test_settings_from_env(monkeypatch):
    monkeypatch.setenv("OUTPUT_DIR", "results")
    monkeypatch.setenv("LOG_LEVEL", "debug")
    monkeypatch.setenv("RECORD_RUNS", "yes")
    settings = Settings.from_env()
    assert settings.output_dir == "results"
    assert settings.log_level == "DEBUG"
    assert settings.record_runs is True


def test_run_registry_round_trip(tmp_path):
    db_file = str(tmp_path / "runs.db")
    rows = [
        EventRow(10.0, "tx", "", "aa:bb:bb:bb:bb:bb", "24:0a:c4:00:00:01", "null"),
        EventRow(20.0, "response", "24:0a:c4:00:00:01", "24:0a:c4:00:00:01", "aa:bb:bb:bb:bb:bb", "ack"),
    ]
    run_id = db.save_run("simulate", "unit", 7, {"awake_fraction": 0.5}, db_file=db_file)
    assert db.save_events(run_id, rows, db_file=db_file) == 2

    run = db.get_run(run_id, db_file=db_file)
    assert run["scenario"] == "unit"
    assert run["seed"] == 7
    assert run["summary"] == {"awake_fraction": 0.5}
    assert [r["event"] for r in db.get_events(run_id, db_file=db_file)] == ["tx", "response"]
    assert len(db.get_events(run_id, "response", db_file=db_file)) == 1
    assert [r["run_id"] for r in db.list_runs("simulate", db_file=db_file)] == [run_id]
    assert db.get_run("missing", db_file=db_file) is None
