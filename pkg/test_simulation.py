#!/usr/bin/env python3
"""
End-to-end scenario runs: keep-awake, beacon flood, AP deauth, discovery.
"""

import os
from dataclasses import replace

import pytest

from attacker import AttackConfig, discover_targets
from config import load_profiles, load_scenario
from medium import ReplyRateTable
from simulation import (
    EVENT_FIELDS,
    Scenario,
    StationSetup,
    run_scenario,
    sniff_scenario,
    write_outputs,
)

HERE = os.path.dirname(os.path.abspath(__file__))
VICTIM = "24:0a:c4:00:00:01"
AP = "02:00:00:00:00:aa"


def _scenario(name: str) -> Scenario:
    return load_scenario(os.path.join(HERE, "scenarios", f"{name}.json"))


def _events(result, event, station=None):
    return [row for row in result.events if row.event == event and (station is None or row.station == station)]


@pytest.fixture(scope="module")
def fig4a():
    return run_scenario(_scenario("fig4a"))


@pytest.fixture(scope="module")
def fig4b():
    return run_scenario(_scenario("fig4b"))


def test_queries_alone_get_sparse_answers(fig4a):
    summary = fig4a.summary(VICTIM)
    assert summary["queries_sent"] == pytest.approx(500, abs=2)
    assert summary["awake_fraction"] < 0.30
    assert summary["answered_fraction"] < 0.30
    assert summary["response_coverage"] < 0.5
    assert _events(fig4a, "missed", VICTIM)


def test_forged_beacons_hold_station_awake(fig4b):
    summary = fig4b.summary(VICTIM)
    assert summary["awake_fraction"] >= 0.95
    assert summary["response_coverage"] >= 0.95
    assert summary["answered_fraction"] > 0.9
    assert not summary["blacklisted"]
    nullfuncs = _events(fig4b, "nullfunc", VICTIM)
    assert nullfuncs and all(row.detail == "aid=1" for row in nullfuncs)


def test_keep_awake_beats_queries_alone(fig4a, fig4b):
    assert fig4b.summary(VICTIM)["responses"] > 5 * fig4a.summary(VICTIM)["responses"]


def test_timeline_bins(fig4b):
    rows = [row for row in fig4b.timeline if row[1] == VICTIM]
    assert len(rows) == 100
    assert rows[0][0] == "0.0"
    assert rows[-1][0] == "9.9"
    assert sum(row[3] for row in rows) == fig4b.summary(VICTIM)["queries_sent"]


def test_events_are_in_time_order(fig4b):
    times = [row.t_us for row in fig4b.events]
    assert times == sorted(times)
    assert all(0 <= t <= fig4b.duration_us for t in times)


def test_ledger_accounts_for_the_whole_run(fig4b):
    ledger = fig4b.summary(VICTIM)["ledger_us"]
    total = sum(ledger[k] for k in ("sleep_us", "idle_us", "rx_us", "tx_us"))
    assert total == pytest.approx(10e6, rel=1e-6)


def test_power_figure_with_profiles():
    profiles = load_profiles(os.path.join(HERE, "profiles.json")).devices
    result = run_scenario(replace(_scenario("fig4b"), duration_s=2), profiles)
    idle_only = 0.08 * 3.3
    assert result.summary(VICTIM)["avg_power_W"] >= idle_only * 0.9


def test_beacon_flood_gets_blacklisted():
    result = run_scenario(_scenario("beacon_flood"))
    summary = result.summary(VICTIM)
    assert summary["blacklisted"] == ["02:00:00:00:00:bb"]
    assert summary["awake_fraction"] < 0.30
    first = _events(result, "blacklist", VICTIM)[0]
    assert first.t_us == pytest.approx(200_000, abs=50_000)
    assert summary["diagnostics"]["ignored_beacons"] > 0


def test_ap_deauths_but_keeps_acking():
    result = run_scenario(_scenario("ap_deauth"))
    ap = "f0:9f:c2:00:00:01"
    summary = result.summary(ap)
    assert summary["awake_fraction"] == pytest.approx(1.0)
    assert summary["delivered"] > 100
    assert summary["responses"] == summary["delivered"]
    deauths = _events(result, "deauth", ap)
    assert len(deauths) == summary["delivered"]
    assert all(row.dst == "aa:bb:bb:bb:bb:bb" for row in deauths)


def test_delivery_falls_off_with_distance():
    base = _scenario("fig4b")
    far = replace(base, stations=[StationSetup(mac=VICTIM, aid=1, distance_m=150)])
    summary = run_scenario(far).summary(VICTIM)
    assert summary["delivered"] / summary["queries_sent"] == pytest.approx(0.73, abs=0.06)


def test_discovery_finds_every_client():
    scenario = _scenario("discovery")
    result = sniff_scenario(scenario)
    found = discover_targets(result.captured, own_macs=[scenario.attack.attacker_mac, scenario.attack.spoofed_ap_mac])
    assert found.ap_mac == AP
    assert found.ssid == "HomeNet"
    assert sorted(found.clients) == [(VICTIM, 1), ("24:0a:c4:00:00:02", 2)]


def test_discovery_without_probe_sees_no_aids():
    scenario = _scenario("discovery")
    result = sniff_scenario(scenario, probe=False)
    found = discover_targets(result.captured)
    assert found.ap_mac == AP
    assert not found.clients


def test_constructed_scenario_without_attack():
    scenario = Scenario(
        name="idle",
        ap_mac=AP,
        ssid="HomeNet",
        stations=[StationSetup(mac=VICTIM, start_awake=False)],
        reply_rates=ReplyRateTable(((0.0, 1.0),)),
        duration_s=1.0,
    )
    summary = run_scenario(scenario).summary(VICTIM)
    assert summary["queries_sent"] == 0
    assert summary["awake_fraction"] < 0.1
    assert summary["time_fractions"]["sleep"] > 0.9


def test_unknown_target_is_simply_not_heard():
    scenario = Scenario(
        name="elsewhere",
        ap_mac=AP,
        ssid="HomeNet",
        stations=[StationSetup(mac=VICTIM)],
        attack=AttackConfig(target="24:0a:c4:00:00:99", query_rate=10, beacon_period_us=0),
        duration_s=1.0,
    )
    assert run_scenario(scenario).summary(VICTIM)["queries_sent"] == 0


def _read_outputs(out_dir):
    contents = {}
    for name in ("events.csv", "ledger.jsonl", "timeline.csv"):
        with open(os.path.join(out_dir, name), "rb") as f:
            contents[name] = f.read()
    return contents


def test_same_seed_same_bytes(tmp_path):
    scenario = replace(_scenario("fig4a"), duration_s=3)
    write_outputs(run_scenario(scenario), str(tmp_path / "a"))
    write_outputs(run_scenario(scenario), str(tmp_path / "b"))
    write_outputs(run_scenario(replace(scenario, seed=99)), str(tmp_path / "c"))
    a, b, c = (_read_outputs(str(tmp_path / d)) for d in "abc")
    assert a == b
    assert a["events.csv"] != c["events.csv"]
    assert a["events.csv"].decode().splitlines()[0] == ",".join(EVENT_FIELDS)
