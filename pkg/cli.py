#!/usr/bin/env python3
"""
Loophole simulator command line.

    python cli.py simulate scenarios/fig4b.json
    python cli.py synth scenarios/breath_18bpm.json
    python cli.py sense out/breath_18bpm.csv --truth-bpm 18
    python cli.py drain --query bar --bitrate 1 --device table4-fit --battery AAA
    python cli.py discover scenarios/discovery.json
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

import db
from attacker import AttackConfig, discover_targets
from config import (
    ScenarioError,
    Settings,
    load_breath_scenario,
    load_pipeline_config,
    load_profiles,
    load_scenario,
    setup_logging,
)
from csi import read_trace, synthesize_trace, write_trace
from energy import battery_life_reduction, drain_report
from frames import FrameKind
from sensing import accuracy_summary, compute_spectra, detect_multiple, sliding_estimate, write_estimates
from simulation import run_scenario, sniff_scenario, write_outputs

logger = logging.getLogger(__name__)

# Stand-in victim for the analytic drain model, which never addresses it
DRAIN_VICTIM_MAC = "02:00:00:00:00:02"


def _emit(data: Dict) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    profiles = {}
    try:
        profiles = load_profiles(args.profiles).devices
    except ScenarioError as e:
        logger.warning(f"⚠️ No device profiles, power figures skipped: {e}")
    result = run_scenario(scenario, profiles)
    out_dir = os.path.join(args.out, scenario.name)
    paths = write_outputs(result, out_dir)
    if scenario.breath is not None:
        paths["trace"] = os.path.join(out_dir, "csi.csv")
        write_trace(synthesize_trace(replace(scenario.breath, seed=scenario.seed)), paths["trace"])

    settings = Settings.from_env()
    if args.record or settings.record_runs:
        run_id = db.save_run("simulate", scenario.name, scenario.seed, result.summaries)
        db.save_events(run_id, result.events)

    _emit({"scenario": scenario.name, "seed": scenario.seed, "outputs": paths, "stations": result.summaries})
    return 0


def cmd_synth(args) -> int:
    scenario, _ = load_breath_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    trace = synthesize_trace(scenario)
    path = args.output
    if path is None:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"{_stem(args.scenario)}.csv")
    write_trace(trace, path)
    logger.info(f"✅ Wrote {len(trace)} samples to {path}")
    _emit({"trace": path, "samples": len(trace), "duration_s": round(trace.duration_s, 6), "seed": scenario.seed})
    return 0


def cmd_sense(args) -> int:
    config = load_pipeline_config(args.config)
    trace = read_trace(args.trace)
    estimates = sliding_estimate(trace, config)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{_stem(args.trace)}.estimates.jsonl")
    write_estimates(estimates, path)

    report: Dict = {"estimates": path, "windows": len(estimates)}
    if args.truth_bpm is not None:
        report["accuracy"] = accuracy_summary(estimates, args.truth_bpm)
        logger.info(
            f"📊 {report['accuracy']['within_1bpm']:.1%} of windows within 1 bpm of {args.truth_bpm:g}"
        )
    if args.max_persons > 1:
        tail = trace.window(float(trace.t[-1]) - config.window_s, float(trace.t[-1]) + 1e-9)
        rates = detect_multiple(compute_spectra(tail.t, tail.amps, config), config, args.max_persons)
        report["persons"] = [{"rate_bpm": round(r, 4), "share": round(s, 6)} for r, s in rates]
    _emit(report)
    return 0


def cmd_drain(args) -> int:
    library = load_profiles(args.profiles)
    device = library.device(args.device)
    battery = library.battery(args.battery)
    config = AttackConfig(
        target=DRAIN_VICTIM_MAC,
        query_kind=FrameKind.parse(args.query),
        query_bitrate=args.bitrate,
        beacon_period_us=args.beacon_period_ms * 1000,
    )
    report = drain_report(config, device, battery, args.fraction).to_dict()
    normal_life = library.normal_life_hours.get(device.name.lower())
    if normal_life is not None:
        report["normal_life_hours"] = normal_life
        report["life_reduction"] = round(battery_life_reduction(normal_life, report["minutes"] / 60), 3)
    _emit(report)
    return 0


def cmd_discover(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    result = sniff_scenario(scenario, probe=not args.passive)
    own = [scenario.attack.attacker_mac, scenario.attack.spoofed_ap_mac] if scenario.attack else []
    found = discover_targets(result.captured, own_macs=own)
    _emit({
        "ap_mac": found.ap_mac,
        "ssid": found.ssid,
        "clients": [{"mac": mac, "aid": aid} for mac, aid in found.clients],
    })
    return 0


def build_parser() -> argparse.ArgumentParser:
    settings = Settings.from_env()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the scenario seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="errors as JSON on stderr")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS, help="debug logging")
    common.add_argument("--profiles", default=argparse.SUPPRESS, help="device/battery profile file")

    parser = argparse.ArgumentParser(prog="cli.py", description="802.11 loophole simulator", parents=[common])
    parser.set_defaults(seed=None, out=settings.output_dir, json=False, verbose=False, profiles=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run a keep-awake / query scenario")
    p.add_argument("scenario")
    p.add_argument("--record", action="store_true", help="store the run in the sqlite registry")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", parents=[common], help="synthesize a CSI trace")
    p.add_argument("scenario")
    p.add_argument("--output", "-o", help="trace file (default <out>/<scenario>.csv)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sense", parents=[common], help="estimate breathing rate from a trace")
    p.add_argument("trace")
    p.add_argument("--truth-bpm", type=float, help="ground truth for the accuracy summary")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--max-persons", type=int, default=1, help="report up to this many rates from the last window")
    p.set_defaults(func=cmd_sense)

    p = sub.add_parser("drain", parents=[common], help="battery drain time under a query flood")
    p.add_argument("--query", required=True, help="null, rts, bar or data")
    p.add_argument("--bitrate", type=float, default=1.0, help="Mbps")
    p.add_argument("--device", required=True)
    p.add_argument("--battery", required=True)
    p.add_argument("--fraction", type=float, default=1.0, help="share of the battery to drain")
    p.add_argument("--beacon-period-ms", type=float, default=200.0, help="keep-awake beacon period, 0 for none")
    p.set_defaults(func=cmd_drain)

    p = sub.add_parser("discover", parents=[common], help="find the AP and its clients")
    p.add_argument("scenario")
    p.add_argument("--passive", action="store_true", help="do not inject the probe beacon")
    p.set_defaults(func=cmd_discover)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(verbose=args.verbose)
    logger.info(f"🚀 {args.command} started")
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        logger.error(f"❌ Error in {args.command}: {e}")
        if args.json:
            sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
