"""
Scenario runner: one seeded event loop over the shared medium.

The attacker's frames, the legitimate AP's TBTT beacons and every station's
power-save schedule go through a single EventQueue. A frame is handed to its
receivers when its last bit arrives; a receiver only gets it if the medium
delivers it and the radio was up for the whole frame.
"""

import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from attacker import AttackConfig, ScheduledFrame, plan_keep_awake, probe_beacon
from csi import BreathScenario
from energy import DeviceProfile
from frames import (
    BROADCAST_MAC,
    RESPONSES,
    Frame,
    FrameKind,
    PhyTiming,
    airtime_us,
    encode_tim,
    frame_airtime_us,
    response_bitrate,
)
from medium import (
    DEFAULT_REPLY_RATES,
    EventQueue,
    ReplyRateTable,
    SeededRNG,
    deliver,
    sampled_backoff_us,
)
from station import (
    TBTT_US,
    StationState,
    advance,
    begin_listen,
    energy_report,
    on_beacon,
    on_frame,
    received_since,
    suspicion_check,
)

logger = logging.getLogger(__name__)

TIMELINE_BIN_US = 100_000.0
EVENT_FIELDS = ["t_us", "event", "station", "src", "dst", "kind", "detail"]
TIMELINE_FIELDS = ["t_s", "station", "awake_fraction", "queries", "responses"]


@dataclass
class StationSetup:
    mac: str
    aid: int = 1
    distance_m: float = 5.0
    is_ap: bool = False
    deauth_on_fake: bool = False
    associated: Tuple[str, ...] = ()
    blocked_macs: Tuple[str, ...] = ()
    profile: str = "esp32"
    listen_interval_us: float = TBTT_US
    awake_timeout_us: float = 500_000.0
    listen_window_us: float = 5_000.0
    suspicion_threshold_per_s: float = 20.0
    start_awake: bool = True


@dataclass
class Scenario:
    name: str
    ap_mac: str
    ssid: str
    stations: List[StationSetup]
    attack: Optional[AttackConfig] = None
    phy: PhyTiming = field(default_factory=PhyTiming)
    reply_rates: ReplyRateTable = DEFAULT_REPLY_RATES
    duration_s: float = 10.0
    seed: int = 0
    legit_beacons: bool = True
    breath: Optional[BreathScenario] = None

    @property
    def duration_us(self) -> float:
        return self.duration_s * 1e6

    def station(self, mac: str) -> Optional[StationSetup]:
        for setup in self.stations:
            if setup.mac.lower() == mac.lower():
                return setup
        return None


@dataclass(frozen=True)
class EventRow:
    t_us: float
    event: str
    station: str = ""
    src: str = ""
    dst: str = ""
    kind: str = ""
    detail: str = ""

    def to_row(self) -> List[str]:
        return [f"{self.t_us:.3f}", self.event, self.station, self.src, self.dst, self.kind, self.detail]


@dataclass
class SimulationResult:
    scenario: str
    seed: int
    duration_us: float
    events: List[EventRow]
    stations: Dict[str, StationState]
    summaries: Dict[str, Dict]
    timeline: List[List]
    captured: List[Frame] = field(default_factory=list)

    def summary(self, mac: str) -> Dict:
        return self.summaries[mac.lower()]


class _Run:
    """Mutable state of one scenario run"""

    def __init__(self, scenario: Scenario, profiles: Optional[Dict[str, DeviceProfile]] = None):
        self.scenario = scenario
        self.profiles = profiles or {}
        self.phy = scenario.phy
        self.t_end = scenario.duration_us
        rng = SeededRNG(scenario.seed)
        self.medium_rng = rng.fork()
        self.backoff_rng = rng.fork()
        self.queue = EventQueue()
        self.rows: List[Tuple[float, int, EventRow]] = []
        self.captured: List[Tuple[float, int, Frame]] = []
        self._seq = 0
        self.queries_at: Dict[str, List[float]] = defaultdict(list)
        self.responses_at: Dict[str, List[float]] = defaultdict(list)
        self.delivered: Counter = Counter()
        self.distance = {s.mac.lower(): s.distance_m for s in scenario.stations}
        self.stations: Dict[str, StationState] = {}
        for setup in scenario.stations:
            state = StationState(
                mac=setup.mac,
                aid=setup.aid,
                ap_mac=scenario.ap_mac,
                ssid=scenario.ssid,
                phy=self.phy,
                beacon_listen_interval_us=setup.listen_interval_us,
                awake_timeout_us=setup.awake_timeout_us,
                listen_window_us=setup.listen_window_us,
                suspicion_threshold_per_s=setup.suspicion_threshold_per_s,
                is_ap=setup.is_ap,
                deauth_on_fake=setup.deauth_on_fake,
                associated={m.lower() for m in setup.associated},
                blocked_macs={m.lower() for m in setup.blocked_macs},
                start_awake=setup.start_awake,
                profile=setup.profile,
            )
            self.stations[state.mac] = state

    def log(self, t: float, event: str, station: str = "", frame: Optional[Frame] = None, detail: str = ""):
        self._seq += 1
        if frame is not None:
            row = EventRow(t, event, station, frame.src, frame.dst, frame.kind.value, detail)
        else:
            row = EventRow(t, event, station, detail=detail)
        self.rows.append((t, self._seq, row))

    def capture(self, t: float, frame: Frame):
        self._seq += 1
        self.captured.append((t, self._seq, frame))

    def transmit(self, t_start: float, frame: Frame):
        """Put a frame on the air at t_start; receivers see it when it ends"""
        if t_start < self.queue.now or t_start > self.t_end:
            return
        t_done = t_start + frame_airtime_us(frame, self.phy)
        if t_done > self.t_end:
            return
        self.queue.schedule(t_done, (t_start, frame), self._arrive)

    def _receivers(self, frame: Frame) -> List[StationState]:
        if frame.dst.lower() == BROADCAST_MAC:
            return [s for mac, s in sorted(self.stations.items()) if mac != frame.src.lower()]
        state = self.stations.get(frame.dst.lower())
        return [state] if state is not None else []

    def _arrive(self, now: float, payload):
        t_start, frame = payload
        from_ap = frame.src.lower() == self.scenario.ap_mac
        self.log(t_start, "tx", "", frame)
        self.capture(t_start, frame)
        for state in self._receivers(frame):
            if frame.kind is not FrameKind.BEACON:
                self.queries_at[state.mac].append(t_start)
            if not from_ap and not deliver(self.distance.get(state.mac, 0.0), self.scenario.reply_rates, self.medium_rng):
                self.log(now, "lost", state.mac, frame)
                continue
            if not received_since(state, t_start, now):
                self.log(now, "missed", state.mac, frame)
                continue
            self.log(now, "rx", state.mac, frame)
            if frame.kind is FrameKind.BEACON:
                self._beacon(state, frame, now)
            else:
                self._frame(state, frame, now)

    def _beacon(self, state: StationState, beacon: Frame, now: float):
        was_blocked = beacon.src.lower() in state.disconnected_from
        suspicion_check(state, beacon.src, now)
        if not was_blocked and beacon.src.lower() in state.disconnected_from:
            self.log(now, "blacklist", state.mac, beacon, detail=f"{len(state.beacon_history[beacon.src.lower()])} beacons/window")
        _, reply = on_beacon(state, beacon, now)
        if reply is not None:
            t_reply = now + self.phy.sifs_us
            self.log(t_reply, "nullfunc", state.mac, reply, detail=f"aid={reply.aid}")
            self.capture(t_reply, reply)
        elif beacon.tim is not None and not state.power.awake:
            self.log(now, "sleep", state.mac)

    def _frame(self, state: StationState, frame: Frame, now: float):
        self.delivered[state.mac] += 1
        _, response, deauth = on_frame(state, frame, now)
        t = now + self.phy.sifs_us
        if response is not None:
            self.responses_at[state.mac].append(t)
            self.log(t, "response", state.mac, response)
            self.capture(t, response)
            t += frame_airtime_us(response, self.phy) + self.phy.sifs_us
        if deauth is not None:
            self.log(t, "deauth", state.mac, deauth)
            self.capture(t, deauth)

    def schedule_power_save(self):
        """Legitimate TBTT beacons and each station's listen wake-ups"""
        if self.scenario.legit_beacons:
            beacon = Frame(FrameKind.BEACON, src=self.scenario.ap_mac, dst=BROADCAST_MAC,
                           tim=encode_tim(()), ssid=self.scenario.ssid)
            t = 0.0
            while t < self.t_end:
                self.transmit(t, beacon)
                t += TBTT_US
        for mac, state in sorted(self.stations.items()):
            if state.is_ap:
                continue
            interval = state.beacon_listen_interval_us
            t = 0.0 if not state.start_awake else interval
            while t < self.t_end:
                self.queue.schedule(t, state, self._listen)
                t += interval

    def _listen(self, now: float, state: StationState):
        was_awake = state.power.awake
        begin_listen(state, now)
        if not was_awake and state.power.awake:
            self.log(now, "listen", state.mac)

    def schedule_attack(self, attack: AttackConfig):
        if attack.query_rate == "saturate":
            beacons = plan_keep_awake(replace(attack, query_rate=0), self.t_end, self.phy,
                                      self._threshold(attack.target))
            entries = list(beacons.entries) + self._saturating_queries(attack)
        else:
            entries = list(plan_keep_awake(attack, self.t_end, self.phy, self._threshold(attack.target)).entries)
        for entry in sorted(entries, key=lambda e: (e.t_us, e.frame.kind is not FrameKind.BEACON)):
            self.transmit(entry.t_us, entry.frame)

    def _threshold(self, target: str) -> float:
        setup = self.scenario.station(target)
        return setup.suspicion_threshold_per_s if setup is not None else 20.0

    def _saturating_queries(self, attack: AttackConfig) -> List[ScheduledFrame]:
        """Back-to-back exchanges, each preceded by DIFS and a sampled backoff"""
        query = Frame(attack.query_kind, src=attack.attacker_mac, dst=attack.target,
                      bitrate=attack.query_bitrate, payload_bytes=attack.payload_bytes)
        query_air = airtime_us(attack.query_kind, attack.query_bitrate, self.phy, attack.payload_bytes)
        response = RESPONSES[attack.query_kind]
        response_air = airtime_us(response, response_bitrate(attack.query_kind, attack.query_bitrate, self.phy), self.phy)
        entries = []
        t = 0.0
        while True:
            start = t + self.phy.difs_us + sampled_backoff_us(self.phy, self.backoff_rng)
            done = start + query_air + self.phy.sifs_us + response_air
            if done > self.t_end:
                return entries
            entries.append(ScheduledFrame(start, query))
            t = done

    def finish(self) -> SimulationResult:
        for state in self.stations.values():
            advance(state, self.t_end)
        summaries = {mac: self._summarize(state) for mac, state in sorted(self.stations.items())}
        rows = [row for _, _, row in sorted(self.rows, key=lambda r: (r[0], r[1]))]
        captured = [f for _, _, f in sorted(self.captured, key=lambda c: (c[0], c[1]))]
        return SimulationResult(
            scenario=self.scenario.name,
            seed=self.scenario.seed,
            duration_us=self.t_end,
            events=rows,
            stations=self.stations,
            summaries=summaries,
            timeline=self._timeline(),
            captured=captured,
        )

    def _bins(self) -> List[float]:
        n = int(self.t_end // TIMELINE_BIN_US) + (1 if self.t_end % TIMELINE_BIN_US else 0)
        return [i * TIMELINE_BIN_US for i in range(n)]

    def _awake_in(self, state: StationState, lo: float, hi: float) -> float:
        total = 0.0
        for start, end in state.awake_intervals:
            end = self.t_end if end is None else end
            total += max(0.0, min(end, hi) - max(start, lo))
        return total

    def _timeline(self) -> List[List]:
        rows = []
        for mac, state in sorted(self.stations.items()):
            queries = _histogram(self.queries_at[mac], TIMELINE_BIN_US)
            responses = _histogram(self.responses_at[mac], TIMELINE_BIN_US)
            for lo in self._bins():
                hi = min(lo + TIMELINE_BIN_US, self.t_end)
                i = int(lo // TIMELINE_BIN_US)
                rows.append([
                    f"{lo / 1e6:.1f}", mac, f"{self._awake_in(state, lo, hi) / (hi - lo):.4f}",
                    queries.get(i, 0), responses.get(i, 0),
                ])
        return rows

    def _summarize(self, state: StationState) -> Dict:
        queries = len(self.queries_at[state.mac])
        responses = len(self.responses_at[state.mac])
        sent_bins = set(_histogram(self.queries_at[state.mac], TIMELINE_BIN_US))
        answered_bins = set(_histogram(self.responses_at[state.mac], TIMELINE_BIN_US))
        summary = {
            "awake_fraction": round(state.awake_time_us(self.t_end) / self.t_end, 6),
            "queries_sent": queries,
            "delivered": self.delivered[state.mac],
            "responses": responses,
            "answered_fraction": round(responses / queries, 6) if queries else 0.0,
            "response_coverage": round(len(sent_bins & answered_bins) / len(sent_bins), 6) if sent_bins else 0.0,
            "blacklisted": sorted(state.disconnected_from),
            "time_fractions": {k: round(v, 6) for k, v in state.ledger.fractions().items()},
            "ledger_us": {k: round(v, 3) for k, v in state.ledger.to_dict().items()},
            "diagnostics": dict(sorted(state.diagnostics.items())),
        }
        profile = self.profiles.get(state.profile.lower())
        if profile is not None:
            power, _ = energy_report(state, profile)
            summary["avg_power_W"] = round(power, 6)
        return summary


def _histogram(times: Sequence[float], bin_us: float) -> Dict[int, int]:
    counts: Dict[int, int] = Counter()
    for t in times:
        counts[int(t // bin_us)] += 1
    return counts


def run_scenario(scenario: Scenario, profiles: Optional[Dict[str, DeviceProfile]] = None) -> SimulationResult:
    """Run a scenario to its end; identical seeds give identical results"""
    logger.info(f"🚀 Simulating '{scenario.name}' for {scenario.duration_s:g} s (seed {scenario.seed})")
    run = _Run(scenario, profiles)
    run.schedule_power_save()
    if scenario.attack is not None:
        run.schedule_attack(scenario.attack)
    dispatched = run.queue.run_until(run.t_end)
    result = run.finish()
    for mac, summary in result.summaries.items():
        logger.info(
            f"📊 {mac}: awake {summary['awake_fraction']:.1%}, "
            f"{summary['responses']}/{summary['queries_sent']} queries answered"
        )
    logger.debug(f"{dispatched} events dispatched")
    return result


def sniff_scenario(scenario: Scenario, probe_at_us: float = 1_000.0, probe: bool = True) -> SimulationResult:
    """Run the scenario's legitimate traffic plus one TIM-all-set probe and keep every frame on the air"""
    attack = scenario.attack
    run = _Run(replace(scenario, attack=None))
    run.schedule_power_save()
    if probe:
        spoofed_mac, ssid = attack.spoofed_ap if attack is not None else ("02:00:00:00:00:01", scenario.ssid)
        run.transmit(probe_at_us, probe_beacon(spoofed_mac, ssid))
    run.queue.run_until(run.t_end)
    result = run.finish()
    logger.info(f"📡 Captured {len(result.captured)} frames from '{scenario.name}'")
    return result


def write_outputs(result: SimulationResult, out_dir: str) -> Dict[str, str]:
    """events.csv, ledger.jsonl and timeline.csv under out_dir"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "events": os.path.join(out_dir, "events.csv"),
        "ledger": os.path.join(out_dir, "ledger.jsonl"),
        "timeline": os.path.join(out_dir, "timeline.csv"),
    }
    events = pd.DataFrame([row.to_row() for row in result.events], columns=EVENT_FIELDS)
    events.to_csv(paths["events"], index=False, lineterminator="\n")
    with open(paths["ledger"], "w", encoding="utf-8", newline="\n") as f:
        for mac, summary in result.summaries.items():
            f.write(json.dumps({"station": mac, **summary}, sort_keys=True) + "\n")
    timeline = pd.DataFrame(result.timeline, columns=TIMELINE_FIELDS)
    timeline.to_csv(paths["timeline"], index=False, lineterminator="\n")
    logger.info(f"✅ Wrote {len(result.events)} events to {out_dir}")
    return paths
