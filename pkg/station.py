import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Set, Tuple

from energy import DeviceProfile, average_power
from frames import (
    Frame,
    FrameError,
    FrameKind,
    PhyTiming,
    frame_airtime_us,
    response_bitrate,
    response_for,
    tim_bit,
)

logger = logging.getLogger(__name__)

TBTT_US = 102_400.0


class PowerMode(Enum):
    ASLEEP = "asleep"
    AWAITING_BEACON = "awaiting_beacon"
    AWAKE = "awake"


@dataclass(frozen=True)
class PowerState:
    mode: PowerMode
    until_us: Optional[float] = None  # None while asleep or awake indefinitely

    @property
    def awake(self) -> bool:
        return self.mode is not PowerMode.ASLEEP


ASLEEP = PowerState(PowerMode.ASLEEP)


@dataclass
class EnergyLedger:
    """Time spent per radio state, µs. The four buckets always add up to elapsed time."""

    sleep_us: float = 0.0
    idle_us: float = 0.0
    rx_us: float = 0.0
    tx_us: float = 0.0
    start_us: float = 0.0
    last_us: float = 0.0
    busy_until_us: float = 0.0
    # (start, end, bucket) radio activity not yet reached by last_us
    pending: Deque[Tuple[float, float, str]] = field(default_factory=deque)

    @property
    def elapsed_us(self) -> float:
        return self.last_us - self.start_us

    def fractions(self) -> Dict[str, float]:
        total = self.elapsed_us
        if total <= 0:
            return {"sleep": 0.0, "idle": 0.0, "rx": 0.0, "tx": 0.0}
        return {
            "sleep": self.sleep_us / total,
            "idle": self.idle_us / total,
            "rx": self.rx_us / total,
            "tx": self.tx_us / total,
        }

    def to_dict(self) -> Dict[str, float]:
        return {
            "sleep_us": self.sleep_us,
            "idle_us": self.idle_us,
            "rx_us": self.rx_us,
            "tx_us": self.tx_us,
            "elapsed_us": self.elapsed_us,
        }


@dataclass
class StationState:
    mac: str
    aid: int
    ap_mac: str
    ssid: str
    phy: PhyTiming = field(default_factory=PhyTiming)
    beacon_listen_interval_us: float = TBTT_US
    awake_timeout_us: float = 500_000.0
    listen_window_us: float = 5_000.0
    suspicion_threshold_per_s: float = 20.0
    suspicion_window_us: float = 1_000_000.0
    is_ap: bool = False
    deauth_on_fake: bool = False
    associated: Set[str] = field(default_factory=set)
    blocked_macs: Set[str] = field(default_factory=set)
    start_awake: bool = True
    profile: str = "esp32"
    start_us: float = 0.0
    power: PowerState = ASLEEP
    disconnected_from: Set[str] = field(default_factory=set)
    ledger: EnergyLedger = field(default_factory=EnergyLedger)
    last_listen_us: float = 0.0
    awake_since_us: Optional[float] = None
    awake_intervals: List[Tuple[float, Optional[float]]] = field(default_factory=list)
    beacon_history: Dict[str, Deque[float]] = field(default_factory=dict)
    diagnostics: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self.mac = self.mac.lower()
        self.ap_mac = self.ap_mac.lower()
        self.ledger = EnergyLedger(start_us=self.start_us, last_us=self.start_us, busy_until_us=self.start_us)
        self.last_listen_us = self.start_us
        if self.is_ap:
            self._wake(self.start_us, PowerState(PowerMode.AWAKE, None))
        elif self.start_awake:
            self._wake(self.start_us, PowerState(PowerMode.AWAKE, self.start_us + self.awake_timeout_us))

    @property
    def suspicion_count_threshold(self) -> float:
        return self.suspicion_threshold_per_s * self.suspicion_window_us / 1e6

    def _wake(self, now: float, power: PowerState) -> None:
        if not self.power.awake:
            self.awake_since_us = now
            self.awake_intervals.append((now, None))
        self.power = power

    def _sleep(self, now: float) -> None:
        if self.power.awake and self.awake_intervals:
            start, _ = self.awake_intervals[-1]
            self.awake_intervals[-1] = (start, now)
        self.power = ASLEEP
        self.awake_since_us = None
        logger.debug(f"{self.mac} asleep at {now:.0f} µs")

    def _hold_awake(self, until_us: float) -> None:
        """Keep the radio up at least until `until_us` (pending transmissions)"""
        if self.power.until_us is not None and self.power.until_us < until_us:
            self.power = PowerState(self.power.mode, until_us)

    def awake_time_us(self, t_end: float) -> float:
        total = 0.0
        for start, end in self.awake_intervals:
            total += min(end if end is not None else t_end, t_end) - start
        return total


def _book(state: StationState, t: float) -> None:
    ledger = state.ledger
    dt = t - ledger.last_us
    if dt <= 0:
        return
    busy = 0.0
    while ledger.pending:
        start, end, bucket = ledger.pending[0]
        lo, hi = max(start, ledger.last_us), min(end, t)
        if hi > lo:
            setattr(ledger, bucket, getattr(ledger, bucket) + hi - lo)
            busy += hi - lo
        if end > t:
            break
        ledger.pending.popleft()
    if state.power.awake:
        ledger.idle_us += dt - busy
    else:
        ledger.sleep_us += dt - busy
    ledger.last_us = t


def _book_busy(state: StationState, bucket: str, start_us: float, end_us: float) -> None:
    """Charge [start_us, end_us) to `bucket`.

    Time already booked moves over from idle; the rest is booked as the ledger
    reaches it. The radio does one thing at a time, so overlaps are dropped.
    """
    ledger = state.ledger
    start_us = max(start_us, ledger.busy_until_us)
    if end_us <= start_us:
        return
    ledger.busy_until_us = end_us
    past = min(max(min(end_us, ledger.last_us) - start_us, 0.0), ledger.idle_us)
    ledger.idle_us -= past
    setattr(ledger, bucket, getattr(ledger, bucket) + past)
    if end_us > ledger.last_us:
        ledger.pending.append((max(start_us, ledger.last_us), end_us, bucket))


def advance(state: StationState, now: float) -> StationState:
    """Bring the ledger up to `now`, expiring an awake deadline on the way"""
    power = state.power
    if power.awake and power.until_us is not None and power.until_us <= now:
        _book(state, power.until_us)
        state._sleep(power.until_us)
    _book(state, now)
    return state


def is_receptive(state: StationState, now: float) -> bool:
    power = state.power
    if not power.awake:
        return False
    return power.until_us is None or now < power.until_us


def received_since(state: StationState, start_us: float, now: float) -> bool:
    """True if the radio was up for the whole of [start_us, now]"""
    advance(state, now)
    return (
        is_receptive(state, now)
        and state.awake_since_us is not None
        and state.awake_since_us <= start_us
    )


def on_frame(state: StationState, frame: Frame, now: float) -> Tuple[StationState, Optional[Frame], Optional[Frame]]:
    """Handle a frame that finished arriving at `now`.

    The caller guarantees the station was awake for the whole frame. The state is
    updated in place and returned. A response goes out SIFS later whatever the
    frame's source; blocking or deauthenticating the source never stops it.
    """
    advance(state, now)
    state.diagnostics["frames_received"] += 1
    _book_busy(state, "rx_us", now - frame_airtime_us(frame, state.phy), now)

    response = None
    deauth = None
    tx_end = now
    kind = response_for(frame, state.mac)
    if kind is not None:
        response = Frame(kind, src=state.mac, dst=frame.src,
                         bitrate=response_bitrate(frame.kind, frame.bitrate, state.phy))
        air = frame_airtime_us(response, state.phy)
        tx_end = now + state.phy.sifs_us + air
        _book_busy(state, "tx_us", tx_end - air, tx_end)
        state.diagnostics["responses_sent"] += 1

    addressed = frame.dst.lower() == state.mac
    src = frame.src.lower()
    if addressed and src in state.blocked_macs:
        state.diagnostics["blocked_frames"] += 1
    elif addressed and state.is_ap and state.deauth_on_fake and src not in state.associated:
        deauth = Frame(FrameKind.DEAUTHENTICATION, src=state.mac, dst=frame.src,
                       bitrate=state.phy.ack_rate(frame.bitrate))
        air = frame_airtime_us(deauth, state.phy)
        tx_end = tx_end + state.phy.sifs_us + air
        _book_busy(state, "tx_us", tx_end - air, tx_end)
        state.diagnostics["deauth_sent"] += 1
        logger.debug(f"{state.mac} deauthenticating {src} at {now:.0f} µs")

    state._hold_awake(tx_end)
    return state, response, deauth


def suspicion_check(state: StationState, beacon_src: str, now: float) -> StationState:
    src = beacon_src.lower()
    if src == state.ap_mac or src in state.disconnected_from:
        return state
    history = state.beacon_history.setdefault(src, deque())
    history.append(now)
    while history and history[0] <= now - state.suspicion_window_us:
        history.popleft()
    if len(history) > state.suspicion_count_threshold:
        state.disconnected_from.add(src)
        state.diagnostics["blacklisted"] += 1
        logger.warning(
            f"⚠️ {state.mac} saw {len(history)} beacons from {src} within "
            f"{state.suspicion_window_us / 1e6:g} s, disconnecting"
        )
    return state


def on_beacon(state: StationState, beacon: Frame, now: float) -> Tuple[StationState, Optional[Frame]]:
    advance(state, now)
    _book_busy(state, "rx_us", now - frame_airtime_us(beacon, state.phy), now)
    if beacon.src.lower() in state.disconnected_from:
        state.diagnostics["ignored_beacons"] += 1
        return state, None
    if beacon.tim is None:
        state.diagnostics["malformed_beacons"] += 1
        return state, None
    try:
        notified = tim_bit(beacon.tim, state.aid)
    except FrameError:
        state.diagnostics["malformed_beacons"] += 1
        return state, None

    if not notified:
        # An awake station keeps its pending deadline; only a listening one dozes off
        if state.power.mode is PowerMode.AWAITING_BEACON:
            state._sleep(now)
        return state, None

    if state.power.awake and state.power.until_us is None:
        return state, None
    until = now + state.awake_timeout_us
    if state.power.awake:
        until = max(until, state.power.until_us)
    state._wake(now, PowerState(PowerMode.AWAKE, until))
    reply = Frame(FrameKind.NULL_FUNCTION, src=state.mac, dst=beacon.src,
                  bitrate=beacon.bitrate, pm_bit=False, aid=state.aid)
    air = frame_airtime_us(reply, state.phy)
    _book_busy(state, "tx_us", now + state.phy.sifs_us, now + state.phy.sifs_us + air)
    state._hold_awake(now + state.phy.sifs_us + air)
    state.diagnostics["null_function_sent"] += 1
    return state, reply


def begin_listen(state: StationState, now: float) -> StationState:
    """TBTT: a sleeping station wakes up and waits for the beacon"""
    advance(state, now)
    state.last_listen_us = now
    if not state.power.awake:
        state._wake(now, PowerState(PowerMode.AWAITING_BEACON, now + state.listen_window_us))
    return state


def tick_sleep_schedule(state: StationState, now: float) -> float:
    advance(state, now)
    if state.power.mode is PowerMode.AWAKE:
        return state.power.until_us if state.power.until_us is not None else float("inf")
    return state.last_listen_us + state.beacon_listen_interval_us


def energy_report(state: StationState, profile: DeviceProfile) -> Tuple[float, Dict[str, float]]:
    return average_power(state.ledger.fractions(), profile)
