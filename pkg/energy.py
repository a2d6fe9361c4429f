import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from attacker import AttackConfig
from frames import (
    BROADCAST_MAC,
    RESPONSES,
    Frame,
    FrameKind,
    PhyTiming,
    airtime_us,
    all_set_tim,
    encode_tim,
    frame_airtime_us,
    response_bitrate,
)
from medium import exchange_cycle_us, expected_backoff_us

logger = logging.getLogger(__name__)

IDLE_TO_RX_RATIO = 0.8
STATES = ("sleep", "idle", "rx", "tx")


class EnergyError(ValueError):
    """Raised for impossible power or battery figures."""


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    rx_mA: float
    tx_mA: float
    idle_mA: Optional[float] = None
    sleep_mA: float = 0.0
    voltage_V: float = 3.3
    # Whole-device power under attack when known from measurement
    drain_power_W: Optional[float] = None

    def __post_init__(self):
        if self.idle_mA is None:
            object.__setattr__(self, "idle_mA", self.rx_mA * IDLE_TO_RX_RATIO)
        if not self.tx_mA >= self.rx_mA >= self.idle_mA >= self.sleep_mA >= 0:
            raise EnergyError(
                f"Profile {self.name}: need tx >= rx >= idle >= sleep >= 0, got "
                f"{self.tx_mA}/{self.rx_mA}/{self.idle_mA}/{self.sleep_mA} mA"
            )
        if self.voltage_V <= 0:
            raise EnergyError(f"Profile {self.name}: voltage must be positive")
        if self.drain_power_W is not None and self.drain_power_W <= 0:
            raise EnergyError(f"Profile {self.name}: drain power must be positive")

    def current_mA(self, state: str) -> float:
        return {"sleep": self.sleep_mA, "idle": self.idle_mA, "rx": self.rx_mA, "tx": self.tx_mA}[state]


@dataclass(frozen=True)
class BatterySpec:
    name: str
    voltage_V: float
    capacity_Wh: float

    def __post_init__(self):
        if self.capacity_Wh <= 0:
            raise EnergyError(f"Battery {self.name}: capacity must be positive, got {self.capacity_Wh}")

    @classmethod
    def from_mAh(cls, name: str, voltage_V: float, capacity_mAh: float) -> "BatterySpec":
        return cls(name, voltage_V, capacity_mAh / 1000 * voltage_V)


@dataclass
class DrainReport:
    device: str
    battery: str
    attack: str
    avg_power_W: float
    time_fractions: Dict[str, float]
    fraction: float
    minutes: float
    breakdown_W: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "device": self.device,
            "battery": self.battery,
            "attack": self.attack,
            "avg_power_W": round(self.avg_power_W, 6),
            "time_fractions": {k: round(v, 6) for k, v in self.time_fractions.items()},
            "breakdown_W": {k: round(v, 6) for k, v in self.breakdown_W.items()},
            "fraction": self.fraction,
            "minutes": round(self.minutes, 3),
            "hours": round(self.minutes / 60, 3),
        }


def average_power(fractions: Dict[str, float], profile: DeviceProfile) -> Tuple[float, Dict[str, float]]:
    breakdown = {
        state: profile.current_mA(state) / 1000 * profile.voltage_V * fractions.get(state, 0.0)
        for state in STATES
    }
    return sum(breakdown.values()), breakdown


def _beacon_exchange(config: AttackConfig, phy: PhyTiming) -> Tuple[float, float, float]:
    """(rx µs, tx µs, channel µs) for one forged beacon and the NullFunction it triggers"""
    beacon = Frame(FrameKind.BEACON, src=config.spoofed_ap_mac, dst=config.target,
                   bitrate=config.beacon_bitrate, tim=all_set_tim(config.tim_bits), ssid=config.spoofed_ssid)
    reply = Frame(FrameKind.NULL_FUNCTION, src=config.target, dst=config.spoofed_ap_mac,
                  bitrate=config.beacon_bitrate, pm_bit=False)
    rx = frame_airtime_us(beacon, phy)
    tx = frame_airtime_us(reply, phy)
    return rx, tx, phy.difs_us + expected_backoff_us(phy) + rx + phy.sifs_us + tx


def victim_airtime(config: AttackConfig, phy: PhyTiming = PhyTiming(),
                   listen_interval_us: float = 102_400.0) -> Dict[str, float]:
    """Fractions of time the victim spends in sleep/idle/rx/tx under an attack.

    The victim is taken to be held awake for the whole attack. With no queries
    and no beacons it follows the plain power-save schedule: asleep except for
    one beacon reception per listen interval.
    """
    rate = config.query_rate_per_s(phy) if config.query_rate != 0 else 0.0
    if rate == 0 and config.beacon_period_us == 0:
        legit = Frame(FrameKind.BEACON, src=config.spoofed_ap_mac, dst=BROADCAST_MAC,
                      tim=encode_tim((), config.tim_bits), ssid=config.spoofed_ssid)
        rx = min(frame_airtime_us(legit, phy) / listen_interval_us, 1.0)
        return {"sleep": 1.0 - rx, "idle": 0.0, "rx": rx, "tx": 0.0}

    query_air = airtime_us(config.query_kind, config.query_bitrate, phy, config.payload_bytes)
    response = RESPONSES[config.query_kind]
    response_air = airtime_us(response, response_bitrate(config.query_kind, config.query_bitrate, phy), phy)

    beacons_per_s = 1e6 / config.beacon_period_us if config.beacon_period_us > 0 else 0.0
    b_rx, b_tx, b_channel = _beacon_exchange(config, phy)
    if config.query_rate == "saturate":
        cycle = exchange_cycle_us(config.query_kind, config.query_bitrate, phy, config.payload_bytes)
        rate = max(1e6 - beacons_per_s * b_channel, 0.0) / cycle

    rx_us = rate * query_air + beacons_per_s * b_rx
    tx_us = rate * response_air + beacons_per_s * b_tx
    busy = rx_us + tx_us
    if busy > 1e6:
        rx_us, tx_us = rx_us * 1e6 / busy, tx_us * 1e6 / busy
    rx, tx = rx_us / 1e6, tx_us / 1e6
    return {"sleep": 0.0, "idle": max(1.0 - rx - tx, 0.0), "rx": rx, "tx": tx}


def anchor_config(config: AttackConfig) -> AttackConfig:
    """The saturating BAR/1 flood a measured drain power was taken under, same beacons as `config`"""
    return replace(config, query_kind=FrameKind.BLOCK_ACK_REQUEST, query_bitrate=1.0,
                   query_rate="saturate", payload_bytes=0)


def attack_power(config: AttackConfig, device: DeviceProfile, phy: PhyTiming = PhyTiming()) -> Tuple[float, Dict[str, float], Dict[str, float]]:
    """(avg W, fractions, per-state W) for the victim under `config`.

    A measured drain power belongs to the BAR/1 flood; other attacks scale it by
    the airtime model's power relative to BAR/1.
    """
    fractions = victim_airtime(config, phy)
    power, breakdown = average_power(fractions, device)
    if device.drain_power_W is not None:
        anchor, _ = average_power(victim_airtime(anchor_config(config), phy), device)
        breakdown = {state: device.drain_power_W * (w / anchor) for state, w in breakdown.items()}
        power = device.drain_power_W * (power / anchor)
    return power, fractions, breakdown


def drain_time_minutes(battery: BatterySpec, avg_power_W: float, fraction: float = 1.0) -> float:
    if avg_power_W <= 0:
        raise EnergyError(f"Average power must be positive, got {avg_power_W} W")
    if not 0 < fraction <= 1:
        raise EnergyError(f"Drain fraction must be in (0, 1], got {fraction}")
    return fraction * battery.capacity_Wh / avg_power_W * 60


def drain_report(config: AttackConfig, device: DeviceProfile, battery: BatterySpec, fraction: float = 1.0,
                 phy: PhyTiming = PhyTiming()) -> DrainReport:
    power, fractions, breakdown = attack_power(config, device, phy)
    minutes = drain_time_minutes(battery, power, fraction)
    logger.info(
        f"🔋 {config.label} on {device.name}: {power:.3f} W drains {fraction:.0%} of "
        f"{battery.name} in {minutes:.1f} min"
    )
    return DrainReport(device.name, battery.name, config.label, power, fractions, fraction, minutes, breakdown)


def rank_configs(device: DeviceProfile, configs: Sequence[AttackConfig],
                 phy: PhyTiming = PhyTiming()) -> List[Tuple[AttackConfig, float]]:
    """Configs by modelled victim power, highest first; ties keep input order"""
    scored = []
    for config in configs:
        power, _ = average_power(victim_airtime(config, phy), device)
        scored.append((config, power))
    return sorted(scored, key=lambda item: -item[1])


def implied_drain_powers(rows: Sequence[Tuple[BatterySpec, float]]) -> List[float]:
    """Drain power each (battery, minutes-to-empty) row implies"""
    return [battery.capacity_Wh / (minutes / 60) for battery, minutes in rows]


def fit_drain_power(rows: Sequence[Tuple[BatterySpec, float]]) -> float:
    if not rows:
        raise EnergyError("Need at least one reference drain row")
    powers = implied_drain_powers(rows)
    return sum(powers) / len(powers)


def battery_life_reduction(normal_life_hours: float, attack_drain_hours: float) -> float:
    """How many times faster the attack empties the battery"""
    if attack_drain_hours <= 0:
        raise EnergyError("Attack drain time must be positive")
    return normal_life_hours / attack_drain_hours
