import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

BROADCAST_MAC = "ff:ff:ff:ff:ff:ff"
DEFAULT_TIM_BITS = 256

# WPA2 frame decode time on commodity chipsets (µs)
DECRYPT_TIME_RANGE_US = (200.0, 700.0)

DSSS_RATES = (1.0, 2.0, 5.5, 11.0)
DEFAULT_BASIC_RATES = (1.0, 2.0, 5.5, 11.0, 6.0, 12.0, 24.0)


class FrameError(ValueError):
    """Raised for malformed frames or invalid frame parameters."""


class FrameKind(Enum):
    NULL = "null"
    RTS = "rts"
    CTS = "cts"
    ACK = "ack"
    BLOCK_ACK_REQUEST = "bar"
    BLOCK_ACK = "ba"
    BEACON = "beacon"
    NULL_FUNCTION = "null_function"
    DEAUTHENTICATION = "deauth"
    DATA = "data"

    @classmethod
    def parse(cls, name: str) -> "FrameKind":
        """Accept enum values, member names and a few common aliases"""
        key = name.strip().lower().replace("-", "_")
        aliases = {
            "blockackrequest": "bar",
            "block_ack_request": "bar",
            "blockack": "ba",
            "block_ack": "ba",
            "nullfunction": "null_function",
            "deauthentication": "deauth",
            "datawithpayload": "data",
            "data_with_payload": "data",
        }
        key = aliases.get(key, key)
        for kind in cls:
            if kind.value == key or kind.name.lower() == key:
                return kind
        raise FrameError(f"Unknown frame kind '{name}'")


# On-air sizes in bytes, header + FCS. DATA and BEACON grow with their body.
FRAME_SIZES: Dict[FrameKind, int] = {
    FrameKind.NULL: 28,
    FrameKind.ACK: 14,
    FrameKind.RTS: 20,
    FrameKind.CTS: 14,
    FrameKind.BLOCK_ACK_REQUEST: 24,
    FrameKind.BLOCK_ACK: 32,
    FrameKind.NULL_FUNCTION: 28,
    FrameKind.DEAUTHENTICATION: 30,
    FrameKind.BEACON: 40,
    FrameKind.DATA: 28,
}

RESPONSES: Dict[FrameKind, FrameKind] = {
    FrameKind.NULL: FrameKind.ACK,
    FrameKind.DATA: FrameKind.ACK,
    FrameKind.RTS: FrameKind.CTS,
    FrameKind.BLOCK_ACK_REQUEST: FrameKind.BLOCK_ACK,
}

QUERY_KINDS: FrozenSet[FrameKind] = frozenset(
    {FrameKind.NULL, FrameKind.RTS, FrameKind.BLOCK_ACK_REQUEST, FrameKind.DATA}
)


@dataclass(frozen=True)
class TimBitmap:
    bits: Tuple[bool, ...]

    @property
    def length(self) -> int:
        return len(self.bits)

    def set_aids(self) -> FrozenSet[int]:
        return frozenset(i - 1 for i, bit in enumerate(self.bits) if bit and i >= 1)

    def to_bytes(self) -> bytes:
        return np.packbits(np.array(self.bits, dtype=np.uint8), bitorder="little").tobytes()


@dataclass(frozen=True)
class PhyTiming:
    """Interframe spaces, contention window and preambles of one band preset."""

    sifs_us: float = 10.0
    difs_us: float = 50.0
    slot_us: float = 20.0
    cw_min: int = 31
    dsss_preamble_us: float = 192.0
    ofdm_preamble_us: float = 16.0
    basic_rates: Tuple[float, ...] = DEFAULT_BASIC_RATES

    def preamble_us(self, bitrate: float) -> float:
        if bitrate in DSSS_RATES:
            return self.dsss_preamble_us
        return self.ofdm_preamble_us

    def ack_rate(self, data_bitrate: float) -> float:
        """Highest basic rate not above the data rate, lowest basic rate otherwise"""
        eligible = [r for r in self.basic_rates if r <= data_bitrate]
        if not eligible:
            return min(self.basic_rates)
        return max(eligible)


PHY_PRESETS: Dict[str, PhyTiming] = {
    "2.4ghz": PhyTiming(),
    "5ghz": PhyTiming(sifs_us=16.0, difs_us=34.0, slot_us=9.0, cw_min=15),
    # Long slot with the OFDM contention window: 6/1 Mbps BAR ratio ≈ 3.3
    "calibrated": PhyTiming(cw_min=15),
}


def phy_preset(name: str) -> PhyTiming:
    try:
        return PHY_PRESETS[name.lower()]
    except KeyError:
        raise FrameError(
            f"Unknown PHY preset '{name}', available: {', '.join(sorted(PHY_PRESETS))}"
        ) from None


@dataclass(frozen=True)
class Frame:
    kind: FrameKind
    src: str
    dst: str
    bitrate: float = 1.0
    tim: Optional[TimBitmap] = None
    pm_bit: Optional[bool] = None
    payload_bytes: int = 0
    ssid: Optional[str] = None
    # Simulation bookkeeping only: the aid a NullFunction sender answered for
    aid: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        # A beacon without TIM is malformed but representable; stations drop it
        if self.tim is not None and self.kind is not FrameKind.BEACON:
            raise FrameError(f"TIM only allowed on beacons, got {self.kind.value}")
        if (self.pm_bit is not None) != (self.kind is FrameKind.NULL_FUNCTION):
            raise FrameError("pm_bit must be set exactly on NullFunction frames")
        if self.payload_bytes < 0:
            raise FrameError(f"Negative payload size {self.payload_bytes}")
        if self.payload_bytes and self.kind is not FrameKind.DATA:
            raise FrameError(f"Payload only allowed on data frames, got {self.kind.value}")

    @property
    def size(self) -> int:
        if self.kind is FrameKind.BEACON:
            body = 2 + len((self.ssid or "").encode("utf-8"))
            if self.tim is not None:
                body += 2 + 3 + math.ceil(self.tim.length / 8)
            return frame_size(self.kind, body)
        return frame_size(self.kind, self.payload_bytes)

    @property
    def is_broadcast(self) -> bool:
        return self.dst.lower() == BROADCAST_MAC


def normalize_mac(mac: str) -> str:
    """Lower-case colon form; rejects anything that is not six octets"""
    parts = mac.strip().lower().replace("-", ":").split(":")
    if len(parts) != 6 or not all(len(p) == 2 for p in parts):
        raise FrameError(f"Invalid MAC address '{mac}'")
    try:
        [int(p, 16) for p in parts]
    except ValueError:
        raise FrameError(f"Invalid MAC address '{mac}'") from None
    return ":".join(parts)


def frame_size(kind: FrameKind, payload_bytes: int = 0) -> int:
    if payload_bytes < 0:
        raise FrameError(f"Negative payload size {payload_bytes}")
    base = FRAME_SIZES[kind]
    if kind in (FrameKind.DATA, FrameKind.BEACON):
        return base + payload_bytes
    return base


def response_for(frame: Frame, my_mac: str) -> Optional[FrameKind]:
    """Control response a station owes for a frame.

    Depends only on destination and kind; the source address and payload are
    never looked at.
    """
    if frame.is_broadcast or frame.dst.lower() != my_mac.lower():
        return None
    return RESPONSES.get(frame.kind)


def response_bitrate(query_kind: FrameKind, query_bitrate: float, phy: PhyTiming) -> float:
    """CTS/BA at the query's rate, ACK at the highest basic rate not above it"""
    if RESPONSES.get(query_kind) is FrameKind.ACK:
        return phy.ack_rate(query_bitrate)
    return query_bitrate


def airtime_us(kind: FrameKind, bitrate: float, phy: PhyTiming, payload_bytes: int = 0) -> float:
    if bitrate <= 0:
        raise FrameError(f"Bitrate must be positive, got {bitrate}")
    return phy.preamble_us(bitrate) + frame_size(kind, payload_bytes) * 8 / bitrate


def frame_airtime_us(frame: Frame, phy: PhyTiming) -> float:
    if frame.bitrate <= 0:
        raise FrameError(f"Bitrate must be positive, got {frame.bitrate}")
    return phy.preamble_us(frame.bitrate) + frame.size * 8 / frame.bitrate


def encode_tim(notified_aids: Iterable[int], length: int = DEFAULT_TIM_BITS) -> TimBitmap:
    bits = [False] * length
    for aid in sorted(set(notified_aids)):
        if aid < 0 or aid + 1 >= length:
            raise FrameError(f"aid {aid} does not fit a {length}-bit TIM")
        bits[aid + 1] = True
    return TimBitmap(tuple(bits))


def all_set_tim(length: int = DEFAULT_TIM_BITS) -> TimBitmap:
    """Every client bit set, the 0xFF trick"""
    return encode_tim(range(length - 1), length)


def tim_bit(bitmap: TimBitmap, aid: int) -> bool:
    if aid < 0 or aid + 1 >= bitmap.length:
        raise FrameError(f"aid {aid} does not fit a {bitmap.length}-bit TIM")
    return bitmap.bits[aid + 1]


def verification_deadline_missed(phy: PhyTiming, decrypt_us: float = DECRYPT_TIME_RANGE_US[0]) -> bool:
    """True when a receiver cannot decode a frame before its ACK is due"""
    return decrypt_us > phy.sifs_us
