"""
Settings, scenario files and the device/battery profile library.

All files are JSON with "schema": 1. Unknown keys are rejected and reported
with their dotted path and the line they appear on.
"""

import json
import logging
import os
import re
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Tuple

# Load environment variables from .env file (for local development)
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

from attacker import DEFAULT_ATTACKER_MAC, AttackConfig
from csi import BreathScenario, Person
from energy import BatterySpec, DeviceProfile, EnergyError, fit_drain_power
from frames import FrameError, FrameKind, PhyTiming, normalize_mac, phy_preset
from medium import DEFAULT_REPLY_RATES, ReplyRateTable
from sensing import PipelineConfig, PipelineError
from simulation import Scenario, StationSetup

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


@dataclass(frozen=True)
class Settings:
    output_dir: str = "out"
    log_level: str = "INFO"
    db_file: str = "runs.db"
    record_runs: bool = False
    profiles_file: str = "profiles.json"
    ring_pack_voltage: float = 3.65

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            output_dir=os.getenv("OUTPUT_DIR", "out"),
            log_level=os.getenv("LOG_LEVEL", "INFO").upper(),
            db_file=os.getenv("DB_FILE", "runs.db"),
            record_runs=os.getenv("RECORD_RUNS", "0").strip().lower() in ("1", "true", "yes"),
            profiles_file=os.getenv("PROFILES_FILE", "profiles.json"),
            ring_pack_voltage=float(os.getenv("RING_PACK_VOLTAGE", "3.65")),
        )


def setup_logging(level: Optional[str] = None, verbose: bool = False) -> None:
    """Configure root logging once for the CLI"""
    if verbose:
        level = "DEBUG"
    level = (level or Settings.from_env().log_level).upper()
    logging.basicConfig(format=LOG_FORMAT, level=getattr(logging, level, logging.INFO), force=True)


class ScenarioError(ValueError):
    """Schema or reference error in a config file, with where it happened."""

    def __init__(self, message: str, path: str = "", line: Optional[int] = None, source: str = ""):
        self.path = path
        self.line = line
        self.source = source
        where = source or "<config>"
        if line is not None:
            where += f":{line}"
        field_part = f" [{path}]" if path else ""
        super().__init__(f"{where}{field_part}: {message}")


class _Doc:
    """A parsed JSON document that remembers its text for line lookups"""

    def __init__(self, data: Any, text: str, source: str):
        self.data = data
        self.text = text
        self.source = source

    def line_of(self, key: str) -> Optional[int]:
        match = re.search(r'"%s"\s*:' % re.escape(key), self.text)
        if match is None:
            return None
        return self.text.count("\n", 0, match.start()) + 1

    def error(self, message: str, path: str = "", key: Optional[str] = None) -> ScenarioError:
        key = key if key is not None else (path.rsplit(".", 1)[-1].split("[")[0] if path else None)
        line = self.line_of(key) if key else None
        return ScenarioError(message, path=path, line=line, source=self.source)


def load_json(path: str) -> _Doc:
    """Read a JSON file; syntax errors carry line and column"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except FileNotFoundError:
        raise ScenarioError("file not found", source=str(path)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON at column {e.colno}: {e.msg}", line=e.lineno, source=str(path)) from None
    return _Doc(data, text, str(path))


def parse_json(text: str, source: str = "<string>") -> _Doc:
    try:
        return _Doc(json.loads(text), text, source)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON at column {e.colno}: {e.msg}", line=e.lineno, source=source) from None


def _object(doc: _Doc, value: Any, path: str, allowed: Iterable[str], required: Iterable[str] = ()) -> Dict:
    if not isinstance(value, dict):
        raise doc.error(f"expected an object, got {type(value).__name__}", path)
    allowed = set(allowed)
    for key in value:
        if key not in allowed:
            full = f"{path}.{key}" if path else key
            raise doc.error(f"unknown key '{key}' (allowed: {', '.join(sorted(allowed))})", full, key)
    for key in required:
        if key not in value:
            full = f"{path}.{key}" if path else key
            raise doc.error(f"missing required key '{key}'", full, path.rsplit(".", 1)[-1] if path else None)
    return value


def _mapping(doc: _Doc, value: Any, path: str) -> Dict:
    if not isinstance(value, dict):
        raise doc.error(f"expected an object of named entries, got {type(value).__name__}", path, path)
    return value


def _check_schema(doc: _Doc) -> None:
    if not isinstance(doc.data, dict):
        raise doc.error("top level must be an object")
    version = doc.data.get("schema")
    if version != SCHEMA_VERSION:
        raise doc.error(f"schema must be {SCHEMA_VERSION}, got {version!r}", "schema", "schema")


def _number(doc: _Doc, value: Any, path: str, minimum: Optional[float] = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise doc.error(f"expected a number, got {value!r}", path)
    if minimum is not None and value < minimum:
        raise doc.error(f"must be >= {minimum}, got {value}", path)
    return float(value)


def _list(doc: _Doc, value: Any, path: str) -> List:
    if not isinstance(value, list):
        raise doc.error(f"expected a list, got {value!r}", path)
    return value


def _flag(doc: _Doc, value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise doc.error(f"expected true/false, got {value!r}", path)
    return value


def _mac(doc: _Doc, value: Any, path: str) -> str:
    try:
        return normalize_mac(str(value))
    except FrameError as e:
        raise doc.error(str(e), path) from None


def _phy(doc: _Doc, value: Any) -> PhyTiming:
    if value is None:
        return PhyTiming()
    if isinstance(value, str):
        try:
            return phy_preset(value)
        except FrameError as e:
            raise doc.error(str(e), "phy", "phy") from None
    entry = _object(doc, value, "phy", ("preset", "sifs_us", "difs_us", "slot_us", "cw_min",
                                       "dsss_preamble_us", "ofdm_preamble_us", "basic_rates"))
    base = _phy(doc, entry.get("preset", "2.4ghz"))
    overrides = {}
    for key, v in entry.items():
        if key == "basic_rates":
            rates = _list(doc, v, "phy.basic_rates")
            overrides[key] = tuple(_number(doc, r, f"phy.basic_rates[{i}]", 0) for i, r in enumerate(rates))
        elif key == "cw_min":
            overrides[key] = int(_number(doc, v, "phy.cw_min", 0))
        elif key != "preset":
            overrides[key] = _number(doc, v, f"phy.{key}", 0)
    try:
        return replace(base, **overrides)
    except (TypeError, ValueError) as e:
        raise doc.error(str(e), "phy", "phy") from None


def _reply_rates(doc: _Doc, value: Any) -> ReplyRateTable:
    if value is None:
        return DEFAULT_REPLY_RATES
    try:
        return ReplyRateTable.from_rows(value)
    except (TypeError, ValueError) as e:
        raise doc.error(f"bad reply-rate table: {e}", "reply_rates", "reply_rates") from None


STATION_KEYS = (
    "mac", "aid", "distance_m", "is_ap", "deauth_on_fake", "associated", "blocked_macs", "profile",
    "listen_interval_us", "awake_timeout_us", "listen_window_us", "suspicion_threshold_per_s", "start_awake",
)
ATTACKER_KEYS = (
    "target", "query", "bitrate", "rate", "beacon_period_ms", "beacon_delivery", "spoofed_ap_mac",
    "spoofed_ssid", "target_aid", "mac", "payload_bytes", "beacon_bitrate", "beacon_offset_us",
)
SCENARIO_KEYS = ("schema", "name", "seed", "duration_s", "phy", "reply_rates", "ap", "legit_beacons",
                 "stations", "attacker", "breath")


def _station(doc: _Doc, value: Any, path: str) -> StationSetup:
    entry = _object(doc, value, path, STATION_KEYS, required=("mac",))
    setup = StationSetup(mac=_mac(doc, entry["mac"], f"{path}.mac"))
    for key in STATION_KEYS[1:]:
        if key not in entry:
            continue
        v = entry[key]
        if key in ("associated", "blocked_macs"):
            v = tuple(_mac(doc, m, f"{path}.{key}[{i}]") for i, m in enumerate(_list(doc, v, f"{path}.{key}")))
        elif key in ("is_ap", "deauth_on_fake", "start_awake"):
            v = _flag(doc, v, f"{path}.{key}")
        elif key == "profile":
            if not isinstance(v, str):
                raise doc.error(f"expected a profile name, got {v!r}", f"{path}.profile")
        elif key == "aid":
            v = int(_number(doc, v, f"{path}.aid", 0))
        else:
            v = _number(doc, v, f"{path}.{key}", 0)
        setattr(setup, key, v)
    return setup


def _attack(doc: _Doc, value: Any, macs: List[str]) -> AttackConfig:
    if isinstance(value, list):
        raise doc.error(f"exactly one attacker is allowed, got {len(value)}", "attacker", "attacker")
    entry = _object(doc, value, "attacker", ATTACKER_KEYS, required=("target",))
    target = _mac(doc, entry["target"], "attacker.target")
    if target not in macs:
        raise doc.error(f"target {target} is not one of the scenario's stations", "attacker.target", "target")
    rate = entry.get("rate", "saturate")
    if not (rate == "saturate" or (isinstance(rate, (int, float)) and not isinstance(rate, bool))):
        raise doc.error(f"rate must be a number or \"saturate\", got {rate!r}", "attacker.rate", "rate")
    try:
        return AttackConfig(
            target=target,
            query_kind=FrameKind.parse(str(entry.get("query", "null"))),
            query_bitrate=_number(doc, entry.get("bitrate", 1.0), "attacker.bitrate", 0),
            query_rate=rate,
            beacon_period_us=_number(doc, entry.get("beacon_period_ms", 200.0), "attacker.beacon_period_ms", 0) * 1000,
            beacon_delivery=str(entry.get("beacon_delivery", "unicast")),
            spoofed_ap_mac=_mac(doc, entry.get("spoofed_ap_mac", "02:00:00:00:00:01"), "attacker.spoofed_ap_mac"),
            spoofed_ssid=str(entry.get("spoofed_ssid", "HomeNet")),
            target_aid=int(_number(doc, entry["target_aid"], "attacker.target_aid", 0)) if entry.get("target_aid") is not None else None,
            attacker_mac=_mac(doc, entry.get("mac", DEFAULT_ATTACKER_MAC), "attacker.mac"),
            payload_bytes=int(_number(doc, entry.get("payload_bytes", 0), "attacker.payload_bytes", 0)),
            beacon_bitrate=_number(doc, entry.get("beacon_bitrate", 1.0), "attacker.beacon_bitrate", 0),
            beacon_offset_us=_number(doc, entry.get("beacon_offset_us", 0.0), "attacker.beacon_offset_us", 0),
        )
    except (FrameError, TypeError, ValueError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise doc.error(str(e), "attacker", "attacker") from None


def scenario_from_doc(doc: _Doc) -> Scenario:
    _check_schema(doc)
    data = _object(doc, doc.data, "", SCENARIO_KEYS, required=("stations", "attacker"))
    ap = _object(doc, data.get("ap", {}), "ap", ("mac", "ssid"))
    stations_raw = data["stations"]
    if not isinstance(stations_raw, list) or not stations_raw:
        raise doc.error("need a non-empty list of stations", "stations", "stations")
    stations = [_station(doc, s, f"stations[{i}]") for i, s in enumerate(stations_raw)]
    macs = [s.mac for s in stations]
    duplicates = sorted({m for m in macs if macs.count(m) > 1})
    if duplicates:
        raise doc.error(f"duplicate station MACs: {', '.join(duplicates)}", "stations", "stations")

    duration = _number(doc, data.get("duration_s", 10.0), "duration_s")
    if duration <= 0:
        raise doc.error(f"duration_s must be positive, got {duration}", "duration_s")
    return Scenario(
        name=str(data.get("name", os.path.splitext(os.path.basename(doc.source))[0])),
        ap_mac=_mac(doc, ap.get("mac", "02:00:00:00:00:aa"), "ap.mac"),
        ssid=str(ap.get("ssid", "HomeNet")),
        stations=stations,
        attack=_attack(doc, data["attacker"], macs),
        phy=_phy(doc, data.get("phy")),
        reply_rates=_reply_rates(doc, data.get("reply_rates")),
        duration_s=duration,
        seed=int(_number(doc, data.get("seed", 0), "seed")),
        legit_beacons=_flag(doc, data.get("legit_beacons", True), "legit_beacons"),
        breath=_breath(doc, data["breath"], "breath") if data.get("breath") is not None else None,
    )


def load_scenario(path: str) -> Scenario:
    scenario = scenario_from_doc(load_json(path))
    logger.info(f"✅ Loaded scenario '{scenario.name}' with {len(scenario.stations)} stations from {path}")
    return scenario


BREATH_KEYS = ("schema", "name", "seed", "duration_s", "packet_rate", "jitter_mean_s", "noise_sigma",
               "sensitivity", "baseline", "modulation_depth", "cutoff_m", "dominant_subcarriers", "persons",
               "truth_bpm")
PERSON_KEYS = ("rate_bpm", "distance_m", "present", "orientation")


def _gains(doc: _Doc, value: Any, path: str) -> Optional[List[float]]:
    if value is None:
        return None
    return [_number(doc, g, f"{path}[{i}]", 0) for i, g in enumerate(_list(doc, value, path))]


def _breath(doc: _Doc, value: Any, path: str = "") -> BreathScenario:
    prefix = f"{path}." if path else ""
    entry = _object(doc, value, path, BREATH_KEYS)
    persons = []
    for i, raw in enumerate(_list(doc, entry.get("persons", []), f"{prefix}persons")):
        ppath = f"{prefix}persons[{i}]"
        person = _object(doc, raw, ppath, PERSON_KEYS, required=("rate_bpm",))
        present = person.get("present")
        try:
            persons.append(Person(
                rate_bpm=_number(doc, person["rate_bpm"], f"{ppath}.rate_bpm"),
                distance_m=_number(doc, person.get("distance_m", 0.5), f"{ppath}.distance_m"),
                present=tuple((float(a), float(b)) for a, b in present) if present is not None else None,
                orientation=person.get("orientation", "front"),
            ))
        except (TypeError, ValueError) as e:
            if isinstance(e, ScenarioError):
                raise
            raise doc.error(str(e), ppath, "persons") from None
    try:
        return BreathScenario(
            persons=persons,
            nominal_packet_rate=_number(doc, entry.get("packet_rate", 10.0), f"{prefix}packet_rate"),
            jitter_mean_s=_number(doc, entry.get("jitter_mean_s", 0.02), f"{prefix}jitter_mean_s"),
            noise_sigma=_number(doc, entry.get("noise_sigma", 0.2), f"{prefix}noise_sigma"),
            sensitivity=_gains(doc, entry.get("sensitivity"), f"{prefix}sensitivity"),
            duration_s=_number(doc, entry.get("duration_s", 60.0), f"{prefix}duration_s"),
            seed=int(_number(doc, entry.get("seed", 0), f"{prefix}seed")),
            baseline=_number(doc, entry.get("baseline", 10.0), f"{prefix}baseline"),
            modulation_depth=_number(doc, entry.get("modulation_depth", 1.0), f"{prefix}modulation_depth"),
            cutoff_m=_number(doc, entry.get("cutoff_m", 1.4), f"{prefix}cutoff_m"),
            dominant_subcarriers=int(_number(doc, entry.get("dominant_subcarriers", 4), f"{prefix}dominant_subcarriers", 0)),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ScenarioError):
            raise
        key = str(e).split(" ", 1)[0]
        raise doc.error(str(e), f"{prefix}{key}", key) from None


def load_breath_scenario(path: str) -> Tuple[BreathScenario, Optional[float]]:
    """(scenario, ground-truth bpm if the file names one)"""
    doc = load_json(path)
    _check_schema(doc)
    scenario = _breath(doc, doc.data)
    truth = doc.data.get("truth_bpm")
    if truth is not None:
        truth = _number(doc, truth, "truth_bpm", 0)
    elif len(scenario.persons) == 1:
        truth = scenario.persons[0].rate_bpm
    return scenario, truth


PIPELINE_KEYS = ("schema",) + tuple(PipelineConfig.__dataclass_fields__)


def load_pipeline_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    doc = load_json(path)
    _check_schema(doc)
    entry = _object(doc, doc.data, "", PIPELINE_KEYS)
    try:
        return PipelineConfig.from_dict({k: v for k, v in entry.items() if k != "schema"})
    except (PipelineError, TypeError) as e:
        raise doc.error(str(e)) from None


@dataclass
class ProfileLibrary:
    devices: Dict[str, DeviceProfile] = field(default_factory=dict)
    batteries: Dict[str, BatterySpec] = field(default_factory=dict)
    reference_drains: List[Tuple[BatterySpec, float, float]] = field(default_factory=list)
    normal_life_hours: Dict[str, float] = field(default_factory=dict)

    def device(self, name: str) -> DeviceProfile:
        try:
            return self.devices[name.lower()]
        except KeyError:
            raise EnergyError(
                f"Unknown device profile '{name}', available: {', '.join(sorted(self.devices))}"
            ) from None

    def battery(self, name: str) -> BatterySpec:
        try:
            return self.batteries[name.lower()]
        except KeyError:
            raise EnergyError(
                f"Unknown battery '{name}', available: {', '.join(sorted(self.batteries))}"
            ) from None

    def full_drain_rows(self) -> List[Tuple[BatterySpec, float]]:
        return [(battery, minutes) for battery, minutes, fraction in self.reference_drains if fraction == 1.0]


DEVICE_KEYS = ("rx_mA", "tx_mA", "idle_mA", "sleep_mA", "voltage_V", "drain_power_W", "drain_fit",
               "drain_battery", "drain_hours", "normal_life_hours")
BATTERY_KEYS = ("voltage_V", "capacity_Wh", "capacity_mAh", "voltage_env")


def load_profiles(path: Optional[str] = None) -> ProfileLibrary:
    settings = Settings.from_env()
    path = path or settings.profiles_file
    doc = load_json(path)
    _check_schema(doc)
    data = _object(doc, doc.data, "", ("schema", "devices", "batteries", "reference_drains"),
                   required=("devices", "batteries"))
    library = ProfileLibrary()

    for name, raw in _mapping(doc, data["batteries"], "batteries").items():
        bpath = f"batteries.{name}"
        entry = _object(doc, raw, bpath, BATTERY_KEYS, required=("voltage_V",))
        voltage = _number(doc, entry["voltage_V"], f"{bpath}.voltage_V", 0)
        if "voltage_env" in entry:
            voltage = float(os.getenv(entry["voltage_env"], voltage))
        try:
            if "capacity_Wh" in entry:
                battery = BatterySpec(name, voltage, _number(doc, entry["capacity_Wh"], f"{bpath}.capacity_Wh"))
            elif "capacity_mAh" in entry:
                battery = BatterySpec.from_mAh(name, voltage, _number(doc, entry["capacity_mAh"], f"{bpath}.capacity_mAh"))
            else:
                raise doc.error("needs capacity_Wh or capacity_mAh", bpath, name)
        except EnergyError as e:
            raise doc.error(str(e), bpath, name) from None
        library.batteries[name.lower()] = battery

    for i, raw in enumerate(_list(doc, data.get("reference_drains", []), "reference_drains")):
        rpath = f"reference_drains[{i}]"
        entry = _object(doc, raw, rpath, ("battery", "minutes", "fraction"), required=("battery", "minutes"))
        try:
            battery = library.battery(str(entry["battery"]))
        except EnergyError as e:
            raise doc.error(str(e), f"{rpath}.battery", "reference_drains") from None
        library.reference_drains.append(
            (battery, _number(doc, entry["minutes"], f"{rpath}.minutes", 0),
             _number(doc, entry.get("fraction", 1.0), f"{rpath}.fraction", 0))
        )

    for name, raw in _mapping(doc, data["devices"], "devices").items():
        dpath = f"devices.{name}"
        entry = _object(doc, raw, dpath, DEVICE_KEYS, required=("rx_mA", "tx_mA"))
        drain = _number(doc, entry["drain_power_W"], f"{dpath}.drain_power_W") if "drain_power_W" in entry else None
        if entry.get("drain_fit"):
            drain = fit_drain_power(library.full_drain_rows())
        elif "drain_battery" in entry:
            battery = library.batteries.get(str(entry["drain_battery"]).lower())
            if battery is None:
                raise doc.error(f"unknown battery '{entry['drain_battery']}'", f"{dpath}.drain_battery", "drain_battery")
            hours = _number(doc, entry.get("drain_hours"), f"{dpath}.drain_hours", 0)
            if hours == 0:
                raise doc.error("drain_hours must be positive", f"{dpath}.drain_hours")
            drain = battery.capacity_Wh / hours
        try:
            library.devices[name.lower()] = DeviceProfile(
                name=name,
                rx_mA=_number(doc, entry["rx_mA"], f"{dpath}.rx_mA", 0),
                tx_mA=_number(doc, entry["tx_mA"], f"{dpath}.tx_mA", 0),
                idle_mA=_number(doc, entry["idle_mA"], f"{dpath}.idle_mA", 0) if "idle_mA" in entry else None,
                sleep_mA=_number(doc, entry.get("sleep_mA", 0.0), f"{dpath}.sleep_mA", 0),
                voltage_V=_number(doc, entry.get("voltage_V", 3.3), f"{dpath}.voltage_V", 0),
                drain_power_W=drain,
            )
        except EnergyError as e:
            raise doc.error(str(e), dpath, name) from None
        if "normal_life_hours" in entry:
            library.normal_life_hours[name.lower()] = _number(doc, entry["normal_life_hours"], f"{dpath}.normal_life_hours", 0)

    logger.info(f"📊 Loaded {len(library.devices)} device profiles and {len(library.batteries)} batteries")
    return library
