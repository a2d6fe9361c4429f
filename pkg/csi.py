import io
import logging
import os
import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

N_SUBCARRIERS = 52
HEADER = ["t_s"] + [f"sub_{k}" for k in range(N_SUBCARRIERS)]

# Body orientation toward the link: (modulation strength, chest-motion phase shift)
ORIENTATIONS = {
    "front": (1.0, 0.0),
    "left": (0.8, np.pi / 2),
    "right": (0.8, -np.pi / 2),
    "back": (0.6, np.pi),
}


class TraceFormatError(ValueError):
    """Raised for malformed trace files; `line` is the 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class CsiTrace:
    """Timestamped 52-subcarrier amplitude vectors, one row per packet."""

    t: np.ndarray
    amps: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.amps = np.asarray(self.amps, dtype=float)
        if self.amps.ndim != 2 or self.amps.shape[1] != N_SUBCARRIERS:
            raise TraceFormatError(f"amplitudes must have {N_SUBCARRIERS} columns, got shape {self.amps.shape}")
        if self.amps.shape[0] != self.t.shape[0]:
            raise TraceFormatError(f"{self.t.shape[0]} timestamps for {self.amps.shape[0]} amplitude rows")
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            i = int(np.argmax(np.diff(self.t) <= 0))
            raise TraceFormatError(f"timestamps not strictly increasing: {self.t[i]!r} then {self.t[i + 1]!r}")
        if np.any(self.amps < 0):
            raise TraceFormatError("negative amplitude in trace")

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def median_interval_s(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.median(np.diff(self.t)))

    @property
    def duration_s(self) -> float:
        """Timestamp span plus one sample interval (each packet covers its slot)"""
        if len(self) == 0:
            return 0.0
        return float(self.t[-1] - self.t[0]) + self.median_interval_s

    def window(self, start_s: float, end_s: float) -> "CsiTrace":
        mask = (self.t >= start_s) & (self.t < end_s)
        return CsiTrace(self.t[mask], self.amps[mask])


@dataclass(frozen=True)
class Person:
    rate_bpm: float
    distance_m: float = 0.5
    present: Optional[Tuple[Tuple[float, float], ...]] = None  # None: there the whole time
    orientation: str = "front"

    def __post_init__(self):
        if not 0 < self.rate_bpm < 120:
            raise ValueError(f"rate_bpm must be in (0, 120), got {self.rate_bpm}")
        if self.distance_m < 0:
            raise ValueError(f"distance_m must be non-negative, got {self.distance_m}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(
                f"orientation must be one of {', '.join(ORIENTATIONS)}, got {self.orientation!r}"
            )

    def presence_mask(self, t: np.ndarray) -> np.ndarray:
        if self.present is None:
            return np.ones_like(t)
        mask = np.zeros_like(t)
        for start, end in self.present:
            mask[(t >= start) & (t < end)] = 1.0
        return mask


@dataclass
class BreathScenario:
    persons: List[Person] = field(default_factory=list)
    nominal_packet_rate: float = 10.0
    jitter_mean_s: float = 0.020
    noise_sigma: float = 0.2
    sensitivity: Optional[Sequence[float]] = None
    duration_s: float = 60.0
    seed: int = 0
    baseline: float = 10.0
    modulation_depth: float = 1.0
    cutoff_m: float = 1.4
    dominant_subcarriers: int = 4

    def __post_init__(self):
        if self.nominal_packet_rate <= 0:
            raise ValueError(f"nominal_packet_rate must be positive, got {self.nominal_packet_rate}")
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if self.jitter_mean_s < 0 or self.noise_sigma < 0:
            raise ValueError("jitter and noise parameters must be non-negative")
        if self.cutoff_m <= 0:
            raise ValueError(f"cutoff_m must be positive, got {self.cutoff_m}")
        if self.sensitivity is not None and len(self.sensitivity) != N_SUBCARRIERS:
            raise ValueError(f"sensitivity needs {N_SUBCARRIERS} gains, got {len(self.sensitivity)}")


def distance_envelope(distance_m: float, cutoff_m: float = 1.4) -> float:
    """Linear fall-off of breathing modulation, zero at and beyond the cutoff"""
    return float(np.clip(1.0 - distance_m / cutoff_m, 0.0, 1.0))


def default_sensitivity(rng: np.random.Generator, dominant: int = 4) -> np.ndarray:
    gains = rng.uniform(0.05, 0.3, N_SUBCARRIERS)
    strong = rng.choice(N_SUBCARRIERS, size=min(dominant, N_SUBCARRIERS), replace=False)
    gains[strong] = rng.uniform(0.8, 1.0, strong.size)
    return gains


def synthesize_trace(scenario: BreathScenario) -> CsiTrace:
    rng = np.random.default_rng(scenario.seed)
    if scenario.sensitivity is not None:
        gains = np.asarray(scenario.sensitivity, dtype=float)
    else:
        gains = default_sensitivity(rng, scenario.dominant_subcarriers)
    baseline = scenario.baseline * rng.uniform(0.8, 1.2, N_SUBCARRIERS)
    phases = [rng.uniform(0.0, 2 * np.pi, N_SUBCARRIERS) for _ in scenario.persons]

    n = int(round(scenario.duration_s * scenario.nominal_packet_rate))
    grid = np.arange(n) / scenario.nominal_packet_rate
    if scenario.jitter_mean_s > 0:
        jitter = rng.exponential(scenario.jitter_mean_s, n)
        jitter[0] = 0.0
    else:
        jitter = np.zeros(n)
    t = np.sort(grid + jitter)
    gaps = np.diff(t)
    if np.any(gaps <= 0):
        t = t[0] + np.concatenate([[0.0], np.cumsum(np.maximum(gaps, 1e-9))])

    amps = baseline[None, :] + rng.normal(0.0, scenario.noise_sigma, (n, N_SUBCARRIERS))
    for person, phase in zip(scenario.persons, phases):
        depth = scenario.modulation_depth * distance_envelope(person.distance_m, scenario.cutoff_m)
        if depth == 0:
            continue
        person_gains = gains
        if person.orientation != "front":
            strength, shift = ORIENTATIONS[person.orientation]
            # the body blocks part of the reflection; each subcarrier sees it differently
            person_gains = gains * strength * rng.uniform(0.7, 1.0, N_SUBCARRIERS)
            phase = phase + shift + rng.normal(0.0, 0.3, N_SUBCARRIERS)
        f = person.rate_bpm / 60.0
        wave = np.sin(2 * np.pi * f * t[:, None] + phase[None, :])
        amps += person.presence_mask(t)[:, None] * depth * person_gains[None, :] * wave

    logger.debug(
        f"Synthesized {n} packets over {scenario.duration_s:g} s, "
        f"{len(scenario.persons)} person(s), seed {scenario.seed}"
    )
    return CsiTrace(t, np.clip(amps, 0.0, None))


def write_trace(trace: CsiTrace, sink: Union[str, os.PathLike, TextIO]) -> None:
    frame = pd.DataFrame(np.column_stack([trace.t, trace.amps]), columns=HEADER)
    # 17 significant digits reads back bit for bit
    frame.to_csv(sink, index=False, float_format="%.17g", lineterminator="\n")


def _first(mask: np.ndarray) -> Optional[int]:
    return int(np.argmax(mask)) if mask.any() else None


def read_trace(source: Union[str, os.PathLike, TextIO]) -> CsiTrace:
    try:
        # header=None keeps row i on file line i + 1
        frame = pd.read_csv(source, header=None, dtype=str, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise TraceFormatError("trace has no samples") from None
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise TraceFormatError(
            f"expected {len(HEADER)} columns", int(match.group(1)) if match else None
        ) from None

    header = [str(c).strip() for c in frame.iloc[0].fillna("")]
    if header != HEADER:
        raise TraceFormatError(f"expected header t_s,sub_0..sub_{N_SUBCARRIERS - 1}", 1)
    body = frame.iloc[1:].dropna(how="all")
    if body.empty:
        raise TraceFormatError("trace has no samples")
    lines = body.index.to_numpy() + 1

    i = _first(body.isna().any(axis=1).to_numpy())
    if i is not None:
        raise TraceFormatError(f"expected {len(HEADER)} columns, got {int(body.iloc[i].notna().sum())}", int(lines[i]))
    numeric = body.apply(pd.to_numeric, errors="coerce")
    i = _first(numeric.isna().any(axis=1).to_numpy())
    if i is not None:
        cell = body.iloc[i][numeric.iloc[i].isna()].iloc[0]
        raise TraceFormatError(f"not a number: {cell!r}", int(lines[i]))

    # float() per cell parses exactly what write_trace printed
    values = body.to_numpy(dtype=float)
    t, amps = values[:, 0], values[:, 1:]
    i = _first(np.diff(t) <= 0)
    if i is not None:
        raise TraceFormatError(f"timestamp {float(t[i + 1])!r} does not follow {float(t[i])!r}", int(lines[i + 1]))
    i = _first((amps < 0).any(axis=1))
    if i is not None:
        raise TraceFormatError(f"negative amplitude {float(amps[i].min())!r}", int(lines[i]))

    logger.info(f"📊 Parsed {len(t)} CSI rows")
    return CsiTrace(t, amps)


def trace_to_text(trace: CsiTrace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()
