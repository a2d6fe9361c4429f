"""
Breathing-rate estimation from CSI amplitude traces.

low-pass -> interpolate onto a uniform grid -> FFT per subcarrier ->
peak-to-average weighted vote across subcarriers, run over a sliding window.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from scipy import fft, interpolate, signal
from scipy.special import logsumexp

from csi import CsiTrace

logger = logging.getLogger(__name__)

NO_BREATH = -1.0


class PipelineError(ValueError):
    """Raised when a trace or spectrum cannot go through the pipeline."""


@dataclass(frozen=True)
class PipelineConfig:
    window_s: float = 30.0
    stride_s: float = 1.0
    lowpass_cutoff_hz: float = 1.0
    band: Tuple[float, float] = (0.1, 1.0)
    majority: float = 0.5
    zero_pad_factor: int = 4
    par_exponent: float = 0.4
    min_grid_s: float = 0.005
    filter_order: int = 4
    min_window_samples: int = 8
    secondary_share: float = 0.3
    secondary_power_ratio: float = 0.25

    def __post_init__(self):
        lo, hi = self.band
        if not self.window_s >= self.stride_s > 0:
            raise PipelineError(f"need window >= stride > 0, got {self.window_s}/{self.stride_s}")
        if not 0 <= lo < hi <= self.lowpass_cutoff_hz:
            raise PipelineError(f"need 0 <= lo < hi <= cutoff, got band {self.band}, cutoff {self.lowpass_cutoff_hz}")
        if self.zero_pad_factor < 1:
            raise PipelineError("zero_pad_factor must be >= 1")
        if not 0 < self.majority <= 1:
            raise PipelineError(f"majority must be in (0, 1], got {self.majority}")
        if self.par_exponent <= 0:
            raise PipelineError(f"par_exponent must be positive, got {self.par_exponent}")

    @classmethod
    def from_dict(cls, data: Dict) -> "PipelineConfig":
        values = dict(data)
        if "band" in values:
            values["band"] = tuple(values["band"])
        return cls(**values)


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray
    mags: np.ndarray  # (F,) or (F, subcarriers)
    resolution_hz: float = 0.0  # 1 / observation span, one native bin

    @property
    def bin_hz(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if self.freqs.size > 1 else 0.0


@dataclass
class BreathEstimate:
    rate_bpm: float
    window_start_s: float = 0.0
    window_end_s: float = 0.0
    vote_weight: float = 0.0
    diagnostics: Optional[Dict] = field(default=None, repr=False)

    @property
    def present(self) -> bool:
        return self.rate_bpm != NO_BREATH

    def to_dict(self) -> Dict:
        return {
            "window_start_s": round(self.window_start_s, 6),
            "window_end_s": round(self.window_end_s, 6),
            "rate_bpm": round(self.rate_bpm, 4),
            "weight": round(self.vote_weight, 6),
        }


def _check_times(t: np.ndarray) -> np.ndarray:
    if t.size < 2:
        raise PipelineError(f"need at least 2 samples, got {t.size}")
    gaps = np.diff(t)
    if np.any(gaps <= 0):
        i = int(np.argmax(gaps <= 0))
        raise PipelineError(f"timestamps must be strictly increasing: {t[i]!r} then {t[i + 1]!r}")
    return gaps


def lowpass(t, x, cutoff_hz: float, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth low-pass at the trace's mean sample rate; timestamps are untouched"""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if t.size < 2:
        raise PipelineError(f"need at least 2 samples to filter, got {t.size}")
    fs = (t.size - 1) / (t[-1] - t[0])
    if cutoff_hz >= fs / 2:
        logger.debug(f"cutoff {cutoff_hz} Hz at or above Nyquist ({fs / 2:.2f} Hz), not filtering")
        return x.copy()
    sos = signal.butter(order, cutoff_hz, btype="low", fs=fs, output="sos")
    padlen = min(3 * (2 * len(sos) + 1), x.shape[0] - 1)
    return signal.sosfiltfilt(sos, x, axis=0, padlen=padlen)


def interpolate_uniform(t, x, spacing: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Fill every gap wider than the minimum gap with evenly spaced linear points.

    Original samples are kept verbatim; afterwards no gap exceeds the spacing.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    gaps = _check_times(t)
    d = gaps.min() if spacing is None else spacing
    if d <= 0:
        raise PipelineError(f"spacing must be positive, got {d}")
    counts = np.maximum(np.ceil(gaps / d - 1e-9).astype(int) - 1, 0)
    total = int(counts.sum())
    if total == 0:
        return t.copy(), x.copy()

    seg = np.repeat(np.arange(gaps.size), counts)
    k = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts) + 1
    frac = k / (counts[seg] + 1)
    t_new = t[seg] + frac * gaps[seg]
    if x.ndim > 1:
        frac = frac[:, None]
    x_new = x[seg] + frac * (x[seg + 1] - x[seg])

    order = np.argsort(np.concatenate([t, t_new]), kind="stable")
    return np.concatenate([t, t_new])[order], np.concatenate([x, x_new])[order]


def _fft_length(n: int, factor: int) -> int:
    return (1 << max(int(math.ceil(math.log2(n))), 0)) * factor


def nufft(t, x, config: PipelineConfig = PipelineConfig()) -> Spectrum:
    """FFT of a non-uniformly sampled series via interpolation onto a uniform grid"""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    gaps = _check_times(t)
    d_min = float(gaps.min())
    uniform = np.allclose(gaps, gaps[0], rtol=1e-9, atol=0.0)

    if uniform and d_min >= config.min_grid_s:
        d = float(gaps.mean())
        y = x
    else:
        d = max(d_min, config.min_grid_s)
        t_fill, x_fill = interpolate_uniform(t, x, spacing=d)
        n_grid = int(math.floor((t[-1] - t[0]) / d + 1e-9)) + 1
        grid = t[0] + d * np.arange(n_grid)
        resample = interpolate.interp1d(t_fill, x_fill, axis=0, assume_sorted=True,
                                        bounds_error=False, fill_value="extrapolate")
        y = resample(grid)

    y = y - y.mean(axis=0)
    n = y.shape[0]
    n_fft = _fft_length(n, config.zero_pad_factor)
    mags = np.abs(fft.rfft(y, n=n_fft, axis=0))
    freqs = fft.rfftfreq(n_fft, d)
    return Spectrum(freqs, mags, resolution_hz=1.0 / (n * d))


def compute_spectra(t, amps, config: PipelineConfig = PipelineConfig()) -> Spectrum:
    """Low-pass then NUFFT every subcarrier column at once"""
    filtered = lowpass(t, amps, config.lowpass_cutoff_hz, config.filter_order)
    return nufft(t, filtered, config)


def _stack(spectra: Union[Spectrum, Sequence[Spectrum]]) -> Spectrum:
    if isinstance(spectra, Spectrum):
        if spectra.mags.ndim == 1:
            return Spectrum(spectra.freqs, spectra.mags[:, None], spectra.resolution_hz)
        return spectra
    spectra = list(spectra)
    if not spectra:
        raise PipelineError("no spectra to vote on")
    freqs = spectra[0].freqs
    for s in spectra[1:]:
        if s.freqs.shape != freqs.shape or not np.allclose(s.freqs, freqs):
            raise PipelineError("spectra must share one frequency grid")
    return Spectrum(freqs, np.column_stack([s.mags for s in spectra]), spectra[0].resolution_hz)


def _band_power(spectrum: Spectrum, config: PipelineConfig) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = config.band
    mask = (spectrum.freqs > 0) & (spectrum.freqs >= lo) & (spectrum.freqs <= hi)
    if mask.sum() < 2:
        raise PipelineError(f"band {config.band} Hz holds fewer than 2 frequency bins")
    return spectrum.freqs[mask], spectrum.mags[mask] ** 2


def _vote(power: np.ndarray, config: PipelineConfig) -> Tuple[Optional[int], float, Dict]:
    """Winning band bin and its weight share; weights are exp(par_exponent * PAR)"""
    n_bins, n_sub = power.shape
    peak_idx = np.argmax(power, axis=0)
    p_peak = power[peak_idx, np.arange(n_sub)]
    p_ave = (power.sum(axis=0) - p_peak) / (n_bins - 1)
    par = np.where(p_ave > 0, p_peak / np.where(p_ave > 0, p_ave, 1.0), 0.0)
    # a flat band has no peak to vote for
    silent = (p_peak <= 0) | (par <= 1.0)
    log_w = np.where(silent, -np.inf, config.par_exponent * par)
    diagnostics = {"par": par, "peak_bin": peak_idx}
    if np.all(silent):
        return None, 0.0, diagnostics

    total = logsumexp(log_w)
    best_bin, best_share = None, -1.0
    for b in np.unique(peak_idx[~silent]):
        share = float(np.exp(logsumexp(log_w[peak_idx == b]) - total))
        if share > best_share:
            best_bin, best_share = int(b), share
    return best_bin, best_share, diagnostics


def subcarrier_vote(spectra: Union[Spectrum, Sequence[Spectrum]], config: PipelineConfig = PipelineConfig()) -> BreathEstimate:
    stacked = _stack(spectra)
    freqs, power = _band_power(stacked, config)
    win, share, diagnostics = _vote(power, config)
    diagnostics["peak_hz"] = freqs[diagnostics["peak_bin"]]
    if win is None or share < config.majority:
        return BreathEstimate(NO_BREATH, vote_weight=max(share, 0.0), diagnostics=diagnostics)
    return BreathEstimate(60.0 * float(freqs[win]), vote_weight=share, diagnostics=diagnostics)


def window_count(duration_s: float, config: PipelineConfig, median_interval_s: float = 0.0) -> int:
    """floor((duration - window) / stride) + 1, with half a sample of slack"""
    slack = min(0.5 * median_interval_s / config.stride_s, 0.5)
    return int(math.floor((duration_s - config.window_s) / config.stride_s + slack + 1e-9)) + 1


def sliding_estimate(trace: CsiTrace, config: PipelineConfig = PipelineConfig()) -> List[BreathEstimate]:
    duration = trace.duration_s
    if len(trace) < 2 or duration + 0.5 * trace.median_interval_s < config.window_s:
        raise PipelineError(
            f"trace spans {duration:.2f} s; at least {config.window_s:g} s are needed for one window"
        )
    count = window_count(duration, config, trace.median_interval_s)
    origin = float(trace.t[0])
    estimates = []
    for i in range(count):
        start = origin + i * config.stride_s
        end = start + config.window_s
        chunk = trace.window(start, end)
        if len(chunk) < config.min_window_samples:
            logger.debug(f"window {start:.1f}-{end:.1f} s has {len(chunk)} samples, reporting no breath")
            estimates.append(BreathEstimate(NO_BREATH, start, end, 0.0))
            continue
        estimate = subcarrier_vote(compute_spectra(chunk.t, chunk.amps, config), config)
        estimates.append(replace(estimate, window_start_s=start, window_end_s=end))
    detected = sum(1 for e in estimates if e.present)
    logger.info(f"✅ {len(estimates)} windows, breathing detected in {detected}")
    return estimates


def detect_multiple(spectra: Union[Spectrum, Sequence[Spectrum]], config: PipelineConfig = PipelineConfig(),
                    max_k: int = 2) -> List[Tuple[float, float]]:
    """Up to max_k breathing rates, strongest first, as (rate_bpm, vote share)"""
    stacked = _stack(spectra)
    freqs, power = _band_power(stacked, config)
    bin_hz = float(freqs[1] - freqs[0])
    guard = max(1, int(round(stacked.resolution_hz / bin_hz))) if stacked.resolution_hz else 1
    profile = power.sum(axis=1)
    work = power.copy()

    found: List[Tuple[float, float]] = []
    first_power = None
    for _ in range(max_k):
        win, share, _ = _vote(work, config)
        if win is None or share < config.secondary_share:
            break
        lo, hi = max(0, win - guard), win + guard + 1
        peak_power = float(profile[lo:hi].max())
        if first_power is None:
            first_power = peak_power
        elif peak_power < config.secondary_power_ratio * first_power:
            break
        found.append((60.0 * float(freqs[win]), share))
        work[lo:hi, :] = 0.0
    return found


def presence_score(trace: CsiTrace, config: PipelineConfig = PipelineConfig()) -> float:
    """Vote share of the most recent window, 0 when nothing is detected"""
    end = float(trace.t[-1])
    chunk = trace.window(end - config.window_s, end + 1e-9)
    if len(chunk) < config.min_window_samples:
        return 0.0
    estimate = subcarrier_vote(compute_spectra(chunk.t, chunk.amps, config), config)
    return estimate.vote_weight if estimate.present else 0.0


def presence_timeline(estimates: Sequence[BreathEstimate]) -> List[Tuple[float, float, bool]]:
    return [(e.window_start_s, e.window_end_s, e.present) for e in estimates]


def accuracy_summary(estimates: Sequence[BreathEstimate], truth_bpm: float) -> Dict:
    if truth_bpm <= 0:
        raise PipelineError(f"truth rate must be positive, got {truth_bpm}")
    n = len(estimates)
    rates = np.array([e.rate_bpm for e in estimates], dtype=float)
    detected = rates != NO_BREATH
    errors = np.abs(rates[detected] - truth_bpm)
    all_errors = np.where(detected, np.abs(rates - truth_bpm), np.inf)
    thresholds = (0.0, 0.5, 1.0, 2.0, 3.0, 5.0)
    summary = {
        "windows": n,
        "detected": int(detected.sum()),
        "no_breath": int(n - detected.sum()),
        "truth_bpm": truth_bpm,
        "mean_abs_error_bpm": float(errors.mean()) if errors.size else None,
        "mean_ratio": float((rates[detected] / truth_bpm).mean()) if errors.size else None,
        "mean_accuracy": float(np.mean(np.where(detected, 1 - all_errors / truth_bpm, 0.0))) if n else None,
        "within_1bpm": float(np.mean(all_errors <= 1.0)) if n else None,
        "zero_error_fraction": float(np.mean(np.round(rates[detected]) == round(truth_bpm))) if errors.size else None,
        "error_cdf": [[th, float(np.mean(all_errors <= th + 1e-12))] for th in thresholds] if n else [],
    }
    return summary


def write_estimates(estimates: Sequence[BreathEstimate], sink: Union[str, os.PathLike, TextIO]) -> None:
    """JSON-lines, one record per window"""
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", encoding="utf-8", newline="\n") as f:
            write_estimates(estimates, f)
        return
    for estimate in estimates:
        sink.write(json.dumps(estimate.to_dict(), sort_keys=True) + "\n")
