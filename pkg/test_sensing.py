#!/usr/bin/env python3
"""
Tests for the breathing-rate pipeline: filter, NUFFT, vote, sliding window.
"""

import io
import json

import numpy as np
import pytest

from csi import N_SUBCARRIERS, BreathScenario, CsiTrace, Person, synthesize_trace
from sensing import (
    NO_BREATH,
    BreathEstimate,
    PipelineConfig,
    PipelineError,
    Spectrum,
    accuracy_summary,
    compute_spectra,
    detect_multiple,
    interpolate_uniform,
    lowpass,
    nufft,
    presence_score,
    presence_timeline,
    sliding_estimate,
    subcarrier_vote,
    window_count,
    write_estimates,
)

CONFIG = PipelineConfig()


def _jittered_times(rng, duration_s=30.0, rate=10.0, jitter=0.02):
    n = int(duration_s * rate)
    t = np.arange(n) / rate + rng.exponential(jitter, n)
    t[0] = 0.0
    return np.sort(t)


def _amplitude(x, trim):
    core = x[trim:-trim]
    return (core.max() - core.min()) / 2


def test_lowpass_passband():
    t = np.arange(600) / 10.0
    x = np.sin(2 * np.pi * 0.3 * t)
    y = lowpass(t, x, 1.0)
    assert _amplitude(y, 50) == pytest.approx(_amplitude(x, 50), rel=0.05)


def test_lowpass_stopband():
    t = np.arange(3000) / 50.0
    x = np.sin(2 * np.pi * 5.0 * t)
    y = lowpass(t, x, 1.0)
    assert _amplitude(y, 200) <= _amplitude(x, 200) / 10


def test_lowpass_dc_unchanged():
    t = np.arange(100) / 10.0
    y = lowpass(t, np.full(100, 7.0), 1.0)
    np.testing.assert_allclose(y, 7.0, rtol=1e-6)


def test_lowpass_needs_two_samples():
    with pytest.raises(PipelineError):
        lowpass(np.array([0.0]), np.array([1.0]), 1.0)


def test_interpolate_uniform_identity():
    t, x = interpolate_uniform([0.0, 1.0, 2.0, 3.0], [5.0, 6.0, 7.0, 8.0])
    assert t.tolist() == [0.0, 1.0, 2.0, 3.0]
    assert x.tolist() == [5.0, 6.0, 7.0, 8.0]


def test_interpolate_uniform_single_gap():
    t, x = interpolate_uniform([0.0, 1.0, 3.0], [0.0, 1.0, 3.0])
    np.testing.assert_allclose(t, [0.0, 1.0, 2.0, 3.0])
    np.testing.assert_allclose(x, [0.0, 1.0, 2.0, 3.0])


def test_interpolate_uniform_fractional_gap():
    t, x = interpolate_uniform([0.0, 1.0, 3.5], [0.0, 2.0, 7.0])
    np.testing.assert_allclose(t, [0.0, 1.0, 1.0 + 2.5 / 3, 1.0 + 5.0 / 3, 3.5])
    np.testing.assert_allclose(x, 2.0 * t)


def test_interpolate_uniform_properties():
    rng = np.random.default_rng(5)
    for _ in range(50):
        t = np.cumsum(rng.uniform(0.05, 1.0, 40))
        x = rng.normal(size=(40, 3))
        t2, x2 = interpolate_uniform(t, x)
        d = np.diff(t).min()
        assert np.all(np.diff(t2) <= d * (1 + 1e-9))
        kept = np.isin(t2, t)
        np.testing.assert_array_equal(t2[kept], t)
        np.testing.assert_array_equal(x2[kept], x)


def test_interpolate_uniform_rejects_non_monotone():
    with pytest.raises(PipelineError, match="strictly increasing"):
        interpolate_uniform([0.0, 2.0, 1.0], [0.0, 0.0, 0.0])


def test_nufft_matches_fft_on_uniform_input():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(8, 257))
        d = float(rng.uniform(0.01, 0.5))
        t = float(rng.uniform(0, 100)) + d * np.arange(n)
        x = rng.normal(size=n)
        spectrum = nufft(t, x, CONFIG)
        n_fft = 2 * (spectrum.freqs.size - 1)
        expected = np.abs(np.fft.rfft(x - x.mean(), n=n_fft))
        np.testing.assert_allclose(spectrum.mags, expected, rtol=1e-9, atol=1e-9 * expected.max())


def _band_peak(freqs, mags, band=(0.1, 1.0)):
    mask = (freqs > 0) & (freqs >= band[0]) & (freqs <= band[1])
    return freqs[mask][np.argmax(mags[mask])]


def test_nufft_jittered_sinusoid_peak():
    rng = np.random.default_rng(8)
    t = _jittered_times(rng, duration_s=60.0)
    spectrum = nufft(t, np.sin(2 * np.pi * 0.3 * t), CONFIG)
    assert _band_peak(spectrum.freqs, spectrum.mags) == pytest.approx(0.3, abs=spectrum.bin_hz)


def test_nufft_agrees_with_direct_dft_oracle():
    rng = np.random.default_rng(77)
    for _ in range(100):
        f0 = rng.uniform(0.1, 1.0)
        t = _jittered_times(rng)
        x = np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi)) + rng.normal(0, 0.1, t.size)
        spectrum = nufft(t, x, CONFIG)
        mask = (spectrum.freqs >= 0.1) & (spectrum.freqs <= 1.0)
        grid = spectrum.freqs[mask]
        xc = x - x.mean()
        oracle = np.abs(np.exp(-2j * np.pi * np.outer(grid, t)) @ xc)
        f_oracle = grid[np.argmax(oracle)]
        f_nufft = _band_peak(spectrum.freqs, spectrum.mags)
        assert abs(f_nufft - f_oracle) <= spectrum.resolution_hz


def _spectra(band_power: np.ndarray, freqs: np.ndarray) -> Spectrum:
    return Spectrum(freqs, np.sqrt(band_power), resolution_hz=freqs[1] - freqs[0])


FREQS = np.round(np.arange(0, 151) * 0.01, 2)
BAND = np.flatnonzero((FREQS >= 0.1) & (FREQS <= 1.0))


def test_vote_unanimous():
    power = np.ones((FREQS.size, N_SUBCARRIERS))
    power[FREQS == 0.25, :] = 20.0
    estimate = subcarrier_vote(_spectra(power, FREQS), CONFIG)
    assert estimate.rate_bpm == pytest.approx(15.0)
    assert estimate.vote_weight == pytest.approx(1.0)


def test_vote_few_strong_subcarriers_beat_many_flat_ones():
    power = np.ones((FREQS.size, N_SUBCARRIERS))
    peak = int(np.flatnonzero(FREQS == 0.3)[0])
    others = [b for b in BAND if b != peak]
    power[peak, :3] = 10.0
    for k in range(3, N_SUBCARRIERS):
        power[others[k], k] = 1.5
    estimate = subcarrier_vote(_spectra(power, FREQS), CONFIG)
    assert estimate.rate_bpm == pytest.approx(18.0)
    assert estimate.vote_weight > 0.5


def test_vote_on_white_noise_reports_no_breath():
    rng = np.random.default_rng(13)
    power = rng.exponential(1.0, (FREQS.size, N_SUBCARRIERS))
    estimate = subcarrier_vote(_spectra(power, FREQS), CONFIG)
    assert estimate.rate_bpm == NO_BREATH


def test_vote_scale_invariance():
    trace = synthesize_trace(BreathScenario(persons=[Person(15.0)], duration_s=30.0, seed=21))
    base = subcarrier_vote(compute_spectra(trace.t, trace.amps, CONFIG), CONFIG)
    scaled = subcarrier_vote(compute_spectra(trace.t, trace.amps * 37.5, CONFIG), CONFIG)
    assert scaled.rate_bpm == base.rate_bpm
    np.testing.assert_allclose(scaled.diagnostics["par"], base.diagnostics["par"], rtol=1e-6)


def test_vote_accepts_list_of_spectra():
    power = np.ones((FREQS.size, 4))
    power[FREQS == 0.5, :] = 30.0
    spectra = [Spectrum(FREQS, np.sqrt(power[:, k])) for k in range(4)]
    assert subcarrier_vote(spectra, CONFIG).rate_bpm == pytest.approx(30.0)


def test_vote_empty_band():
    freqs = np.array([0.0, 2.0, 4.0])
    with pytest.raises(PipelineError, match="band"):
        subcarrier_vote(Spectrum(freqs, np.ones((3, 2))), CONFIG)


def test_config_validation():
    with pytest.raises(PipelineError):
        PipelineConfig(window_s=1.0, stride_s=2.0)
    with pytest.raises(PipelineError):
        PipelineConfig(band=(0.5, 2.0))
    with pytest.raises(PipelineError, match="par_exponent"):
        PipelineConfig(par_exponent=0.0)


def test_plain_par_weighting_from_config():
    config = PipelineConfig.from_dict({"par_exponent": 1.0, "band": [0.1, 1.0]})
    assert config.par_exponent == 1.0
    trace = synthesize_trace(BreathScenario(persons=[Person(18.0)], duration_s=60.0, seed=7))
    summary = accuracy_summary(sliding_estimate(trace, config), 18.0)
    assert summary["within_1bpm"] >= 0.95


@pytest.mark.parametrize("duration,window,stride", [
    (100.0, 30.0, 1.0), (100.0, 30.0, 7.0), (100.0, 30.0, 3.0), (60.0, 60.0, 5.0), (45.0, 20.0, 4.0),
])
def test_window_count_formula(duration, window, stride):
    config = PipelineConfig(window_s=window, stride_s=stride)
    assert window_count(duration, config, 0.1) == int(np.floor((duration - window) / stride)) + 1


def test_sliding_count_on_uniform_trace():
    rng = np.random.default_rng(0)
    t = np.arange(600) / 10.0
    trace = CsiTrace(t, 10 + rng.normal(0, 0.2, (600, N_SUBCARRIERS)))
    estimates = sliding_estimate(trace, PipelineConfig(stride_s=5.0))
    assert len(estimates) == 7
    assert estimates[0].window_start_s == 0.0
    assert estimates[-1].window_end_s == pytest.approx(60.0)


def test_sliding_rejects_short_trace():
    trace = synthesize_trace(BreathScenario(persons=[Person(15.0)], duration_s=20.0))
    with pytest.raises(PipelineError, match="30 s"):
        sliding_estimate(trace, CONFIG)


@pytest.mark.parametrize("seed,bpm", [(100, 12.0), (101, 15.0), (102, 20.0), (103, 30.0)])
def test_breathing_accuracy_across_rates(seed, bpm):
    trace = synthesize_trace(BreathScenario(persons=[Person(bpm)], duration_s=120.0, seed=seed))
    estimates = sliding_estimate(trace, CONFIG)
    assert len(estimates) == 91
    summary = accuracy_summary(estimates, bpm)
    assert summary["within_1bpm"] >= 0.99
    assert 0.99 <= summary["mean_ratio"] <= 1.01
    assert summary["mean_accuracy"] >= 0.99


@pytest.mark.parametrize("orientation", ["front", "left", "right", "back"])
def test_breathing_accuracy_for_each_orientation(orientation):
    person = Person(15.0, distance_m=0.5, orientation=orientation)
    trace = synthesize_trace(BreathScenario(persons=[person], duration_s=120.0, seed=140))
    summary = accuracy_summary(sliding_estimate(trace, CONFIG), 15.0)
    assert summary["within_1bpm"] >= 0.99


def test_noise_only_trace_reports_no_breath():
    trace = synthesize_trace(BreathScenario(persons=[], duration_s=90.0, seed=31))
    estimates = sliding_estimate(trace, PipelineConfig(stride_s=2.0))
    absent = sum(1 for e in estimates if e.rate_bpm == NO_BREATH)
    assert absent / len(estimates) >= 0.95


def test_presence_absence_presence():
    person = Person(15.0, present=((0.0, 50.0), (100.0, 150.0)))
    trace = synthesize_trace(BreathScenario(persons=[person], duration_s=150.0, seed=4))
    estimates = sliding_estimate(trace, PipelineConfig(stride_s=2.0))
    inside_absent = [e for e in estimates if e.window_start_s >= 50.0 and e.window_end_s <= 100.0]
    inside_present = [e for e in estimates if e.window_end_s <= 50.0 or e.window_start_s >= 100.0]
    assert inside_absent and all(e.rate_bpm == NO_BREATH for e in inside_absent)
    assert all(abs(e.rate_bpm - 15.0) <= 1.0 for e in inside_present)
    timeline = presence_timeline(estimates)
    assert [p for _, _, p in timeline][:5] == [True] * 5


def test_presence_score_tracks_last_window():
    person = Person(15.0, present=((0.0, 40.0),))
    trace = synthesize_trace(BreathScenario(persons=[person], duration_s=80.0, seed=12))
    assert presence_score(trace.window(0.0, 40.0)) > 0.5
    assert presence_score(trace) == 0.0


def test_distance_cliff():
    config = PipelineConfig(stride_s=3.0)
    fractions = {}
    for d in (0.2, 0.6, 1.0, 1.3, 1.4, 1.6):
        trace = synthesize_trace(BreathScenario(persons=[Person(18.0, distance_m=d)], duration_s=60.0, seed=9))
        estimates = sliding_estimate(trace, config)
        fractions[d] = accuracy_summary(estimates, 18.0)["within_1bpm"]
        if d >= 1.4:
            assert sum(e.rate_bpm == NO_BREATH for e in estimates) / len(estimates) >= 0.95
    assert fractions[0.2] == 1.0
    assert fractions[0.6] == 1.0
    assert fractions[1.0] >= fractions[1.3] >= fractions[1.6]


def test_detect_two_people():
    scenario = BreathScenario(persons=[Person(12.0), Person(20.0)], duration_s=30.0, seed=6)
    trace = synthesize_trace(scenario)
    rates = sorted(r for r, _ in detect_multiple(compute_spectra(trace.t, trace.amps, CONFIG), CONFIG, max_k=2))
    assert len(rates) == 2
    assert rates[0] == pytest.approx(12.0, abs=1.0)
    assert rates[1] == pytest.approx(20.0, abs=1.0)


def test_detect_single_person():
    trace = synthesize_trace(BreathScenario(persons=[Person(16.0)], duration_s=30.0, seed=7))
    found = detect_multiple(compute_spectra(trace.t, trace.amps, CONFIG), CONFIG, max_k=3)
    assert len(found) == 1
    assert found[0][0] == pytest.approx(16.0, abs=1.0)


def test_detect_noise_finds_nobody():
    trace = synthesize_trace(BreathScenario(persons=[], duration_s=30.0, seed=8))
    assert detect_multiple(compute_spectra(trace.t, trace.amps, CONFIG), CONFIG, max_k=2) == []


def test_accuracy_summary_fields():
    estimates = [
        BreathEstimate(18.0, 0, 30, 1.0),
        BreathEstimate(19.5, 1, 31, 1.0),
        BreathEstimate(NO_BREATH, 2, 32, 0.2),
    ]
    summary = accuracy_summary(estimates, 18.0)
    assert summary["windows"] == 3
    assert summary["detected"] == 2
    assert summary["no_breath"] == 1
    assert summary["mean_abs_error_bpm"] == pytest.approx(0.75)
    assert summary["within_1bpm"] == pytest.approx(1 / 3)
    assert summary["mean_ratio"] == pytest.approx((1.0 + 19.5 / 18) / 2)
    assert summary["error_cdf"][-1] == [5.0, pytest.approx(2 / 3)]


def test_estimates_jsonl():
    buf = io.StringIO()
    write_estimates([BreathEstimate(18.0, 0.0, 30.0, 0.9), BreathEstimate(NO_BREATH, 1.0, 31.0, 0.1)], buf)
    lines = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert lines[0] == {"window_start_s": 0.0, "window_end_s": 30.0, "rate_bpm": 18.0, "weight": 0.9}
    assert lines[1]["rate_bpm"] == -1.0
