import math

import numpy as np
import pytest

from delma.detectors import (
    CONNECTED_REGION_ID,
    BlockData,
    DetectionEvent,
    Detector,
    DetectorConfigError,
    DetectorRegistry,
    DetectorSpec,
    JobContext,
    RegistrationError,
    SpectrogramTemplate,
    default_registry,
    detect_connected_region,
    detect_pulse_train,
    detect_template,
    load_template,
    register_detector,
    save_template,
)
from delma.detectors.connected import block_spectrogram
from delma.detectors.pulse_train import merge_overlapping, regular_runs
from delma.detectors.synthetic import burn
from delma.detectors.template import band_columns, zncc_scores
from delma.dsp import SpectrogramParams
from delma.synth import add_signal, amplitude_for_snr, click_train, sweep, tone_burst

RATE = 2000
HOP_S = 128 / RATE
NOISE = 0.01


def noise(seconds, seed=0):
    return NOISE * np.random.default_rng(seed).standard_normal(int(seconds * RATE))


def with_bursts(seconds, starts, duration=0.5, freq=500.0, snr_db=20, seed=0):
    x = noise(seconds, seed)
    a = amplitude_for_snr(snr_db, NOISE)
    for s in starts:
        add_signal(x, tone_burst(RATE, freq, duration, a), int(round(s * RATE)))
    return x


def block(x, start_time=0.0, **kw):
    return BlockData(np.asarray(x, dtype=float), RATE, segment_start_time=start_time, **kw)


# connected region

def test_silence_gives_nothing():
    assert detect_connected_region(block(np.zeros(20 * RATE))) == []
    assert detect_connected_region(block(np.zeros(100))) == []


def test_single_tone_burst():
    (e,) = detect_connected_region(block(with_bursts(10, [4.0])))
    assert e.f_low <= 500 <= e.f_high
    assert abs(e.t_start - 4.0) < 2 * HOP_S
    assert abs(e.t_end - 4.5) < 2 * HOP_S
    assert e.algorithm_id == CONNECTED_REGION_ID and e.channel == 0


def test_separated_bursts_stay_apart():
    events = detect_connected_region(block(with_bursts(10, [3.0, 4.0], duration=0.4)))
    assert len(events) == 2


def test_touching_bursts_merge():
    # 10 ms of silence is far shorter than one frame
    events = detect_connected_region(block(with_bursts(10, [3.0, 3.41], duration=0.4)))
    assert len(events) == 1
    assert abs(events[0].t_end - events[0].t_start - 0.81) < 2 * HOP_S


def test_duration_limits_filter():
    x = with_bursts(10, [4.0], duration=0.5)
    assert detect_connected_region(block(x), {"max_duration": 0.3}) == []
    assert detect_connected_region(block(x), {"min_duration": 0.8}) == []
    assert detect_connected_region(block(x), {"min_bandwidth": 400.0}) == []


def boxes(events):
    return [(e.t_start, e.t_end, e.f_low, e.f_high) for e in events]


def test_translation_equivariance():
    x = with_bursts(12, [2.0, 7.3])
    base = detect_connected_region(block(x))
    for dt in (1024.0, 1315612800.0, 0.123):
        moved = detect_connected_region(block(x, start_time=dt))
        assert len(moved) == len(base)
        for a, b in zip(base, moved):
            assert b.t_start - dt == pytest.approx(a.t_start, abs=1e-6)
            assert b.t_end - dt == pytest.approx(a.t_end, abs=1e-6)
            assert (b.f_low, b.f_high, b.score) == (a.f_low, a.f_high, a.score)


@pytest.mark.parametrize("scale", [0.25, 2.0, 8.0, 0.37, 5.1])
def test_amplitude_scaling_keeps_boxes(scale):
    x = with_bursts(12, [2.0, 7.3])
    assert boxes(detect_connected_region(block(scale * x))) == boxes(detect_connected_region(block(x)))


def test_processing_is_pure():
    det = default_registry().create(CONNECTED_REGION_ID)
    det.setup(JobContext(RATE))
    a, b = block(with_bursts(10, [2.0])), block(with_bursts(10, [6.0], seed=3))
    first = det.process(a)
    det.process(b)
    assert det.process(a) == first
    assert det.output() is None


@pytest.mark.parametrize("algorithm_id", [4, 11])
def test_context_sufficiency(algorithm_id):
    """Events owned by a padded block match those of the whole-buffer run."""
    rng = np.random.default_rng(5)
    x = noise(120, seed=5)
    a = amplitude_for_snr(20, NOISE)
    for s in rng.uniform(1, 118, 14):
        add_signal(x, tone_burst(RATE, 500, 0.5, a), int(s * RATE))
    x += click_train(RATE, 120, 40 + 0.5 * np.arange(6), 0.5, noise_std=0.0, seed=2)
    det = default_registry().create(algorithm_id)
    det.setup(JobContext(RATE))
    pad = int(math.ceil(det.context_window() * RATE))
    whole = det.process(block(x))
    cuts = [0, 33_333, 81_000, 130_007, 190_000, x.size]
    got = []
    for lo, hi in zip(cuts, cuts[1:]):
        r0, r1 = max(0, lo - pad), min(x.size, hi + pad)
        b = block(x[r0:r1], offset=r0, open_start=r0 > 0, open_end=r1 < x.size)
        got += [e for e in det.process(b) if lo / RATE <= e.t_start < hi / RATE]
    assert len(whole) > 0
    assert sorted(got, key=DetectionEvent.sort_key) == sorted(whole, key=DetectionEvent.sort_key)


# template

def _sweep_block(offsets, seconds=6.0, seed=1):
    x = noise(seconds, seed)
    s = sweep(RATE, 200, 600, 0.8, amplitude_for_snr(20, NOISE))
    for off in offsets:
        add_signal(x, s, int(round(off * RATE)))
    return block(x)


def _template_from(b, t0=1.0, seconds=0.8, low=150.0, high=650.0):
    spec, first = block_spectrogram(b, SpectrogramParams(), 63)
    frame0 = int(round((t0 * RATE - first) / 128)) - 1
    return SpectrogramTemplate.from_spectrogram(spec, frame0, int(seconds / HOP_S) + 2, low, high), frame0


def test_template_self_match():
    b = _sweep_block([1.0])
    tpl, frame0 = _template_from(b)
    events = detect_template(b, {"template": tpl})
    assert len(events) == 1
    assert events[0].score >= 0.999
    assert abs(events[0].t_start - (frame0 * 128 + 64) / RATE) < 1e-9


def test_template_two_copies():
    tpl, _ = _template_from(_sweep_block([1.0]))
    events = detect_template(_sweep_block([1.0, 3.0], seed=9), {"template": tpl})
    assert len(events) == 2
    for e, off in zip(events, [1.0, 3.0]):
        assert abs(e.t_start - off) < 2 * HOP_S + 1.5 * HOP_S
        assert e.score > 0.8


def brute_force_zncc(values, template):
    m = template.shape[0]
    out = []
    for t in range(values.shape[0] - m + 1):
        r = np.corrcoef(values[t:t + m].ravel(), template.ravel())[0, 1]
        out.append(max(0.0, min(1.0, r)))
    return np.array(out)


def test_template_white_noise():
    tpl, _ = _template_from(_sweep_block([1.0]))
    b = block(noise(6, seed=42))
    assert detect_template(b, {"template": tpl, "score_threshold": 0.7}) == []
    spec, _ = block_spectrogram(b, SpectrogramParams(), 63)
    cols = band_columns(spec.bin_freqs, tpl.band_low, tpl.band_high)
    vals = spec.values[:, cols]
    oracle = brute_force_zncc(vals, tpl.values)
    np.testing.assert_allclose(zncc_scores(vals, tpl.values), oracle, atol=1e-9)
    assert oracle.max() < 0.7


def test_template_larger_than_block():
    tpl, _ = _template_from(_sweep_block([1.0]))
    assert detect_template(block(noise(0.3)), {"template": tpl}) == []


def test_template_file_round_trip(tmp_path):
    tpl, _ = _template_from(_sweep_block([1.0]))
    save_template(tpl, tmp_path / "t.txt")
    again = load_template(tmp_path / "t.txt")
    np.testing.assert_array_equal(again.values, tpl.values)
    assert (again.band_low, again.band_high, again.hop) == (tpl.band_low, tpl.band_high, 128)
    (tmp_path / "bad.txt").write_text("hop 128\n1 2\n")
    with pytest.raises(DetectorConfigError):
        load_template(tmp_path / "bad.txt")


def test_template_detector_checks_hop(tmp_path):
    tpl, _ = _template_from(_sweep_block([1.0]))
    det = default_registry().create(8, {"template": tpl})
    with pytest.raises(DetectorConfigError):
        det.setup(JobContext(RATE, SpectrogramParams(256, 64)))


# pulse train

def _train(onsets, seconds=10.0):
    return block(click_train(RATE, seconds, onsets, 0.5, seed=4))


def test_regular_train_detected():
    onsets = 2.0 + 0.5 * np.arange(6)
    (e,) = detect_pulse_train(_train(onsets))
    assert abs(e.t_start - onsets[0]) < 2 * HOP_S
    assert abs(e.t_end - (onsets[-1] + 0.02)) < 2 * HOP_S
    pulses = merge_overlapping(detect_connected_region(_train(onsets), {
        "threshold": 4.0, "min_duration": 0.0, "max_duration": 0.2, "min_bandwidth": 200.0}))
    assert len(pulses) == 6
    assert e.score == pytest.approx(6 * np.mean([p.score for p in pulses]))


def exhaustive_run_scan(onsets, min_pulses, ipi_min, ipi_max, cv_max):
    """True when any contiguous run of pulses satisfies the regularity test."""
    for i in range(len(onsets)):
        for j in range(i + min_pulses, len(onsets) + 1):
            ipi = np.diff(onsets[i:j])
            if np.all((ipi >= ipi_min) & (ipi <= ipi_max)) and np.std(ipi) / np.mean(ipi) <= cv_max:
                return True
    return False


def test_jittered_train_rejected():
    rng = np.random.default_rng(11)
    onsets = 0.5 + np.cumsum(rng.uniform(0.1, 2.0, 6))
    assert detect_pulse_train(_train(onsets, seconds=14.0)) == []
    assert not exhaustive_run_scan(onsets, 5, 0.4, 0.6, 0.1)


def test_too_few_pulses():
    assert detect_pulse_train(_train(2.0 + 0.5 * np.arange(3))) == []


def maximal_runs_oracle(onsets, min_pulses, ipi_min, ipi_max, cv_max):
    """Every (i, j) pair checked directly: in-range intervals, not extendable."""
    ok = lambda k: ipi_min <= onsets[k] - onsets[k - 1] <= ipi_max
    out = []
    n = len(onsets)
    for i in range(n):
        for j in range(i + 1, n + 1):
            if not all(ok(k) for k in range(i + 1, j)):
                continue
            if (i > 0 and ok(i)) or (j < n and ok(j)):
                continue
            ipi = np.diff(onsets[i:j])
            cv = np.std(ipi) / np.mean(ipi) if ipi.size else 0.0
            if j - i >= min_pulses and cv <= cv_max:
                out.append((i, j))
    return out


def test_regular_runs_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        onsets = np.cumsum(rng.choice([0.5, 0.45, 0.55, 0.3, 1.0], size=rng.integers(1, 12)))
        assert regular_runs(onsets, 4, 0.4, 0.6, 0.1) == maximal_runs_oracle(onsets, 4, 0.4, 0.6, 0.1)


# registry and lifecycle

class Recorder(Detector):
    def process(self, block):
        return [DetectionEvent(self.algorithm_id, block.channel, block.start_time,
                               block.end_time, 10.0, 20.0, 1.0)]


def test_register_and_resolve():
    reg = DetectorRegistry()
    spec = DetectorSpec(1, "one", "sweep")
    assert register_detector(reg, spec, Recorder) is reg
    assert reg.resolve(1) == (spec, Recorder)
    assert 1 in reg and reg.ids == [1]
    with pytest.raises(RegistrationError):
        register_detector(reg, DetectorSpec(1, "again", "pulse"), Recorder)
    with pytest.raises(KeyError):
        reg.resolve(2)


def test_lifecycle_parameter_checks():
    reg = default_registry()
    with pytest.raises(DetectorConfigError):
        reg.create(CONNECTED_REGION_ID, {"treshold": 3})
    det = reg.create(CONNECTED_REGION_ID, {"threshold": 3})
    det.setup(JobContext(RATE))
    with pytest.raises(DetectorConfigError):
        det.initialize({"threshold": 5})
    bad = reg.create(CONNECTED_REGION_ID, {"min_duration": 2.0})
    with pytest.raises(DetectorConfigError):
        bad.setup(JobContext(RATE))


def test_instances_are_independent():
    reg = default_registry()
    a = reg.create(CONNECTED_REGION_ID, {"threshold": 9})
    b = reg.create(CONNECTED_REGION_ID)
    assert a.params["threshold"] == 9 and b.params["threshold"] == 4.0
    assert reg.spec(CONNECTED_REGION_ID).params["threshold"] == 4.0


def test_spec_validation():
    with pytest.raises(ValueError):
        DetectorSpec(1, "x", "song")
    with pytest.raises(ValueError):
        DetectorSpec(1, "x", "pulse", context_window=-1.0)
    with pytest.raises(ValueError):
        DetectionEvent(1, 0, 2.0, 1.0, 0, 1, 1)
    with pytest.raises(ValueError):
        DetectionEvent(1, 0, 1.0, 2.0, 5, 5, 1)
    with pytest.raises(ValueError):
        DetectionEvent(1, 0, 1.0, 2.0, 0, 1, float("nan"))


def test_cpu_bound_detector():
    b = block(noise(2))
    assert burn(b, 4) == burn(b, 4) != burn(b, 5)
    det = default_registry().create(100, {"rounds": 2})
    det.setup(JobContext(RATE))
    assert det.process(b) == []
