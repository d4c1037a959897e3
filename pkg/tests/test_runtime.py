import json
import os
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delma.detectors import (
    BlockData,
    DetectionEvent,
    Detector,
    DetectorRegistry,
    DetectorSpec,
    default_registry,
    save_template,
)
from delma.detectors.connected import block_spectrogram
from delma.detectors.template import SpectrogramTemplate
from delma.dsp import SpectrogramParams
from delma.io import read_selection_table
from delma.partition import encode_blocks, invert_assignment
from delma.runtime import (
    DEDUP_IOU,
    MANIFEST_FILE,
    PLAN_FILE,
    SELECTIONS_FILE,
    ConsistencyError,
    DetectorRequest,
    JobSpec,
    TaggedEvent,
    compute_efficiency,
    core_times,
    format_efficiency,
    format_hms,
    gather_merge,
    iou,
    parse_duration,
    prepare_job,
    resolve_workers,
    run_job,
)
from delma.synth import (
    DEFAULT_EPOCH,
    add_signal,
    amplitude_for_snr,
    click_train,
    sweep,
    tone_burst,
    write_archive,
)

from .conftest import synthetic_index

RATE = 2000


# -- efficiency -----------------------------------------------------------

@pytest.mark.parametrize("ref,cand,ratio,label", [
    ("528:00:00", "12:01:00", 43.94, "x44"),
    ("162:00:00", "12:46:40", 12.68, "x13"),
    ("04:53:00", "00:29:10", 10.05, "x10"),
    ("36:00:00", "03:57:08", 9.11, "x9"),
])
def test_efficiency_ratios(ref, cand, ratio, label):
    r = compute_efficiency(ref, cand)
    assert r == pytest.approx(ratio, abs=0.005)
    assert format_efficiency(r) == label
    assert compute_efficiency(parse_duration(ref), parse_duration(cand)) == r


def test_durations():
    assert parse_duration("528:00:00") == 528 * 3600
    assert parse_duration("29:10") == 1750
    assert parse_duration(12.5) == 12.5
    assert format_hms(43260) == "12:01:00"
    assert format_hms(1900800) == "528:00:00"
    with pytest.raises(ValueError):
        compute_efficiency(0, 10)
    with pytest.raises(ValueError):
        parse_duration("1:2:3:4")


def test_resolve_workers():
    assert resolve_workers("auto") == resolve_workers(0) == (os.cpu_count() or 1)
    assert resolve_workers(48) == 48
    with pytest.raises(ValueError):
        resolve_workers(-2)


# -- gather ---------------------------------------------------------------

def ev(t0, t1, f0=100.0, f1=200.0, score=1.0, ch=0, alg=4):
    return DetectionEvent(alg, ch, t0, t1, f0, f1, score)


def test_iou():
    a = ev(0, 2, 0, 10)
    assert iou(a, a) == 1.0
    assert iou(a, ev(1, 3, 0, 10)) == pytest.approx(1 / 3)
    assert iou(a, ev(2, 3, 0, 10)) == 0.0


@pytest.fixture
def two_block_plan():
    index = synthetic_index([[20_000]])
    return encode_blocks(index, 2, pad=2000), index


def test_overlap_duplicate_survives_once(two_block_plan):
    plan, index = two_block_plan
    (s0, e0), (s1, e1) = core_times(plan, index)
    e = ev(e0 - 0.2, e0 + 0.3)  # starts in block 0's core, seen by both
    merged = gather_merge([[TaggedEvent(0, e)], [TaggedEvent(1, e)]], plan, index)
    assert merged.events == (e,)
    assert merged.origins == (0,)


def test_near_duplicates_collapse_to_best(two_block_plan):
    plan, index = two_block_plan
    s0, _ = core_times(plan, index)[0]
    a = ev(s0 + 1.0, s0 + 2.0, score=3.0)
    b = ev(s0 + 1.05, s0 + 2.0, score=5.0)
    c = ev(s0 + 1.0, s0 + 2.0, score=5.0, alg=8)  # other algorithm is untouched
    merged = gather_merge([[TaggedEvent(0, a), TaggedEvent(0, b), TaggedEvent(0, c)]], plan, index)
    assert merged.events == (c, b)
    tie = ev(s0 + 1.02, s0 + 2.0, score=3.0)
    assert gather_merge([[TaggedEvent(0, tie), TaggedEvent(0, a)]], plan, index).events == (a,)


def test_unknown_block_is_consistency_error(two_block_plan):
    plan, index = two_block_plan
    with pytest.raises(ConsistencyError):
        gather_merge([[TaggedEvent(7, ev(0, 1))]], plan, index)
    s0, _ = core_times(plan, index)[0]
    with pytest.raises(ConsistencyError):
        gather_merge([[TaggedEvent(0, ev(s0, s0 + 1, ch=3))]], plan, index)


def brute_force_merge(tagged, cores):
    owned = [te for te in tagged if cores[te.block_id][0] <= te.event.t_start < cores[te.block_id][1]]
    owned.sort(key=lambda te: (-te.event.score, te.event.t_start, te.event.sort_key(), te.block_id))
    kept = []
    for te in owned:
        e = te.event
        if not any(k.event.algorithm_id == e.algorithm_id and k.event.channel == e.channel
                   and iou(k.event, e) >= DEDUP_IOU for k in kept):
            kept.append(te)
    return sorted((te.event for te in kept), key=DetectionEvent.sort_key)


def random_tagged(rng, plan, index, n):
    cores = core_times(plan, index)
    out = []
    for _ in range(n):
        bid = rng.randrange(len(plan.blocks))
        s, e = cores[bid]
        t0 = rng.uniform(s - 0.5, e + 0.2)
        if rng.random() < 0.3 and out:  # jittered copy of an earlier event
            base = rng.choice(out).event
            t0 = base.t_start + rng.uniform(-0.05, 0.05)
            dur, f0, bw = base.t_end - base.t_start, base.f_low, base.f_high - base.f_low
        else:
            dur, f0, bw = rng.uniform(0.1, 1.0), rng.uniform(0, 800), rng.uniform(10, 200)
        out.append(TaggedEvent(bid, DetectionEvent(
            rng.choice([4, 8]), plan.blocks[bid].channel, t0, t0 + dur, f0, f0 + bw,
            round(rng.uniform(0, 3), 1))))
    return out


def shuffled_workers(rng, tagged, n_workers):
    lists = [[] for _ in range(n_workers)]
    for te in rng.sample(tagged, len(tagged)):
        lists[rng.randrange(n_workers)].append(te)
    return lists


@settings(max_examples=120, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_workers=st.integers(1, 6), n=st.integers(0, 60))
def test_gather_merge_properties(seed, n_workers, n):
    rng = random.Random(seed)
    index = synthetic_index([[30_000, 9_000], [25_000]])
    plan = encode_blocks(index, n_workers, pad=4000, quantum=128)
    tagged = random_tagged(rng, plan, index, n)
    merged = gather_merge(shuffled_workers(rng, tagged, 3), plan, index)
    assert list(merged.events) == brute_force_merge(tagged, core_times(plan, index))
    assert gather_merge(shuffled_workers(rng, tagged, 5), plan, index) == merged
    assert gather_merge([merged.tagged()], plan, index) == merged


# -- jobs -----------------------------------------------------------------

def _burst_archive(root, seconds=120.0, bursts=((0, 10.0), (0, 61.3), (1, 95.0)), zeros=False):
    rng = np.random.default_rng(3)
    n = int(seconds * RATE)
    chans = [np.zeros(n) if zeros else 0.01 * rng.standard_normal(n) for _ in range(2)]
    if not zeros:
        for c, t in bursts:
            add_signal(chans[c], tone_burst(RATE, 500, 0.5, amplitude_for_snr(20, 0.01)), int(t * RATE))
    write_archive(root, chans, RATE, 30.0, (True, True, False, True))
    return root


@pytest.fixture(scope="module")
def burst_archive(tmp_path_factory):
    return _burst_archive(tmp_path_factory.mktemp("bursts"))


def job_for(root, *ids, **kw):
    return JobSpec(str(root), tuple(DetectorRequest(i) if isinstance(i, int) else i for i in ids), **kw)


def test_zero_signal_archive(tmp_path):
    root = _burst_archive(tmp_path / "a", zeros=True)
    detections, report = run_job(job_for(root, 4, n_workers=3))
    assert len(detections) == 0
    assert sum(w.blocks_processed for w in report.per_worker) == report.n_blocks
    assert not report.partial


def test_results_independent_of_workers(burst_archive):
    runs = [run_job(job_for(burst_archive, 4, n_workers=w))[0] for w in (1, 2, 4, 8)]
    assert len(runs[0]) == 2  # the channel-1 burst falls in the missing file
    assert all(r.events == runs[0].events for r in runs)


def test_report_fields(burst_archive):
    _, report = run_job(job_for(burst_archive, 4, n_workers=3))
    assert report.n_workers == 3 and len(report.per_worker) == 3
    assert report.quantum == 128 and report.pad % 128 == 0
    assert all(w.busy_seconds >= 0 and w.cpu_seconds >= 0 for w in report.per_worker)
    assert report.balance.imbalance_ratio >= 1.0
    json.dumps(report.to_dict(), default=str)


def test_pad_and_quantum_policy(burst_archive):
    prep = prepare_job(job_for(burst_archive, 4, n_workers=2, pad=1.0))
    assert prep.plan.pad == 2048  # 2000 samples rounded up to the hop
    sp = SpectrogramParams(256, 64)
    prep = prepare_job(job_for(burst_archive, DetectorRequest(4, {"hop": 96}), n_workers=2, spectrogram=sp))
    assert prep.plan.quantum == 192
    with pytest.raises(ValueError):
        prepare_job(job_for(burst_archive, 4, channels=(0, 5)))
    with pytest.raises(ValueError):
        prepare_job(job_for(burst_archive, 4, 4))


def test_channel_subset(burst_archive):
    detections, _ = run_job(job_for(burst_archive, 4, channels=(1,), n_workers=2))
    assert all(e.channel == 1 for e in detections)


class Marker(Detector):
    """Emits one event per block."""

    def process(self, block):
        return [DetectionEvent(self.algorithm_id, block.channel, block.time_at(0.5 * len(block.samples)),
                               block.time_at(0.5 * len(block.samples)) + 0.1, 1.0, 2.0, 1.0)]


def small_registry(*ids):
    reg = DetectorRegistry()
    for i in ids:
        reg.register(DetectorSpec(i, f"marker{i}", "pulse"), Marker)
    return reg


def test_three_registered_detectors_run_per_block(burst_archive):
    reg = small_registry(1, 2, 8)
    detections, report = run_job(job_for(burst_archive, 1, 2, 8, n_workers=1, pad=0.0,
                                          max_block=20.0), reg)
    by_block = {}
    for te in detections.tagged():
        by_block.setdefault(te.block_id, set()).add(te.event.algorithm_id)
    assert len(by_block) == report.n_blocks
    assert all(ids == {1, 2, 8} for ids in by_block.values())


def test_multi_detector_job(tmp_path):
    rng = np.random.default_rng(8)
    n = 90 * RATE
    x = 0.01 * rng.standard_normal(n)
    amp = amplitude_for_snr(20, 0.01)
    add_signal(x, tone_burst(RATE, 500, 0.5, amp), 10 * RATE)
    s = sweep(RATE, 200, 600, 0.8, amp)
    add_signal(x, s, 30 * RATE)
    x += click_train(RATE, 90, 60 + 0.5 * np.arange(6), 0.5, noise_std=0.0, seed=1)
    ref = np.zeros(20 * RATE)
    ref += 0.01 * rng.standard_normal(ref.size)
    add_signal(ref, s, 8 * RATE)
    spec, first = block_spectrogram(BlockData(ref, RATE), SpectrogramParams(), 63)
    tpl = SpectrogramTemplate.from_spectrogram(spec, int((8 * RATE - first) / 128) - 1, 15, 150, 650)
    save_template(tpl, tmp_path / "sweep.txt")
    write_archive(tmp_path / "arc", [x], RATE, 30.0, (True, True, True))

    reqs = (DetectorRequest(4, {"min_bandwidth": 20.0, "max_bandwidth": 150.0}),
            DetectorRequest(8, {"template": str(tmp_path / "sweep.txt"), "score_threshold": 0.7}),
            DetectorRequest(11))
    results = [run_job(job_for(tmp_path / "arc", *reqs, n_workers=w))[0] for w in (1, 3)]
    assert results[0].events == results[1].events
    found = {e.algorithm_id: e for e in results[0]}
    assert set(found) == {4, 8, 11}
    assert abs(found[4].t_start - (DEFAULT_EPOCH + 10)) < 0.15
    assert abs(found[8].t_start - (DEFAULT_EPOCH + 30)) < 0.25
    assert abs(found[11].t_start - (DEFAULT_EPOCH + 60)) < 0.15


class Flaky(Detector):
    """Raises on block ``bad_block``; can succeed on retry."""

    bad_block = 3
    succeed_on_retry = False

    def __init__(self, spec):
        super().__init__(spec)
        self.calls = 0

    def process(self, block):
        if block.block_id == self.bad_block:
            self.calls += 1
            if not (self.succeed_on_retry and self.calls > 1):
                raise RuntimeError("boom")
        return Marker.process(self, block)


def test_partial_failure_is_isolated(burst_archive):
    reg = default_registry()
    reg.register(DetectorSpec(20, "flaky", "pulse"), Flaky)
    base, _ = run_job(job_for(burst_archive, 4, n_workers=2, max_block=10.0))
    detections, report = run_job(job_for(burst_archive, 4, 20, n_workers=2, max_block=10.0), reg)
    assert report.partial and len(report.failures) == 1
    failure = report.failures[0]
    assert failure.block_id == 3 and failure.algorithm_id == 20 and "boom" in failure.error
    assert [e for e in detections if e.algorithm_id == 4] == list(base.events)
    flaky_blocks = {te.block_id for te in detections.tagged() if te.event.algorithm_id == 20}

    class Healthy(Flaky):
        bad_block = -1

    ok_reg = default_registry()
    ok_reg.register(DetectorSpec(20, "healthy", "pulse"), Healthy)
    healthy, _ = run_job(job_for(burst_archive, 4, 20, n_workers=2, max_block=10.0), ok_reg)
    healthy_blocks = {te.block_id for te in healthy.tagged() if te.event.algorithm_id == 20}
    assert 3 in healthy_blocks
    assert flaky_blocks == healthy_blocks - {3}
    assert any("failed" in w for w in report.warnings)


def test_failed_detector_retried_once(burst_archive):
    class Recovers(Flaky):
        succeed_on_retry = True

    reg = small_registry()
    reg.register(DetectorSpec(21, "recovers", "pulse"), Recovers)
    _, report = run_job(job_for(burst_archive, 21, n_workers=2), reg)
    assert not report.partial


def test_outputs_and_manifest(burst_archive, tmp_path):
    seen = {}

    class Peek(Marker):
        def process(self, block):
            seen["manifest"] = (tmp_path / "out" / MANIFEST_FILE).exists()
            return []

    reg = default_registry()
    reg.register(DetectorSpec(30, "peek", "pulse"), Peek)
    job = job_for(burst_archive, 4, 30, n_workers=2, output_dir=str(tmp_path / "out"))
    detections, report = run_job(job, reg)
    assert seen["manifest"]
    out = tmp_path / "out"
    manifest = json.loads((out / MANIFEST_FILE).read_text())
    prep = prepare_job(job, reg)
    assert manifest["plan"]["digest"] == prep.plan.digest()
    assert manifest["resolved"]["detector_params"]["4"]["threshold"] == 4.0
    assert manifest["software"]["name"] == "delma"
    assert manifest["report"]["n_events"] == len(detections)
    assert (out / PLAN_FILE).read_text() == prep.plan.to_text()
    assert len(read_selection_table(out / SELECTIONS_FILE)) == len(detections)


def test_invert_assignment_matches_worker_blocks(burst_archive):
    prep = prepare_job(job_for(burst_archive, 4, n_workers=4))
    work = invert_assignment(prep.plan)
    assert sorted(work) == [0, 1, 2, 3]
    assert sum(len(v) for v in work.values()) == len(prep.plan.blocks)
