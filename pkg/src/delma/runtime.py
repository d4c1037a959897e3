"""Job execution: index, configure detectors, partition, process, gather.

A job runs through the same code path for any worker count.  Workers are
threads sharing the immutable archive index and block plan; each owns its
own detector instances and its blocks, and hands back a list of events
tagged with the block that produced them.  The gather step keeps only
events whose start lies in the producing block's core region, sorts them
canonically and removes near-duplicates, so the result does not depend on
how the archive was cut.
"""
from __future__ import annotations

import bisect
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

from . import __version__
from .archive import ArchiveError, ArchiveIndex, index_archive, read_samples
from .detectors import BlockData, DetectionEvent, Detector, DetectorRegistry, JobContext
from .detectors import default_registry
from .dsp import SpectrogramParams
from .partition import BlockDescriptor, BlockPlan, PlanStats, encode_blocks, invert_assignment, plan_stats

logger = logging.getLogger(__name__)

AUTO = 0
DEDUP_IOU = 0.7
SELECTIONS_FILE = "detections.selections.txt"
MANIFEST_FILE = "manifest.json"
PLAN_FILE = "plan.txt"


class ConsistencyError(RuntimeError):
    """Internal invariant broken while gathering results."""


@dataclass(frozen=True)
class DetectorRequest:
    algorithm_id: int
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class JobSpec:
    archive_root: str
    detectors: tuple[DetectorRequest, ...]
    pattern: str | None = None
    gap_tolerance: float | None = None
    channels: tuple[int, ...] | None = None  # None -> all
    n_workers: int = AUTO
    spectrogram: SpectrogramParams = SpectrogramParams()
    pad: str | float = "auto"  # "auto" or seconds
    max_block: float | None = None  # seconds
    output_dir: str | None = None

    def with_workers(self, n_workers: int) -> "JobSpec":
        return replace(self, n_workers=n_workers)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detectors"] = [
            {"algorithm_id": r.algorithm_id, "params": dict(r.params)} for r in self.detectors
        ]
        return d


class TaggedEvent(NamedTuple):
    block_id: int
    event: DetectionEvent


@dataclass(frozen=True)
class DetectionSet:
    events: tuple[DetectionEvent, ...]
    origins: tuple[int, ...] = ()  # block id of each event, when known

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def tagged(self) -> list[TaggedEvent]:
        return [TaggedEvent(b, e) for b, e in zip(self.origins, self.events)]


@dataclass(frozen=True)
class BlockFailure:
    block_id: int
    algorithm_id: int | None  # None when the block could not be read
    error: str


@dataclass(frozen=True)
class WorkerReport:
    worker_id: int
    blocks_processed: int
    busy_seconds: float
    cpu_seconds: float


@dataclass(frozen=True)
class JobReport:
    wall_time: float
    per_worker: tuple[WorkerReport, ...]
    balance: PlanStats
    n_events: int
    n_blocks: int
    n_workers: int
    quantum: int
    pad: int
    failures: tuple[BlockFailure, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def busy_spread(self, cpu: bool = False) -> float:
        """max/min busy time over workers that had blocks."""
        times = [w.cpu_seconds if cpu else w.busy_seconds
                 for w in self.per_worker if w.blocks_processed]
        if not times or min(times) <= 0:
            return math.inf if times else 1.0
        return max(times) / min(times)

    def to_dict(self) -> dict:
        return asdict(self)


def resolve_workers(n_workers: int | str) -> int:
    if n_workers in (AUTO, "auto", None):
        return os.cpu_count() or 1
    n = int(n_workers)
    if n < 1:
        raise ValueError("n_workers must be >= 1 or 'auto'")
    return n


# -- gather ---------------------------------------------------------------


def iou(a: DetectionEvent, b: DetectionEvent) -> float:
    dt = min(a.t_end, b.t_end) - max(a.t_start, b.t_start)
    df = min(a.f_high, b.f_high) - max(a.f_low, b.f_low)
    if dt <= 0 or df <= 0:
        return 0.0
    inter = dt * df
    area_a = (a.t_end - a.t_start) * (a.f_high - a.f_low)
    area_b = (b.t_end - b.t_start) * (b.f_high - b.f_low)
    return inter / (area_a + area_b - inter)


def _priority(te: TaggedEvent):
    e = te.event
    return (-e.score, e.t_start, e.sort_key(), te.block_id)


def deduplicate(tagged: Iterable[TaggedEvent], threshold: float = DEDUP_IOU) -> list[TaggedEvent]:
    """Greedy suppression within (algorithm, channel): the best-scoring event
    wins (ties go to the earlier start) and absorbs every event overlapping
    it with IoU >= ``threshold``."""
    groups: dict[tuple[int, int], list[TaggedEvent]] = {}
    for te in tagged:
        groups.setdefault((te.event.algorithm_id, te.event.channel), []).append(te)
    kept_all = []
    for key in sorted(groups):
        starts: list[float] = []
        kept: list[TaggedEvent] = []
        longest = 0.0
        for te in sorted(groups[key], key=_priority):
            e = te.event
            lo = bisect.bisect_left(starts, e.t_start - longest)
            hi = bisect.bisect_right(starts, e.t_end)
            if any(iou(e, kept[i].event) >= threshold for i in range(lo, hi)):
                continue
            pos = bisect.bisect_right(starts, e.t_start)
            starts.insert(pos, e.t_start)
            kept.insert(pos, te)
            longest = max(longest, e.t_end - e.t_start)
        kept_all.extend(kept)
    return kept_all


def core_times(plan: BlockPlan, index: ArchiveIndex) -> list[tuple[float, float]]:
    out = []
    for b in plan.blocks:
        timeline = index.channel(b.channel)
        seg = timeline.segments[b.segment]
        rate = timeline.sample_rate
        out.append((seg.time_at(b.start_sample, rate), seg.time_at(b.end_sample, rate)))
    return out


def gather_merge(
    per_worker_events: Iterable[Iterable[TaggedEvent]],
    plan: BlockPlan,
    index: ArchiveIndex,
) -> DetectionSet:
    """Merge per-worker event lists into the canonical detection set."""
    cores = core_times(plan, index)
    owned = []
    for events in per_worker_events:
        for te in events:
            block_id, e = te
            if not 0 <= block_id < len(cores):
                raise ConsistencyError(f"event references unknown block {block_id}")
            start, end = cores[block_id]
            if plan.blocks[block_id].channel != e.channel:
                raise ConsistencyError(f"event on channel {e.channel} from block {block_id}")
            if start <= e.t_start < end:
                owned.append(TaggedEvent(block_id, e))
    kept = sorted(deduplicate(owned), key=lambda te: (te.event.sort_key(), te.block_id))
    return DetectionSet(tuple(te.event for te in kept), tuple(te.block_id for te in kept))


# -- efficiency -----------------------------------------------------------


def parse_duration(text: str | float) -> float:
    """Seconds from ``HH:MM:SS`` (hours may exceed 24), ``MM:SS`` or a plain number."""
    if isinstance(text, (int, float)):
        return float(text)
    parts = [float(p) for p in str(text).strip().split(":")]
    if not 1 <= len(parts) <= 3:
        raise ValueError(f"bad duration {text!r}")
    seconds = 0.0
    for p in parts:
        seconds = seconds * 60 + p
    return seconds


def format_hms(seconds: float) -> str:
    total = int(round(seconds))
    h, rest = divmod(total, 3600)
    m, s = divmod(rest, 60)
    return f"{h:02d}:{m:02d}:{s:02d}"


def compute_efficiency(t_reference: float | str, t_candidate: float | str) -> float:
    """Runtime efficiency ``t_reference / t_candidate``."""
    ref, cand = parse_duration(t_reference), parse_duration(t_candidate)
    if ref <= 0 or cand <= 0:
        raise ValueError("runtimes must be positive")
    return ref / cand


def format_efficiency(ratio: float) -> str:
    return f"x{int(math.floor(ratio + 0.5))}"


# -- run ------------------------------------------------------------------


@dataclass
class _Prepared:
    index: ArchiveIndex
    plan: BlockPlan
    channels: tuple[int, ...]
    n_workers: int
    resolved_params: dict[int, dict]


def _build_detectors(job: JobSpec, registry: DetectorRegistry, rate: float) -> list[Detector]:
    dets = []
    for req in job.detectors:
        det = registry.create(req.algorithm_id, req.params)
        det.setup(JobContext(rate, job.spectrogram))
        dets.append(det)
    return dets


def prepare_job(job: JobSpec, registry: DetectorRegistry | None = None) -> _Prepared:
    """Initialization, setup and partitioning, without processing."""
    registry = registry or default_registry()
    n_workers = resolve_workers(job.n_workers)
    index = index_archive(job.archive_root, job.pattern, job.gap_tolerance)
    channels = index.channel_ids if job.channels is None else tuple(job.channels)
    missing = set(channels) - set(index.channel_ids)
    if missing:
        raise ValueError(f"channels {sorted(missing)} not in archive")
    ids = [r.algorithm_id for r in job.detectors]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate detector ids in job")
    resolved = {r.algorithm_id: dict(registry.create(r.algorithm_id, r.params).params)
                for r in job.detectors}

    rates = sorted({index.channel(c).sample_rate for c in channels})
    quantum = job.spectrogram.hop
    context = 0.0
    for rate in rates:
        for det in _build_detectors(job, registry, rate):
            quantum = math.lcm(quantum, det.hop())
            context = max(context, det.context_window())
    pad_seconds = context if job.pad == "auto" else float(job.pad)
    pad = max(math.ceil(pad_seconds * r) for r in rates)
    pad = -(-pad // quantum) * quantum
    max_block = None
    if job.max_block is not None:
        max_block = int(job.max_block * max(rates))
    plan = encode_blocks(index, n_workers, pad, quantum, channels, max_block)
    return _Prepared(index, plan, channels, n_workers, resolved)


def _block_data(index: ArchiveIndex, block: BlockDescriptor) -> BlockData:
    timeline = index.channel(block.channel)
    seg = timeline.segments[block.segment]
    samples = read_samples(index, block.channel, block.read_start,
                           block.read_end - block.read_start)
    return BlockData(
        samples=samples,
        sample_rate=timeline.sample_rate,
        channel=block.channel,
        segment_start_time=seg.start_time,
        offset=block.read_start - seg.start_sample,
        open_start=block.read_start > seg.start_sample,
        open_end=block.read_end < seg.end_sample,
        block_id=block.block_id,
    )


def _run_worker(worker_id, blocks, job, registry, index):
    t0, c0 = time.perf_counter(), time.thread_time()
    detectors: dict[float, list[Detector]] = {}
    events: list[TaggedEvent] = []
    failures: list[BlockFailure] = []
    for block in blocks:
        rate = index.channel(block.channel).sample_rate
        if rate not in detectors:
            detectors[rate] = _build_detectors(job, registry, rate)
        data = None
        for attempt in range(2):
            try:
                data = _block_data(index, block)
                break
            except ArchiveError as exc:
                if attempt:
                    failures.append(BlockFailure(block.block_id, None, repr(exc)))
        if data is None:
            continue
        for det in detectors[rate]:
            for attempt in range(2):
                try:
                    found = det.process(data)
                except Exception as exc:  # noqa: BLE001 - isolate detector faults
                    if attempt:
                        failures.append(BlockFailure(block.block_id, det.algorithm_id, repr(exc)))
                    continue
                events.extend(TaggedEvent(block.block_id, e) for e in found)
                break
    for dets in detectors.values():
        for det in dets:
            det.output()
    report = WorkerReport(worker_id, len(blocks), time.perf_counter() - t0,
                          time.thread_time() - c0)
    return events, failures, report


def write_manifest(job: JobSpec, prepared: _Prepared, path: Path,
                   report: "JobReport | None" = None) -> None:
    index, plan = prepared.index, prepared.plan
    manifest = {
        "software": {"name": "delma", "version": __version__},
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "host_cpus": os.cpu_count(),
        "job": job.to_dict(),
        "resolved": {
            "n_workers": prepared.n_workers,
            "channels": list(prepared.channels),
            "detector_params": {str(k): v for k, v in prepared.resolved_params.items()},
            "quantum": plan.quantum,
            "pad_samples": plan.pad,
        },
        "archive": {
            "root": index.root,
            "n_files": index.n_files,
            "n_channels": len(index.channels),
            "channel_hours": index.total_channel_hours,
            "wall_clock_hours": index.wall_clock_hours,
            "n_gaps": index.n_gaps,
            "warnings": list(index.warnings),
        },
        "plan": {"n_blocks": len(plan.blocks), "digest": plan.digest()},
    }
    if report is not None:
        manifest["completed_utc"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        manifest["report"] = report.to_dict()
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def run_job(
    job: JobSpec, registry: DetectorRegistry | None = None
) -> tuple[DetectionSet, JobReport]:
    """Run every job detector over the archive and gather the detections.

    When ``job.output_dir`` is set, a manifest is written before processing
    starts together with the plan; afterwards the selection table is written
    and the manifest is completed with the run report.  Timings only ever
    appear in the manifest, so the other outputs are byte-reproducible.
    """
    from .io import write_selection_table  # io depends on runtime types

    registry = registry or default_registry()
    t0 = time.perf_counter()
    prepared = prepare_job(job, registry)
    index, plan = prepared.index, prepared.plan
    out_dir = Path(job.output_dir) if job.output_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(job, prepared, out_dir / MANIFEST_FILE)
        (out_dir / PLAN_FILE).write_text(plan.to_text())

    work = invert_assignment(plan)
    args = [(w, work[w], job, registry, index) for w in range(plan.n_workers)]
    if plan.n_workers == 1:
        results = [_run_worker(*args[0])]
    else:
        with ThreadPoolExecutor(max_workers=plan.n_workers, thread_name_prefix="delma") as pool:
            results = list(pool.map(lambda a: _run_worker(*a), args))

    detections = gather_merge([r[0] for r in results], plan, index)
    failures = tuple(sorted((f for r in results for f in r[1]),
                            key=lambda f: (f.block_id, f.algorithm_id or 0)))
    warnings = list(index.warnings)
    warnings += [f"block {f.block_id} detector {f.algorithm_id} failed: {f.error}" for f in failures]
    for w in warnings[len(index.warnings):]:
        logger.warning(w)
    report = JobReport(
        wall_time=time.perf_counter() - t0,
        per_worker=tuple(r[2] for r in results),
        balance=plan_stats(plan),
        n_events=len(detections),
        n_blocks=len(plan.blocks),
        n_workers=plan.n_workers,
        quantum=plan.quantum,
        pad=plan.pad,
        failures=failures,
        warnings=tuple(warnings),
    )
    if out_dir is not None:
        write_selection_table(detections, out_dir / SELECTIONS_FILE)
        write_manifest(job, prepared, out_dir / MANIFEST_FILE, report)
    return detections, report
