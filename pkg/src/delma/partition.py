"""Equal-work partitioning of an archive timeline into gap-free data blocks.

All selected segments are laid end to end (channel-major, then time) on a
virtual axis of ``T`` samples.  Worker ``k`` owns the virtual range between
cut ``k`` and cut ``k + 1``; each range is split wherever it crosses a
segment boundary, so no block ever spans a gap.

Cuts sit on multiples of ``quantum``.  Writing ``T = a * quantum + r``, cut
``k`` is ``quantum * ceil(k * a / W)``: every worker gets ``m`` or ``m + 1``
quanta and the last one also takes the ``r`` leftover samples.  Loads then
differ by at most one quantum.  Because ``ceil(k * a / W)`` depends only on
``k / W``, the cuts for ``W`` are a subset of the cuts for any multiple of
``W``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Iterable, Sequence

from .archive import ArchiveIndex, Segment


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class BlockDescriptor:
    block_id: int
    channel: int
    segment: int  # index of the segment within its channel
    start_sample: int
    end_sample: int  # exclusive
    pad_before: int = 0
    pad_after: int = 0

    @property
    def n_samples(self) -> int:
        return self.end_sample - self.start_sample

    @property
    def read_start(self) -> int:
        return self.start_sample - self.pad_before

    @property
    def read_end(self) -> int:
        return self.end_sample + self.pad_after


@dataclass(frozen=True)
class BlockPlan:
    blocks: tuple[BlockDescriptor, ...]
    assignment: tuple[int, ...]  # assignment[block_id] -> worker id
    n_workers: int
    quantum: int
    pad: int = 0

    def worker_of(self, block_id: int) -> int:
        return self.assignment[block_id]

    def loads(self) -> list[int]:
        out = [0] * self.n_workers
        for b in self.blocks:
            out[self.assignment[b.block_id]] += b.n_samples
        return out

    def to_text(self) -> str:
        lines = [
            f"# n_workers={self.n_workers} quantum={self.quantum} pad={self.pad}",
            "block_id\tworker\tchannel\tsegment\tstart_sample\tend_sample\tpad_before\tpad_after",
        ]
        for b in self.blocks:
            lines.append(
                f"{b.block_id}\t{self.assignment[b.block_id]}\t{b.channel}\t{b.segment}\t"
                f"{b.start_sample}\t{b.end_sample}\t{b.pad_before}\t{b.pad_after}"
            )
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


@dataclass(frozen=True)
class PlanStats:
    ideal_load: float
    max_load: int
    min_load: int
    imbalance_ratio: float


def _virtual_axis(index: ArchiveIndex, channels: Iterable[int] | None):
    wanted = None if channels is None else set(channels)
    axis: list[tuple[int, int, Segment]] = []
    for timeline in index.channels:
        if wanted is not None and timeline.channel not in wanted:
            continue
        for seg_no, seg in enumerate(timeline.segments):
            axis.append((timeline.channel, seg_no, seg))
    return axis


def cut_positions(total: int, n_workers: int, quantum: int) -> list[int]:
    """Worker boundaries on the virtual axis, including 0 and ``total``."""
    a = total // quantum
    cuts = [quantum * (-(-k * a // n_workers)) for k in range(1, n_workers)]
    return [0, *cuts, total]


def encode_blocks(
    index: ArchiveIndex,
    n_workers: int,
    pad: int = 0,
    quantum: int = 1,
    channels: Iterable[int] | None = None,
    max_block: int | None = None,
) -> BlockPlan:
    """Partition the archive into blocks and assign them to ``n_workers`` workers.

    ``pad`` samples of context are attached on both sides of each block,
    clipped at segment edges.  ``max_block`` optionally caps the core length
    of a block (rounded down to a quantum multiple) to bound memory use;
    it changes block boundaries but not worker loads.
    """
    if n_workers < 1:
        raise PlanError("n_workers must be >= 1")
    if quantum < 1:
        raise PlanError("quantum must be >= 1")
    if pad < 0:
        raise PlanError("pad must be >= 0")
    axis = _virtual_axis(index, channels)
    total = sum(seg.n_samples for _, _, seg in axis)
    if not axis or total == 0:
        raise PlanError("archive has no samples to partition")
    step = None
    if max_block is not None:
        step = max(quantum, (max_block // quantum) * quantum)

    bounds = cut_positions(total, n_workers, quantum)
    blocks: list[BlockDescriptor] = []
    assignment: list[int] = []
    seg_virtual_start = 0
    ranges = iter(range(n_workers))
    worker = next(ranges)
    for channel, seg_no, seg in axis:
        seg_virtual_end = seg_virtual_start + seg.n_samples
        pos = seg_virtual_start
        while pos < seg_virtual_end:
            while bounds[worker + 1] <= pos:
                worker = next(ranges)
            stop = min(bounds[worker + 1], seg_virtual_end)
            pieces = [(pos, stop)]
            if step is not None:
                pieces = [(p, min(p + step, stop)) for p in range(pos, stop, step)]
            for a, b in pieces:
                start = seg.start_sample + (a - seg_virtual_start)
                end = seg.start_sample + (b - seg_virtual_start)
                blocks.append(BlockDescriptor(
                    block_id=len(blocks),
                    channel=channel,
                    segment=seg_no,
                    start_sample=start,
                    end_sample=end,
                    pad_before=min(pad, start - seg.start_sample),
                    pad_after=min(pad, seg.end_sample - end),
                ))
                assignment.append(worker)
            pos = stop
        seg_virtual_start = seg_virtual_end
    return BlockPlan(tuple(blocks), tuple(assignment), n_workers, quantum, pad)


def plan_stats(plan: BlockPlan) -> PlanStats:
    loads = plan.loads()
    ideal = sum(loads) / plan.n_workers
    return PlanStats(ideal, max(loads), min(loads), max(loads) / ideal)


def invert_assignment(plan: BlockPlan) -> dict[int, list[BlockDescriptor]]:
    """Map every worker id (including idle ones) to its blocks in block order."""
    out: dict[int, list[BlockDescriptor]] = {w: [] for w in range(plan.n_workers)}
    for b in plan.blocks:
        out[plan.assignment[b.block_id]].append(b)
    return out


def check_plan(plan: BlockPlan, index: ArchiveIndex, channels: Sequence[int] | None = None) -> None:
    """Raise ``PlanError`` unless the plan covers the timeline exactly and
    every padded extent stays inside its segment."""
    by_channel: dict[int, list[BlockDescriptor]] = {}
    for i, b in enumerate(plan.blocks):
        if b.block_id != i:
            raise PlanError(f"block {i} has id {b.block_id}")
        if b.start_sample >= b.end_sample:
            raise PlanError(f"block {i} is empty")
        seg = index.channel(b.channel).segments[b.segment]
        if not seg.contains(b.read_start, b.read_end):
            raise PlanError(f"block {i} padded extent leaves its segment")
        by_channel.setdefault(b.channel, []).append(b)
    for timeline in index.channels:
        if channels is not None and timeline.channel not in channels:
            continue
        spans = sorted((b.start_sample, b.end_sample) for b in by_channel.get(timeline.channel, []))
        expected = [(s.start_sample, s.end_sample) for s in timeline.segments]
        merged: list[list[int]] = []
        for a, b in spans:
            if merged and a < merged[-1][1]:
                raise PlanError(f"channel {timeline.channel}: overlapping blocks at {a}")
            if merged and a == merged[-1][1]:
                merged[-1][1] = b
            else:
                merged.append([a, b])
        if [tuple(m) for m in merged] != expected:
            raise PlanError(f"channel {timeline.channel}: blocks do not cover the timeline")


def write_plan(plan: BlockPlan, path: str | PathLike) -> None:
    Path(path).write_text(plan.to_text())


def read_plan(path: str | PathLike) -> BlockPlan:
    lines = Path(path).read_text().splitlines()
    header = dict(kv.split("=") for kv in lines[0].lstrip("# ").split())
    blocks, assignment = [], []
    for line in lines[2:]:
        if not line.strip():
            continue
        bid, worker, ch, seg, start, end, pb, pa = (int(v) for v in line.split("\t"))
        blocks.append(BlockDescriptor(bid, ch, seg, start, end, pb, pa))
        assignment.append(worker)
    return BlockPlan(
        tuple(blocks), tuple(assignment), int(header["n_workers"]),
        int(header["quantum"]), int(header.get("pad", 0)),
    )
