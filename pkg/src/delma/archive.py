"""Archive indexing: place timestamped WAV files on a per-channel timeline.

Each channel's files are sorted by start time and grouped into gap-free
segments.  Samples inside a segment have contiguous global indices; a gap
always leaves a hole of at least one index so no read can silently span it.
"""
from __future__ import annotations

import bisect
import logging
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from os import PathLike
from pathlib import Path

import numpy as np

from .wavfile import Encoding, WavFormatError, WavInfo, read_frames, read_wav_info

logger = logging.getLogger(__name__)

#: ``<prefix>_YYYYMMDD_HHMMSS[.ffffff].wav``, parsed as UTC.
DEFAULT_PATTERN = (
    r"^(?P<prefix>.+?)_(?P<date>\d{8})_(?P<time>\d{6})(?:\.(?P<frac>\d+))?\.wav$"
)


class ArchiveError(Exception):
    """Base class for archive failures."""


class IndexingError(ArchiveError):
    """Fatal problem found while building an index."""


class SampleRangeError(ArchiveError, IndexError):
    """Requested sample range is not inside a single segment."""


class ReadError(ArchiveError, OSError):
    """An audio file could not be read while serving samples."""


@dataclass(frozen=True)
class AudioFileEntry:
    path: str
    channel: int
    start_time: float  # seconds since epoch, UTC
    sample_rate: int
    n_samples: int
    encoding: Encoding
    stream: int = 0  # channel inside a multichannel file
    info: WavInfo | None = field(default=None, compare=False, repr=False)

    @property
    def duration_seconds(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration_seconds


@dataclass(frozen=True)
class Segment:
    start_time: float
    start_sample: int
    n_samples: int
    files: tuple[AudioFileEntry, ...]
    # offset of each file's first sample from the segment start
    file_offsets: tuple[int, ...]

    @property
    def end_sample(self) -> int:
        return self.start_sample + self.n_samples

    def contains(self, start: int, stop: int) -> bool:
        return self.start_sample <= start and stop <= self.end_sample

    def time_at(self, sample: float, sample_rate: float) -> float:
        """Absolute time of global sample index ``sample``."""
        return self.start_time + (sample - self.start_sample) / sample_rate


@dataclass(frozen=True)
class ChannelTimeline:
    channel: int
    sample_rate: int
    segments: tuple[Segment, ...]

    @property
    def n_samples(self) -> int:
        return sum(s.n_samples for s in self.segments)

    @property
    def n_gaps(self) -> int:
        return len(self.segments) - 1

    @property
    def covered_seconds(self) -> float:
        return self.n_samples / self.sample_rate

    def segment_of(self, sample: int) -> int:
        """Index of the segment holding global sample ``sample``, or -1."""
        starts = [s.start_sample for s in self.segments]
        i = bisect.bisect_right(starts, sample) - 1
        if i >= 0 and sample < self.segments[i].end_sample:
            return i
        return -1


@dataclass(frozen=True)
class ArchiveIndex:
    root: str
    channels: tuple[ChannelTimeline, ...]
    warnings: tuple[str, ...] = ()

    @property
    def total_channel_hours(self) -> float:
        return sum(c.n_samples / c.sample_rate for c in self.channels) / 3600.0

    @property
    def wall_clock_hours(self) -> float:
        """Hours during which at least one channel was recording."""
        spans = sorted(
            (s.start_time, s.start_time + s.n_samples / c.sample_rate)
            for c in self.channels
            for s in c.segments
        )
        total, cur_start, cur_end = 0.0, None, None
        for a, b in spans:
            if cur_end is None or a > cur_end:
                if cur_end is not None:
                    total += cur_end - cur_start
                cur_start, cur_end = a, b
            else:
                cur_end = max(cur_end, b)
        if cur_end is not None:
            total += cur_end - cur_start
        return total / 3600.0

    @property
    def n_gaps(self) -> int:
        return sum(c.n_gaps for c in self.channels)

    @property
    def n_segments(self) -> int:
        return sum(len(c.segments) for c in self.channels)

    @property
    def n_files(self) -> int:
        return len({f.path for c in self.channels for s in c.segments for f in s.files})

    def channel(self, channel: int) -> ChannelTimeline:
        for c in self.channels:
            if c.channel == channel:
                return c
        raise KeyError(f"channel {channel} not in archive")

    @property
    def channel_ids(self) -> tuple[int, ...]:
        return tuple(c.channel for c in self.channels)


def parse_timestamp(match: re.Match) -> float:
    groups = match.groupdict()
    stamp = datetime.strptime(groups["date"] + groups["time"], "%Y%m%d%H%M%S")
    seconds = stamp.replace(tzinfo=timezone.utc).timestamp()
    frac = groups.get("frac")
    if frac:
        seconds += int(frac) / 10 ** len(frac)
    return seconds


def _iter_candidates(root: Path):
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            yield Path(dirpath) / name


def index_archive(
    root: str | PathLike,
    pattern: str | None = None,
    gap_tolerance: float | None = None,
) -> ArchiveIndex:
    """Index every WAV file under *root* whose name matches *pattern*.

    ``pattern`` is a regular expression with named groups ``date``
    (YYYYMMDD) and ``time`` (HHMMSS), plus optional ``frac`` (fractional
    seconds digits) and ``channel`` (base channel index, default 0).
    ``gap_tolerance`` is in seconds; ``None`` means half a sample period.
    Files with unreadable headers are skipped and listed in ``warnings``.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"archive root {root} does not exist")
    regex = re.compile(pattern or DEFAULT_PATTERN, re.IGNORECASE)
    if not {"date", "time"} <= set(regex.groupindex):
        raise ValueError("pattern must define named groups 'date' and 'time'")

    warnings: list[str] = []
    per_channel: dict[int, list[AudioFileEntry]] = {}
    n_matched = 0
    for path in _iter_candidates(root):
        m = regex.match(path.name)
        if m is None:
            continue
        n_matched += 1
        rel = path.relative_to(root).as_posix()
        try:
            start = parse_timestamp(m)
        except ValueError as exc:
            warnings.append(f"{rel}: bad timestamp ({exc})")
            continue
        try:
            info = read_wav_info(path)
        except (OSError, WavFormatError) as exc:
            warnings.append(f"{rel}: unreadable header ({exc})")
            continue
        base = int(m.groupdict().get("channel") or 0)
        for stream in range(info.n_channels):
            entry = AudioFileEntry(
                rel, base + stream, start, info.sample_rate, info.n_frames,
                info.encoding, stream, info,
            )
            per_channel.setdefault(entry.channel, []).append(entry)
    if n_matched == 0:
        raise IndexingError(f"no files matched under {root}")
    if not per_channel:
        raise IndexingError(f"no readable files under {root}")
    for w in warnings:
        logger.warning(w)

    channels = tuple(
        _build_timeline(ch, per_channel[ch], gap_tolerance) for ch in sorted(per_channel)
    )
    return ArchiveIndex(str(root), channels, tuple(warnings))


def _build_timeline(
    channel: int, entries: list[AudioFileEntry], gap_tolerance: float | None
) -> ChannelTimeline:
    entries = sorted(entries, key=lambda e: (e.start_time, e.path))
    rates = {e.sample_rate for e in entries}
    if len(rates) > 1:
        raise IndexingError(f"channel {channel}: mixed sample rates {sorted(rates)}")
    rate = entries[0].sample_rate
    tol = 0.5 / rate if gap_tolerance is None else float(gap_tolerance)
    origin = entries[0].start_time

    groups: list[list[AudioFileEntry]] = [[entries[0]]]
    prev_end = entries[0].end_time
    for prev, entry in zip(entries, entries[1:]):
        spacing = entry.start_time - prev_end
        if spacing < -tol:
            raise IndexingError(
                f"channel {channel}: {entry.path} overlaps {prev.path} by {-spacing:.6f} s"
            )
        if spacing > tol:
            groups.append([entry])
        else:
            groups[-1].append(entry)
        prev_end = entry.end_time

    segments = []
    next_free = 0
    for files in groups:
        start_sample = max(int(round((files[0].start_time - origin) * rate)), next_free)
        offsets = np.concatenate([[0], np.cumsum([f.n_samples for f in files])])
        seg = Segment(
            files[0].start_time, start_sample, int(offsets[-1]), tuple(files),
            tuple(int(o) for o in offsets[:-1]),
        )
        segments.append(seg)
        # a gap always leaves at least one unused global index
        next_free = seg.end_sample + 1
    return ChannelTimeline(channel, rate, tuple(segments))


def read_samples(index: ArchiveIndex, channel: int, start_sample: int, count: int) -> np.ndarray:
    """Return ``count`` samples of ``channel`` beginning at global ``start_sample``."""
    timeline = index.channel(channel)
    if count < 0:
        raise SampleRangeError("negative sample count")
    seg_no = timeline.segment_of(start_sample)
    if count == 0 and seg_no < 0 and timeline.segment_of(start_sample - 1) >= 0:
        return np.empty(0, dtype=np.float64)  # empty read at a segment's end
    if seg_no < 0:
        raise SampleRangeError(f"channel {channel}: sample {start_sample} lies in a gap")
    seg = timeline.segments[seg_no]
    stop = start_sample + count
    if not seg.contains(start_sample, stop):
        raise SampleRangeError(
            f"channel {channel}: range [{start_sample}, {stop}) leaves segment "
            f"[{seg.start_sample}, {seg.end_sample})"
        )
    out = np.empty(count, dtype=np.float64)
    local = start_sample - seg.start_sample
    i = bisect.bisect_right(seg.file_offsets, local) - 1
    pos = 0
    while pos < count:
        entry, offset = seg.files[i], seg.file_offsets[i]
        a = local + pos - offset
        n = min(entry.n_samples - a, count - pos)
        info = entry.info or read_wav_info(Path(index.root) / entry.path)
        try:
            frames = read_frames(info, a, n)
        except OSError as exc:
            raise ReadError(f"failed reading {entry.path}: {exc}") from exc
        out[pos:pos + n] = frames[:, entry.stream]
        pos += n
        i += 1
    return out


def write_index_manifest(index: ArchiveIndex, path: str | PathLike) -> int:
    """Write one tab-separated line per file entry; return the number of entries."""
    lines = ["# channel\tpath\tstart_time\tsample_rate\tn_samples"]
    for c in index.channels:
        for seg in c.segments:
            for f in seg.files:
                iso = datetime.fromtimestamp(f.start_time, timezone.utc).isoformat(
                    timespec="microseconds"
                )
                lines.append(f"{c.channel}\t{f.path}\t{iso}\t{f.sample_rate}\t{f.n_samples}")
    Path(path).write_text("\n".join(lines) + "\n")
    return len(lines) - 1
