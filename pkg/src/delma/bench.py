"""Worker-count sweeps and runtime-efficiency report tables."""
from __future__ import annotations

import os
import statistics
from dataclasses import dataclass, replace
from os import PathLike
from pathlib import Path
from typing import Sequence

from .detectors import DetectorRegistry
from .runtime import JobReport, JobSpec, compute_efficiency, format_efficiency, format_hms, run_job

REPORT_HEADER = "Dataset\tCores\tRuntime (HH:MM:SS)\tWall (s)\tSpeedup\tEfficiency"


def physical_cores() -> int:
    try:
        import psutil
    except ImportError:  # pragma: no cover - psutil is normally present
        return os.cpu_count() or 1
    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


@dataclass(frozen=True)
class BenchRow:
    workers: int
    wall_seconds: float  # median over repeats
    speedup: float  # relative to the reference row
    efficiency: float
    reports: tuple[JobReport, ...] = ()


def run_bench(
    job: JobSpec,
    workers: Sequence[int],
    repeats: int = 3,
    registry: DetectorRegistry | None = None,
) -> list[BenchRow]:
    """Time ``job`` at each worker count (median of ``repeats`` runs).

    The reference for speedup is the 1-worker run when present, otherwise
    the first worker count listed.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if not workers or any(w < 1 for w in workers):
        raise ValueError("worker counts must be >= 1")
    job = replace(job, output_dir=None)
    timings = []
    for w in workers:
        reports = tuple(run_job(job.with_workers(w), registry)[1] for _ in range(repeats))
        timings.append((w, statistics.median(r.wall_time for r in reports), reports))
    ref = next((t for w, t, _ in timings if w == 1), timings[0][1])
    return [
        BenchRow(w, t, ref / t, compute_efficiency(ref, t), reports)
        for w, t, reports in timings
    ]


def report_line(dataset: str, cores: int | str, seconds: float, efficiency: float,
                speedup: float | None = None) -> str:
    speed = "" if speedup is None else f"{speedup:.2f}"
    return (f"{dataset}\t{cores}\t{format_hms(seconds)}\t{seconds:.3f}\t{speed}\t"
            f"{format_efficiency(efficiency)}")


def write_bench_report(rows: Sequence[BenchRow], path: str | PathLike, dataset: str) -> None:
    lines = [REPORT_HEADER]
    lines += [report_line(dataset, r.workers, r.wall_seconds, r.efficiency, r.speedup) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")
