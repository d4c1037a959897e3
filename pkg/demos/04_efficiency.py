"""
Runtime efficiency tables
==========================

Efficiency is the ratio of a reference runtime to a candidate runtime,
reported as xN.  The first part recomputes four reference runtime pairs; the
second times a CPU-bound synthetic job on this machine.
"""
import tempfile
from pathlib import Path

from delma.bench import REPORT_HEADER, physical_cores, report_line, run_bench
from delma.runtime import DetectorRequest, JobSpec, compute_efficiency, parse_duration
from delma.synth import planted_event_archive

pairs = [
    ("2 kHz, 172,896 h", 64, "528:00:00", "12:01:00"),  # vs 1 core
    ("16 kHz, 5,520 h", 48, "162:00:00", "12:46:40"),  # this and below vs 4 cores
    ("2 kHz, 168 h", 48, "04:53:00", "00:29:10"),
    ("2 kHz, 29,808 h", 48, "36:00:00", "03:57:08"),
]
print(REPORT_HEADER)
for dataset, cores, ref, cand in pairs:
    ratio = compute_efficiency(ref, cand)
    print(report_line(dataset, cores, parse_duration(cand), ratio))

root = Path(tempfile.mkdtemp()) / "archive"
planted_event_archive(root)
job = JobSpec(str(root), (DetectorRequest(100, {"rounds": 10}),), pad=0.0)
cores = physical_cores()
workers = sorted({1, 2, min(4, max(cores, 1))})
print(f"\nthis machine: {cores} physical core(s)")
print(REPORT_HEADER)
for row in run_bench(job, workers, repeats=1):
    print(report_line("fixture", row.workers, row.wall_seconds, row.efficiency, row.speedup))
