"""Command-line entry point: ``delma {index,plan,run,bench,report}``.

Exit codes: 0 success, 1 partial failure (some blocks failed),
2 usage or configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .archive import ArchiveError, IndexingError, index_archive, write_index_manifest
from .bench import REPORT_HEADER, physical_cores, report_line, run_bench, write_bench_report
from .detectors import DetectorConfigError, default_registry
from .io import ConfigError, read_job_config
from .partition import PlanError, encode_blocks, plan_stats, write_plan
from .runtime import compute_efficiency, parse_duration, prepare_job, run_job

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
LOCK_NAME = ".delma.lock"

log = logging.getLogger("delma")


class LockedError(OSError):
    pass


@contextlib.contextmanager
def output_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockedError(f"{directory} is in use by another invocation ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _job(args):
    job = read_job_config(args.config, default_registry())
    if getattr(args, "workers", None) is not None:
        job = job.with_workers(args.workers)
    if getattr(args, "out_dir", None):
        job = replace(job, output_dir=str(Path(args.out_dir).resolve()))
    return job


def cmd_index(args) -> int:
    index = index_archive(args.root, args.pattern, args.gap_tolerance)
    n = len(index.channels)
    print(f"{n} channel{'s' if n != 1 else ''}, {index.total_channel_hours:.3f} channel-hours, "
          f"{index.n_gaps} gap{'s' if index.n_gaps != 1 else ''}")
    for w in index.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out:
        write_index_manifest(index, args.out)
    return EXIT_OK


def cmd_plan(args) -> int:
    if args.config:
        job = read_job_config(args.config, default_registry())
        if args.workers is not None:
            job = job.with_workers(args.workers)
        plan = prepare_job(job, default_registry()).plan
    else:
        if not args.root:
            raise ConfigError("<args>", None, "plan needs --config or --root")
        index = index_archive(args.root, args.pattern, args.gap_tolerance)
        plan = encode_blocks(index, args.workers or 1, args.pad, args.quantum)
    stats = plan_stats(plan)
    print(f"{len(plan.blocks)} blocks over {plan.n_workers} workers, "
          f"imbalance {stats.imbalance_ratio:.4f} (max {stats.max_load}, min {stats.min_load})")
    if args.out:
        write_plan(plan, args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    job = _job(args)
    if job.output_dir is None:
        raise ConfigError(args.config, None, "no output directory ([output] dir or --out-dir)")
    with output_lock(Path(job.output_dir)):
        detections, report = run_job(job, default_registry())
    print(f"{report.n_events} events from {report.n_blocks} blocks on {report.n_workers} "
          f"workers in {report.wall_time:.2f} s")
    for f in report.failures:
        print(f"failed: block {f.block_id} detector {f.algorithm_id}: {f.error}", file=sys.stderr)
    return EXIT_PARTIAL if report.partial else EXIT_OK


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise ConfigError("<args>", None, "--repeats must be >= 1")
    job = _job(args)
    workers = [int(w) for w in args.workers_list.replace(",", " ").split()]
    rows = run_bench(job, workers, args.repeats, default_registry())
    dataset = args.dataset or Path(job.archive_root).name
    print(REPORT_HEADER)
    for r in rows:
        print(report_line(dataset, r.workers, r.wall_seconds, r.efficiency, r.speedup))
    cores = physical_cores()
    if max(workers) > cores:
        print(f"note: only {cores} physical core{'s' if cores != 1 else ''}; "
              "speedups above that are not meaningful",
              file=sys.stderr)
    if args.out:
        write_bench_report(rows, args.out, dataset)
    return EXIT_PARTIAL if any(rep.partial for r in rows for rep in r.reports) else EXIT_OK


def cmd_report(args) -> int:
    ratio = compute_efficiency(args.reference, args.candidate)
    line = report_line(args.dataset, args.cores, parse_duration(args.candidate), ratio)
    print(REPORT_HEADER)
    print(line)
    if args.out:
        Path(args.out).write_text(REPORT_HEADER + "\n" + line + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delma", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("index", help="index an archive and print its extent")
    s.add_argument("--root", required=True)
    s.add_argument("--pattern")
    s.add_argument("--gap-tolerance", type=float)
    s.add_argument("--out", help="write an index manifest here")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("plan", help="partition an archive into worker blocks")
    s.add_argument("--config")
    s.add_argument("--root")
    s.add_argument("--pattern")
    s.add_argument("--gap-tolerance", type=float)
    s.add_argument("--workers", type=int)
    s.add_argument("--pad", type=int, default=0, help="context samples (with --root)")
    s.add_argument("--quantum", type=int, default=128, help="cut granularity (with --root)")
    s.add_argument("--out", help="write the plan here")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("run", help="run a detection job")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int, help="overrides [runtime] workers")
    s.add_argument("--out-dir", help="overrides [output] dir")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("bench", help="time a job at several worker counts")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", dest="workers_list", default="1,2,4")
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--dataset")
    s.add_argument("--out", help="write the report table here")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("report", help="efficiency of a candidate runtime against a reference")
    s.add_argument("--reference", required=True, help="HH:MM:SS or seconds")
    s.add_argument("--candidate", required=True, help="HH:MM:SS or seconds")
    s.add_argument("--dataset", default="-")
    s.add_argument("--cores", default="-")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IndexingError, PlanError, DetectorConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ArchiveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
