"""
Indexing an archive and cutting it into equal blocks
=====================================================

Writes a small two-channel archive with one missing file, indexes it, and
shows how the work is split between workers without any block crossing
the gap.
"""
import tempfile
from pathlib import Path

from delma.archive import index_archive
from delma.partition import encode_blocks, invert_assignment, plan_stats
from delma.synth import planted_event_archive

root = Path(tempfile.mkdtemp()) / "archive"
planted_event_archive(root)  # 7 five-minute files, the 4th one missing

index = index_archive(root)
print(f"{len(index.channels)} channels, {index.total_channel_hours:.3f} channel-hours, "
      f"{index.n_gaps} gaps, {index.n_files} files")
for timeline in index.channels:
    for seg in timeline.segments:
        print(f"  channel {timeline.channel}: samples [{seg.start_sample}, {seg.end_sample})"
              f" from {len(seg.files)} files")

# cuts land on multiples of the STFT hop so frame grids line up for any W
for n_workers in (1, 3, 8):
    plan = encode_blocks(index, n_workers, pad=4096, quantum=128)
    stats = plan_stats(plan)
    print(f"\nW={n_workers}: {len(plan.blocks)} blocks, loads {plan.loads()}, "
          f"imbalance {stats.imbalance_ratio:.5f}")

# each worker's share, decoded from the assignment map
for worker, blocks in invert_assignment(plan).items():
    spans = ", ".join(f"ch{b.channel}[{b.start_sample}:{b.end_sample}]" for b in blocks)
    print(f"  worker {worker}: {spans}")
