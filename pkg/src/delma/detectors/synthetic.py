"""CPU-bound stand-in detector used for scaling benchmarks."""
from __future__ import annotations

import hashlib

from .base import BlockData, DetectionEvent, Detector

SYNTHETIC_DEFAULTS = {"rounds": 8}


def burn(block: BlockData, rounds: int) -> str:
    # hashlib releases the GIL on large buffers, so threads really run in parallel
    raw = block.samples.tobytes()
    digest = b""
    for _ in range(int(rounds)):
        digest = hashlib.sha256(digest + raw).digest()
    return digest.hex()


class CpuBoundDetector(Detector):
    """Spends CPU time proportional to ``rounds`` x block length; emits no events."""

    def process(self, block: BlockData) -> list[DetectionEvent]:
        burn(block, self.params["rounds"])
        return []
