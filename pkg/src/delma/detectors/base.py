"""Detector plug-in contract, event type and registry.

A detector goes through four stages: ``initialize`` merges parameter
overrides into the registered defaults, ``setup`` freezes the job
configuration, ``process`` turns one block of samples into events, and
``output`` finalizes.  ``process`` must be a pure function of the block and
the frozen configuration; the runtime builds a separate instance for every
worker so no state is shared between workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from ..dsp import SpectrogramParams

SIGNAL_TYPES = ("sweep", "pulse", "pulse_train")


class RegistrationError(ValueError):
    pass


class DetectorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionEvent:
    algorithm_id: int
    channel: int
    t_start: float
    t_end: float
    f_low: float
    f_high: float
    score: float

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"t_start {self.t_start} must precede t_end {self.t_end}")
        if not self.f_low < self.f_high:
            raise ValueError(f"f_low {self.f_low} must be below f_high {self.f_high}")
        if not (math.isfinite(self.score) and self.score >= 0):
            raise ValueError(f"score must be finite and >= 0, got {self.score}")

    def sort_key(self) -> tuple:
        return (self.channel, self.t_start, self.algorithm_id, self.f_low,
                self.t_end, self.f_high, self.score)

    def shifted(self, dt: float) -> "DetectionEvent":
        return DetectionEvent(self.algorithm_id, self.channel, self.t_start + dt,
                              self.t_end + dt, self.f_low, self.f_high, self.score)


@dataclass(frozen=True)
class DetectorSpec:
    algorithm_id: int
    name: str
    signal_type: str
    params: Mapping[str, Any] = field(default_factory=dict)
    context_window: float = 0.0  # seconds
    # parameters holding file paths, resolved relative to a job config file
    path_params: frozenset = frozenset()

    def __post_init__(self):
        if self.signal_type not in SIGNAL_TYPES:
            raise ValueError(f"signal_type must be one of {SIGNAL_TYPES}")
        if self.context_window < 0:
            raise ValueError("context_window must be >= 0")


@dataclass(frozen=True)
class BlockData:
    """Samples handed to ``Detector.process`` plus their placement in time.

    ``offset`` is the index of ``samples[0]`` from the start of its segment,
    so absolute times are always computed from integer segment positions.
    ``open_start``/``open_end`` flag edges that were cut inside a segment
    (as opposed to real segment edges); structures touching an open edge
    are incomplete and detectors drop them.
    """

    samples: np.ndarray
    sample_rate: float
    channel: int = 0
    segment_start_time: float = 0.0
    offset: int = 0
    open_start: bool = False
    open_end: bool = False
    block_id: int = -1

    @classmethod
    def from_samples(cls, samples, sample_rate, start_time=0.0, channel=0) -> "BlockData":
        return cls(np.asarray(samples, dtype=np.float64), sample_rate, channel, start_time)

    def time_at(self, index: float) -> float:
        return self.segment_start_time + (self.offset + index) / self.sample_rate

    @property
    def start_time(self) -> float:
        return self.time_at(0)

    @property
    def end_time(self) -> float:
        return self.time_at(len(self.samples))

    def grid_start(self, hop: int) -> int:
        """First index of ``samples`` lying on the segment's ``hop`` grid."""
        return (-self.offset) % hop


@dataclass(frozen=True)
class JobContext:
    sample_rate: float
    spectrogram: SpectrogramParams = SpectrogramParams()


class Detector:
    """Base class for detection algorithms."""

    def __init__(self, spec: DetectorSpec):
        self.spec = spec
        self.params: dict[str, Any] = dict(spec.params)
        self.context: JobContext | None = None

    @property
    def algorithm_id(self) -> int:
        return self.spec.algorithm_id

    def initialize(self, params: Mapping[str, Any] | None = None) -> None:
        if self.context is not None:
            raise DetectorConfigError("cannot change parameters after setup")
        unknown = set(params or {}) - set(self.params)
        if unknown:
            raise DetectorConfigError(
                f"detector {self.algorithm_id}: unknown parameter(s) {sorted(unknown)}"
            )
        self.params.update(params or {})

    def setup(self, context: JobContext) -> None:
        self.context = context

    def context_window(self) -> float:
        """Seconds of context needed on each side of a block."""
        return self.spec.context_window

    def hop(self) -> int:
        """STFT hop the detector runs at; block cuts must be multiples of it."""
        return self.context.spectrogram.hop if self.context else 1

    def process(self, block: BlockData) -> list[DetectionEvent]:
        raise NotImplementedError

    def output(self) -> None:
        return None


DetectorFactory = Callable[[DetectorSpec], Detector]


class DetectorRegistry:
    def __init__(self):
        self._entries: dict[int, tuple[DetectorSpec, DetectorFactory]] = {}

    def register(self, spec: DetectorSpec, factory: DetectorFactory) -> "DetectorRegistry":
        if spec.algorithm_id in self._entries:
            raise RegistrationError(f"algorithm id {spec.algorithm_id} already registered")
        self._entries[spec.algorithm_id] = (spec, factory)
        return self

    def __contains__(self, algorithm_id: int) -> bool:
        return algorithm_id in self._entries

    @property
    def ids(self) -> list[int]:
        return sorted(self._entries)

    def resolve(self, algorithm_id: int) -> tuple[DetectorSpec, DetectorFactory]:
        try:
            return self._entries[algorithm_id]
        except KeyError:
            raise KeyError(f"no detector registered with id {algorithm_id}") from None

    def spec(self, algorithm_id: int) -> DetectorSpec:
        return self.resolve(algorithm_id)[0]

    def create(self, algorithm_id: int, params: Mapping[str, Any] | None = None) -> Detector:
        """Fresh, initialized instance; call ``setup`` before ``process``."""
        spec, factory = self.resolve(algorithm_id)
        detector = factory(spec)
        detector.initialize(params)
        return detector


def register_detector(
    registry: DetectorRegistry, spec: DetectorSpec, implementation: DetectorFactory
) -> DetectorRegistry:
    return registry.register(spec, implementation)
