"""Two-stage pulse-train detection: short pulses first, then regular runs."""
from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from ..dsp import SpectrogramParams
from .base import BlockData, DetectionEvent, Detector, DetectorConfigError
from .connected import connected_region_context, detect_connected_region, spectrogram_params

PULSE_TRAIN_DEFAULTS: dict[str, Any] = {
    "pulse_threshold": 4.0,
    "pulse_min_duration": 0.0,
    "pulse_max_duration": 0.2,
    "pulse_min_bandwidth": 200.0,
    "pulse_max_bandwidth": float("inf"),
    "min_pulses": 5,
    "ipi_min": 0.4,
    "ipi_max": 0.6,
    "ipi_cv_max": 0.1,
    "max_train_duration": 30.0,
    "noise_window": 63,
    "fft_size": None,
    "hop": None,
    "window": None,
}


def _pulse_params(p: Mapping[str, Any]) -> dict[str, Any]:
    return {
        "threshold": p["pulse_threshold"],
        "min_duration": p["pulse_min_duration"],
        "max_duration": p["pulse_max_duration"],
        "min_bandwidth": p["pulse_min_bandwidth"],
        "max_bandwidth": p["pulse_max_bandwidth"],
        "noise_window": p["noise_window"],
        "fft_size": p["fft_size"],
        "hop": p["hop"],
        "window": p["window"],
    }


def merge_overlapping(pulses: list[DetectionEvent]) -> list[DetectionEvent]:
    """Collapse pulses that overlap in time into one (union box, max score)."""
    out: list[DetectionEvent] = []
    for e in sorted(pulses, key=DetectionEvent.sort_key):
        if out and e.t_start < out[-1].t_end:
            last = out[-1]
            out[-1] = DetectionEvent(
                last.algorithm_id, last.channel, last.t_start, max(last.t_end, e.t_end),
                min(last.f_low, e.f_low), max(last.f_high, e.f_high), max(last.score, e.score),
            )
        else:
            out.append(e)
    return out


def regular_runs(
    onsets: np.ndarray, min_pulses: int, ipi_min: float, ipi_max: float, ipi_cv_max: float
) -> list[tuple[int, int]]:
    """Maximal runs ``[i, j)`` of onsets whose consecutive intervals all lie in
    ``[ipi_min, ipi_max]``, keeping those with at least ``min_pulses`` pulses
    and an interval coefficient of variation of at most ``ipi_cv_max``."""
    runs = []
    i = 0
    n = len(onsets)
    while i < n:
        j = i + 1
        while j < n and ipi_min <= onsets[j] - onsets[j - 1] <= ipi_max:
            j += 1
        if j - i >= min_pulses:
            ipi = np.diff(onsets[i:j])
            cv = float(np.std(ipi) / np.mean(ipi)) if ipi.size else 0.0
            if cv <= ipi_cv_max:
                runs.append((i, j))
        i = j
    return runs


def detect_pulse_train(
    block: BlockData,
    params: Mapping[str, Any] | None = None,
    algorithm_id: int = 11,
    stft_params: SpectrogramParams = SpectrogramParams(),
) -> list[DetectionEvent]:
    p = {**PULSE_TRAIN_DEFAULTS, **(params or {})}
    pulses = merge_overlapping(
        detect_connected_region(block, _pulse_params(p), algorithm_id, stft_params)
    )
    if len(pulses) < int(p["min_pulses"]):
        return []
    onsets = np.array([e.t_start for e in pulses])
    sp = spectrogram_params(p, stft_params)
    # a pulse just outside an open edge would be invisible here
    margin = float(p["ipi_max"]) + float(p["pulse_max_duration"]) + sp.fft_size / block.sample_rate
    events = []
    for i, j in regular_runs(onsets, int(p["min_pulses"]), float(p["ipi_min"]),
                             float(p["ipi_max"]), float(p["ipi_cv_max"])):
        run = pulses[i:j]
        t_start, t_end = run[0].t_start, run[-1].t_end
        if t_end - t_start > float(p["max_train_duration"]):
            continue
        if block.open_start and t_start - block.start_time < margin:
            continue
        if block.open_end and block.end_time - t_end < margin:
            continue
        score = len(run) * float(np.mean([e.score for e in run]))
        events.append(DetectionEvent(
            algorithm_id, block.channel, t_start, t_end,
            min(e.f_low for e in run), max(e.f_high for e in run), score,
        ))
    return events


class PulseTrainDetector(Detector):
    def setup(self, context):
        super().setup(context)
        p = self.params
        self.stft_params = spectrogram_params(p, context.spectrogram)
        if int(p["min_pulses"]) < 2:
            raise DetectorConfigError("min_pulses must be >= 2")
        if not 0 < float(p["ipi_min"]) <= float(p["ipi_max"]):
            raise DetectorConfigError("need 0 < ipi_min <= ipi_max")

    def hop(self) -> int:
        return self.stft_params.hop

    def context_window(self) -> float:
        p = self.params
        pulse_ctx = connected_region_context(_pulse_params(p), self.stft_params,
                                             self.context.sample_rate)
        return max(self.spec.context_window,
                   float(p["max_train_duration"]) + float(p["ipi_max"]) + pulse_ctx)

    def process(self, block):
        return detect_pulse_train(block, self.params, self.algorithm_id, self.stft_params)
