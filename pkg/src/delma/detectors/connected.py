"""Energy detection by connected-region analysis of a binarized spectrogram."""
from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from ..dsp import SpectrogramParams, binarize, connected_regions, noise_normalize, stft
from .base import BlockData, DetectionEvent, Detector, DetectorConfigError

CONNECTED_REGION_DEFAULTS: dict[str, Any] = {
    "threshold": 4.0,
    "min_duration": 0.2,
    "max_duration": 1.0,
    "min_bandwidth": 0.0,
    "max_bandwidth": float("inf"),
    "noise_window": 63,  # frames in the running-median noise floor
    "fft_size": None,  # None -> job spectrogram settings
    "hop": None,
    "window": None,
}


def spectrogram_params(params: Mapping[str, Any], job: SpectrogramParams) -> SpectrogramParams:
    return SpectrogramParams(
        int(params.get("fft_size") or job.fft_size),
        int(params.get("hop") or job.hop),
        str(params.get("window") or job.window),
    )


def block_spectrogram(block: BlockData, params: SpectrogramParams, noise_window):
    """Noise-normalized spectrogram whose frames sit on the segment's hop grid.

    Returns ``(spectrogram, first)`` where ``first`` is the sample index of
    frame 0 inside ``block.samples``.
    """
    first = block.grid_start(params.hop)
    spec = stft(block.samples[first:], block.sample_rate, params, block.time_at(first))
    if spec.frames == 0:
        return spec, first
    window = None if noise_window in (None, 0) else int(noise_window)
    return noise_normalize(spec, window), first


def frame_span(block: BlockData, params: SpectrogramParams, first: int,
               frame0: int, n_frames: int) -> tuple[float, float]:
    """Absolute time bounds of a run of frames.

    Each frame is credited with the ``hop``-wide interval centred on its
    window, so consecutive frames tile time without overlap.
    """
    lead = (params.fft_size - params.hop) / 2
    a = first + frame0 * params.hop + lead
    return block.time_at(a), block.time_at(a + n_frames * params.hop)


def band_edges(k0: int, k1: int, bin_width: float, n_bins: int) -> tuple[float, float]:
    nyquist = (n_bins - 1) * bin_width
    return max(0.0, (k0 - 0.5) * bin_width), min(nyquist, (k1 - 0.5) * bin_width)


def detect_connected_region(
    block: BlockData,
    params: Mapping[str, Any] | None = None,
    algorithm_id: int = 4,
    stft_params: SpectrogramParams = SpectrogramParams(),
) -> list[DetectionEvent]:
    p = {**CONNECTED_REGION_DEFAULTS, **(params or {})}
    sp = spectrogram_params(p, stft_params)
    spec, first = block_spectrogram(block, sp, p["noise_window"])
    if spec.frames == 0:
        return []
    mask = binarize(spec, float(p["threshold"]))
    _, boxes = connected_regions(mask)
    rate = block.sample_rate
    events = []
    for box in boxes:
        ft, fk = box
        if (block.open_start and ft.start == 0) or (block.open_end and ft.stop == spec.frames):
            continue
        n_frames = ft.stop - ft.start
        duration = n_frames * sp.hop / rate
        if not p["min_duration"] <= duration <= p["max_duration"]:
            continue
        f_low, f_high = band_edges(fk.start, fk.stop, spec.bin_width, spec.bins)
        if not p["min_bandwidth"] <= f_high - f_low <= p["max_bandwidth"]:
            continue
        t_start, t_end = frame_span(block, sp, first, ft.start, n_frames)
        score = float(np.mean(spec.values[box]))
        events.append(DetectionEvent(algorithm_id, block.channel, t_start, t_end,
                                     f_low, f_high, score))
    return events


def connected_region_context(p: Mapping[str, Any], sp: SpectrogramParams, rate: float) -> float:
    noise = (int(p["noise_window"] or 0) // 2 + 2) * sp.hop
    return float(p["max_duration"]) + (noise + sp.fft_size) / rate


class ConnectedRegionDetector(Detector):
    def setup(self, context):
        super().setup(context)
        p = self.params
        self.stft_params = spectrogram_params(p, context.spectrogram)
        if p["min_duration"] > p["max_duration"] or p["min_bandwidth"] > p["max_bandwidth"]:
            raise DetectorConfigError(f"detector {self.algorithm_id}: empty duration/bandwidth range")
        if float(p["threshold"]) <= 0:
            raise DetectorConfigError(f"detector {self.algorithm_id}: threshold must be > 0")

    def hop(self) -> int:
        return self.stft_params.hop

    def context_window(self) -> float:
        return max(self.spec.context_window, connected_region_context(
            self.params, self.stft_params, self.context.sample_rate))

    def process(self, block):
        return detect_connected_region(block, self.params, self.algorithm_id, self.stft_params)
