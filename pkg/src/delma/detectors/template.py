"""Spectrogram template matching (zero-normalized cross-correlation)."""
from __future__ import annotations

from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..dsp import Spectrogram, SpectrogramParams
from .base import BlockData, DetectionEvent, Detector, DetectorConfigError
from .connected import band_edges, block_spectrogram, frame_span, spectrogram_params

TEMPLATE_DEFAULTS: dict[str, Any] = {
    "template": None,  # SpectrogramTemplate or path to a template file
    "score_threshold": 0.6,
    "noise_window": 63,
    "fft_size": None,
    "hop": None,
    "window": None,
}


@dataclass(frozen=True)
class SpectrogramTemplate:
    values: np.ndarray  # (frames, bins) over the band
    band_low: float
    band_high: float
    hop: int

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_spectrogram(cls, spec: Spectrogram, frame0: int, n_frames: int,
                         band_low: float, band_high: float) -> "SpectrogramTemplate":
        cols = band_columns(spec.bin_freqs, band_low, band_high)
        patch = spec.values[frame0:frame0 + n_frames, cols]
        return cls(np.array(patch), band_low, band_high, spec.params.hop)


def band_columns(bin_freqs: np.ndarray, low: float, high: float) -> slice:
    idx = np.flatnonzero((bin_freqs >= low) & (bin_freqs <= high))
    if idx.size == 0:
        raise DetectorConfigError(f"band [{low}, {high}] Hz contains no spectrogram bins")
    return slice(int(idx[0]), int(idx[-1]) + 1)


def save_template(template: SpectrogramTemplate, path: str | PathLike) -> None:
    lines = [f"band_hz {template.band_low!r} {template.band_high!r}", f"hop {template.hop}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in template.values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_template(path: str | PathLike) -> SpectrogramTemplate:
    lines = Path(path).read_text().splitlines()
    try:
        key, low, high = lines[0].split()
        key2, hop = lines[1].split()
        if key != "band_hz" or key2 != "hop":
            raise ValueError("expected 'band_hz <low> <high>' and 'hop <samples>' header")
        rows = [[float(v) for v in line.split()] for line in lines[2:] if line.strip()]
        values = np.array(rows, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("template matrix is empty or ragged")
    except (ValueError, IndexError) as exc:
        raise DetectorConfigError(f"{path}: bad template file ({exc})") from None
    return SpectrogramTemplate(values, float(low), float(high), int(hop))


def zncc_scores(values: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Zero-normalized cross-correlation of ``template`` at every frame offset.

    Sums are accumulated row by row in a fixed order so that a score only
    depends on the frames under the template, not on the array length.
    """
    m = template.shape[0]
    n = values.shape[0] - m + 1
    if n <= 0:
        return np.zeros(0)
    t = template - template.mean()
    t_norm = np.sqrt(np.sum(t * t))
    size = template.size
    num = np.zeros(n)
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    row1 = values.sum(axis=1)
    row2 = (values * values).sum(axis=1)
    for i in range(m):
        num += (values[i:i + n] * t[i]).sum(axis=1)
        s1 += row1[i:i + n]
        s2 += row2[i:i + n]
    var = s2 - s1 * s1 / size
    denom = np.sqrt(np.maximum(var, 0.0)) * t_norm
    ok = denom > 1e-12 * max(1.0, t_norm)
    scores = np.zeros(n)
    scores[ok] = num[ok] / denom[ok]
    return np.clip(scores, 0.0, 1.0)


def local_peaks(scores: np.ndarray, threshold: float, radius: int) -> list[int]:
    """Indices above ``threshold`` that dominate every neighbour within
    ``radius`` (strictly on the left, non-strictly on the right, so a
    plateau yields its first index)."""
    peaks = []
    for t in np.flatnonzero(scores > threshold):
        left = scores[max(0, t - radius):t]
        right = scores[t + 1:t + radius + 1]
        if (left.size == 0 or scores[t] > left.max()) and (right.size == 0 or scores[t] >= right.max()):
            peaks.append(int(t))
    return peaks


def _resolve_template(value) -> SpectrogramTemplate:
    if isinstance(value, SpectrogramTemplate):
        return value
    if value is None:
        raise DetectorConfigError("template detector needs a 'template' parameter")
    return load_template(value)


def detect_template(
    block: BlockData,
    params: Mapping[str, Any],
    algorithm_id: int = 8,
    stft_params: SpectrogramParams = SpectrogramParams(),
) -> list[DetectionEvent]:
    p = {**TEMPLATE_DEFAULTS, **params}
    tpl = _resolve_template(p["template"])
    sp = spectrogram_params(p, stft_params)
    spec, first = block_spectrogram(block, sp, p["noise_window"])
    if spec.frames < tpl.frames:
        return []
    cols = band_columns(spec.bin_freqs, tpl.band_low, tpl.band_high)
    if cols.stop - cols.start != tpl.values.shape[1]:
        raise DetectorConfigError(
            f"template has {tpl.values.shape[1]} bins but band covers {cols.stop - cols.start}"
        )
    scores = zncc_scores(spec.values[:, cols], tpl.values)
    radius = max(1, tpl.frames // 2)
    last = scores.size - 1
    f_low, f_high = band_edges(cols.start, cols.stop, spec.bin_width, spec.bins)
    events = []
    for t in local_peaks(scores, float(p["score_threshold"]), radius):
        if (block.open_start and t < radius) or (block.open_end and t + radius > last):
            continue
        t_start, t_end = frame_span(block, sp, first, t, tpl.frames)
        events.append(DetectionEvent(algorithm_id, block.channel, t_start, t_end,
                                     f_low, f_high, float(scores[t])))
    return events


class TemplateDetector(Detector):
    def setup(self, context):
        super().setup(context)
        self.stft_params = spectrogram_params(self.params, context.spectrogram)
        self.params["template"] = _resolve_template(self.params["template"])
        if self.params["template"].hop != self.stft_params.hop:
            raise DetectorConfigError(
                f"template hop {self.params['template'].hop} != detector hop {self.stft_params.hop}"
            )

    def hop(self) -> int:
        return self.stft_params.hop

    def context_window(self) -> float:
        tpl = self.params["template"]
        sp = self.stft_params
        frames = tpl.frames + max(1, tpl.frames // 2) + int(self.params["noise_window"] or 0) // 2 + 2
        return max(self.spec.context_window,
                   (frames * sp.hop + sp.fft_size) / self.context.sample_rate)

    def process(self, block):
        return detect_template(block, self.params, self.algorithm_id, self.stft_params)
