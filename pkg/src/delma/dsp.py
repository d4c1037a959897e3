"""Spectrogram computation and conditioning shared by the detectors."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from os import PathLike

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

WINDOWS = ("hann", "rectangular")


@dataclass(frozen=True)
class SpectrogramParams:
    fft_size: int = 256
    hop: int = 128
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size < 1 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0 < self.hop <= self.fft_size:
            raise ValueError(f"hop must be in (0, fft_size], got {self.hop}")
        if self.window.lower() not in WINDOWS:
            raise ValueError(f"window must be one of {WINDOWS}, got {self.window!r}")
        object.__setattr__(self, "window", self.window.lower())

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray  # (frames, bins) magnitudes
    frame_times: np.ndarray  # start time of each frame, seconds
    bin_freqs: np.ndarray  # Hz
    sample_rate: float
    params: SpectrogramParams = field(default_factory=SpectrogramParams)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]

    @property
    def bin_width(self) -> float:
        return self.sample_rate / self.params.fft_size


def window(name: str, n: int) -> np.ndarray:
    if name == "rectangular":
        return np.ones(n)
    # periodic Hann, the usual choice for overlapped STFTs
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(
    samples: np.ndarray,
    rate: float,
    params: SpectrogramParams = SpectrogramParams(),
    start_time: float = 0.0,
) -> Spectrogram:
    """One-sided magnitude STFT.

    Frame ``t`` covers ``samples[t*hop : t*hop + fft_size]``; a partial
    trailing frame is dropped.  A buffer shorter than one frame yields a
    spectrogram with zero frames.
    """
    x = np.asarray(samples, dtype=np.float64)
    n, hop = params.fft_size, params.hop
    freqs = np.arange(params.bins) * (rate / n)
    if x.shape[0] < n:
        return Spectrogram(np.zeros((0, params.bins)), np.zeros(0), freqs, rate, params)
    frames = sliding_window_view(x, n)[::hop]
    values = np.abs(np.fft.rfft(frames * window(params.window, n), axis=-1))
    times = start_time + np.arange(frames.shape[0]) * (hop / rate)
    return Spectrogram(values, times, freqs, rate, params)


def noise_normalize(spec: Spectrogram, window: int | None = None) -> Spectrogram:
    """Divide each frequency bin by its median over time.

    With ``window=None`` the median is taken over the whole spectrogram.
    With an integer ``window`` a running median over that many frames is used
    instead, which keeps the result local: a frame's normalized value only
    depends on frames within ``window // 2`` of it.  Zero medians leave the
    corresponding values unchanged.
    """
    values = spec.values
    if values.shape[0] == 0:
        return spec
    if window is None:
        floor = np.median(values, axis=0, keepdims=True)
        floor = np.broadcast_to(floor, values.shape)
    else:
        floor = running_median(values, int(window))
    safe = np.where(floor > 0, floor, 1.0)
    return replace(spec, values=values / safe)


def running_median(values: np.ndarray, window: int, chunk: int = 1024) -> np.ndarray:
    """Median over ``window`` frames (made odd) centred on each frame, with
    mirror-reflected edges.  Same result as ``scipy.ndimage.median_filter``
    with ``size=(window, 1), mode="mirror"`` but faster for long inputs."""
    n = values.shape[0]
    half = max(window, 1) // 2
    if n == 1 or half == 0:
        return values.copy()
    if half >= n:
        return ndimage.median_filter(values, size=(2 * half + 1, 1), mode="mirror")
    padded = np.pad(values, ((half, half), (0, 0)), mode="reflect")
    out = np.empty_like(values)
    for s in range(0, n, chunk):
        win = sliding_window_view(padded[s:s + chunk + 2 * half], 2 * half + 1, axis=0)
        out[s:s + win.shape[0]] = np.partition(win, half, axis=-1)[..., half]
    return out


def binarize(spec: Spectrogram | np.ndarray, threshold: float) -> np.ndarray:
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    values = spec.values if isinstance(spec, Spectrogram) else np.asarray(spec)
    return values > threshold


_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def connected_regions(mask: np.ndarray) -> tuple[np.ndarray, list[tuple[slice, slice]]]:
    """Label 8-connected regions of ``mask``; returns labels and bounding boxes
    (label ``i + 1`` has box ``boxes[i]``)."""
    labels, _ = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    return labels, ndimage.find_objects(labels)


def dump_spectrogram(spec: Spectrogram, path: str | PathLike) -> None:
    """Write ``spec.values`` as a plain-text matrix (rows are frames)."""
    header = (
        f"sample_rate {spec.sample_rate} fft_size {spec.params.fft_size} "
        f"hop {spec.params.hop} window {spec.params.window}"
    )
    np.savetxt(path, spec.values, fmt="%.10g", header=header)
