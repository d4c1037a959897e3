"""Synthetic signals and archives with known ground truth.

Used by the test-suite and the demo scripts: tone bursts, frequency sweeps
and click trains planted into Gaussian noise, written out as a timestamped
WAV archive.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np

from .wavfile import Encoding, write_wav

#: 2011-09-10 00:00:00 UTC
DEFAULT_EPOCH = 1315612800.0


@dataclass(frozen=True)
class PlantedEvent:
    channel: int
    t_start: float  # absolute seconds
    duration: float
    frequency: float
    kind: str = "tone"

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration


def amplitude_for_snr(snr_db: float, noise_std: float) -> float:
    """Sinusoid amplitude whose power is ``snr_db`` above the noise power."""
    return noise_std * np.sqrt(2.0 * 10 ** (snr_db / 10.0))


def _ramp(n: int, rate: float, ramp_seconds: float = 0.01) -> np.ndarray:
    env = np.ones(n)
    k = min(int(ramp_seconds * rate), n // 2)
    if k > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
        env[:k] = r
        env[n - k:] = r[::-1]
    return env


def tone_burst(rate: float, frequency: float, duration: float, amplitude: float) -> np.ndarray:
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    return amplitude * np.sin(2 * np.pi * frequency * t) * _ramp(n, rate)


def sweep(rate: float, f0: float, f1: float, duration: float, amplitude: float) -> np.ndarray:
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / duration * t * t)
    return amplitude * np.sin(phase) * _ramp(n, rate)


def click(rate: float, duration: float, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    n = max(2, int(round(duration * rate)))
    return amplitude * rng.standard_normal(n) * np.hanning(n)


def click_train(rate: float, total: float, onsets: Sequence[float], amplitude: float,
                click_duration: float = 0.02, noise_std: float = 0.01, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = noise_std * rng.standard_normal(int(round(total * rate)))
    for onset in onsets:
        c = click(rate, click_duration, amplitude, rng)
        i = int(round(onset * rate))
        x[i:i + c.size] += c[: max(0, x.size - i)]
    return x


def add_signal(x: np.ndarray, signal: np.ndarray, start_index: int) -> None:
    end = min(x.size, start_index + signal.size)
    x[start_index:end] += signal[: end - start_index]


def file_name(prefix: str, t: float) -> str:
    return f"{prefix}_{datetime.fromtimestamp(t, timezone.utc):%Y%m%d_%H%M%S}.wav"


def write_archive(
    root: str | PathLike,
    channel_data: Sequence[np.ndarray],
    rate: int,
    slot_seconds: float,
    present: Sequence[bool],
    *,
    epoch: float = DEFAULT_EPOCH,
    prefix: str = "SITE",
    encoding: Encoding | str = Encoding.PCM16,
) -> list[Path]:
    """Cut continuous per-channel signals into one multichannel file per slot.

    ``channel_data[c]`` covers every slot; slots whose ``present`` flag is
    false are not written, leaving a gap.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n = int(round(slot_seconds * rate))
    data = np.stack(channel_data, axis=1)
    paths = []
    for slot, keep in enumerate(present):
        if not keep:
            continue
        path = root / file_name(prefix, epoch + slot * slot_seconds)
        write_wav(path, data[slot * n:(slot + 1) * n], rate, encoding)
        paths.append(path)
    return paths


#: seconds from the archive start; several sit across worker cut points
PLANTED_LAYOUT = (
    (0, 100.0, 500.0), (0, 449.8, 400.0), (0, 700.0, 650.0),
    (0, 1300.0, 300.0), (0, 1649.9, 550.0), (0, 1750.0, 700.0),
    (1, 50.0, 450.0), (1, 449.95, 600.0), (1, 820.0, 350.0),
    (1, 1210.0, 750.0), (1, 1649.7, 500.0), (1, 2000.0, 320.0),
)


def planted_event_archive(
    root: str | PathLike,
    *,
    rate: int = 2000,
    snr_db: float = 20.0,
    noise_std: float = 0.01,
    burst_seconds: float = 0.5,
    slot_seconds: float = 300.0,
    present: Sequence[bool] = (True, True, True, False, True, True, True),
    layout: Sequence[tuple[int, float, float]] = PLANTED_LAYOUT,
    seed: int = 2011,
    epoch: float = DEFAULT_EPOCH,
) -> list[PlantedEvent]:
    """Two-channel archive: 30 minutes of noise in two segments separated by
    one missing 5-minute file, with 20 dB tone bursts planted at ``layout``."""
    rng = np.random.default_rng(seed)
    n_total = int(round(slot_seconds * rate)) * len(present)
    n_channels = 1 + max(c for c, _, _ in layout)
    channels = [noise_std * rng.standard_normal(n_total) for _ in range(n_channels)]
    amp = amplitude_for_snr(snr_db, noise_std)
    truth = []
    for c, offset, freq in layout:
        add_signal(channels[c], tone_burst(rate, freq, burst_seconds, amp), int(round(offset * rate)))
        truth.append(PlantedEvent(c, epoch + offset, burst_seconds, freq))
    write_archive(root, channels, rate, slot_seconds, present, epoch=epoch)
    return truth
