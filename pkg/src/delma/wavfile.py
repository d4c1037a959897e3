"""Minimal RIFF/WAVE reader and writer with sample-accurate seeking.

Only the three encodings used by archives are handled: 16- and 24-bit
integer PCM and 32-bit IEEE float.  Integer samples are scaled by their
full-scale value so every read returns float64 values in [-1, 1].
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from os import PathLike
from pathlib import Path

import numpy as np

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class Encoding(str, enum.Enum):
    PCM16 = "PCM16"
    PCM24 = "PCM24"
    FLOAT32 = "Float32"

    @property
    def sample_width(self) -> int:
        return {"PCM16": 2, "PCM24": 3, "Float32": 4}[self.value]

    @property
    def full_scale(self) -> float:
        return {"PCM16": 32768.0, "PCM24": 8388608.0, "Float32": 1.0}[self.value]


class WavFormatError(ValueError):
    """Raised when a file is not a readable RIFF/WAVE file."""


@dataclass(frozen=True)
class WavInfo:
    path: str
    n_channels: int
    sample_rate: int
    encoding: Encoding
    n_frames: int
    data_offset: int

    @property
    def block_align(self) -> int:
        return self.n_channels * self.encoding.sample_width


def read_wav_info(path: str | PathLike) -> WavInfo:
    """Parse the header of *path* without reading sample data."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
            raise WavFormatError(f"{path}: not a RIFF/WAVE file")
        fmt = None
        file_size = path.stat().st_size
        pos = 12
        while pos + 8 <= file_size:
            fh.seek(pos)
            chunk_id, size = struct.unpack("<4sI", fh.read(8))
            body = pos + 8
            if chunk_id == b"fmt ":
                fmt = fh.read(min(size, 40))
            elif chunk_id == b"data":
                if fmt is None:
                    raise WavFormatError(f"{path}: data chunk before fmt chunk")
                channels, rate, encoding = _parse_fmt(path, fmt)
                available = min(size, file_size - body)
                n_frames = available // (channels * encoding.sample_width)
                if n_frames <= 0:
                    raise WavFormatError(f"{path}: empty data chunk")
                return WavInfo(str(path), channels, rate, encoding, n_frames, body)
            pos = body + size + (size & 1)
    raise WavFormatError(f"{path}: no data chunk")


def _parse_fmt(path: Path, fmt: bytes) -> tuple[int, int, Encoding]:
    if len(fmt) < 16:
        raise WavFormatError(f"{path}: truncated fmt chunk")
    tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise WavFormatError(f"{path}: truncated extensible fmt chunk")
        tag = struct.unpack("<H", fmt[24:26])[0]
    if channels < 1 or rate < 1:
        raise WavFormatError(f"{path}: invalid channel count or rate")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        return channels, rate, Encoding.PCM16
    if tag == _WAVE_FORMAT_PCM and bits == 24:
        return channels, rate, Encoding.PCM24
    if tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        return channels, rate, Encoding.FLOAT32
    raise WavFormatError(f"{path}: unsupported format tag {tag:#x} / {bits} bits")


def decode(raw: bytes, encoding: Encoding, n_channels: int) -> np.ndarray:
    """Decode interleaved little-endian samples into a (frames, channels) array."""
    if encoding is Encoding.PCM16:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    elif encoding is Encoding.PCM24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints & 0x800000, ints - 0x1000000, ints)
        data = ints.astype(np.float64)
    else:
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    data /= encoding.full_scale
    return data.reshape(-1, n_channels)


def read_frames(info: WavInfo, start: int, count: int) -> np.ndarray:
    """Read ``count`` frames starting at frame ``start``; shape (count, channels)."""
    if start < 0 or count < 0 or start + count > info.n_frames:
        raise IndexError(
            f"{info.path}: frames [{start}, {start + count}) outside [0, {info.n_frames})"
        )
    with open(info.path, "rb") as fh:
        fh.seek(info.data_offset + start * info.block_align)
        raw = fh.read(count * info.block_align)
    if len(raw) != count * info.block_align:
        raise OSError(f"{info.path}: short read ({len(raw)} bytes)")
    return decode(raw, info.encoding, info.n_channels)


def write_wav(
    path: str | PathLike,
    data: np.ndarray,
    sample_rate: int,
    encoding: Encoding | str = Encoding.PCM16,
) -> None:
    """Write float samples in [-1, 1] (shape (n,) or (n, channels)) to *path*."""
    encoding = Encoding(encoding)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    n_frames, n_channels = data.shape
    if encoding is Encoding.FLOAT32:
        payload = data.astype("<f4").tobytes()
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        fs = encoding.full_scale
        ints = np.clip(np.round(data * fs), -fs, fs - 1).astype(np.int32)
        if encoding is Encoding.PCM16:
            payload = ints.astype("<i2").tobytes()
            bits = 16
        else:
            u = (ints & 0xFFFFFF).astype("<u4").reshape(-1)
            payload = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1)
            payload = payload.astype(np.uint8).tobytes()
            bits = 24
        tag = _WAVE_FORMAT_PCM
    width = bits // 8
    fmt = struct.pack(
        "<HHIIHH",
        tag,
        n_channels,
        int(sample_rate),
        int(sample_rate) * n_channels * width,
        n_channels * width,
        bits,
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
