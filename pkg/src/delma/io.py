"""Selection tables and job configuration files.

Job configuration grammar (``#`` starts a comment)::

    [archive]
    root = recordings            # required, relative to this file
    pattern = ^(?P<site>.+)_(?P<date>\\d{8})_(?P<time>\\d{6})\\.wav$
    gap_tolerance = 0.001        # seconds; default half a sample period
    channels = 0, 1              # or "all" (default)

    [detector]                   # repeatable, one block per detector
    id = 4
    threshold = 5.0              # any parameter of that detector

    [runtime]
    workers = 48                 # or "auto" (default)
    fft_size = 256
    hop = 128
    window = hann
    pad = auto                   # or seconds
    max_block = 600              # seconds; default unlimited

    [output]
    dir = results                # relative to this file
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Any, Callable

from .detectors import DetectionEvent, DetectorRegistry, default_registry
from .dsp import SpectrogramParams
from .runtime import AUTO, DetectionSet, DetectorRequest, JobSpec

SELECTION_HEADER = (
    "Selection\tChannel\tBegin Time (s)\tEnd Time (s)\t"
    "Low Freq (Hz)\tHigh Freq (Hz)\tScore\tAlgorithm"
)


class ConfigError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        self.path, self.line = str(path), line
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")


def format_row(n: int, e: DetectionEvent) -> str:
    return (
        f"{n}\t{e.channel}\t{e.t_start:.6f}\t{e.t_end:.6f}\t"
        f"{e.f_low:.1f}\t{e.f_high:.1f}\t{e.score:.4f}\t{e.algorithm_id}"
    )


def quantize(e: DetectionEvent) -> DetectionEvent:
    """The event as it reads back from a selection table."""
    return DetectionEvent(
        e.algorithm_id, e.channel, float(f"{e.t_start:.6f}"), float(f"{e.t_end:.6f}"),
        float(f"{e.f_low:.1f}"), float(f"{e.f_high:.1f}"), float(f"{e.score:.4f}"),
    )


def write_selection_table(detections: DetectionSet, path: str | PathLike) -> int:
    """Write ``detections`` as a tab-separated selection table; return row count."""
    lines = [SELECTION_HEADER]
    lines += [format_row(i, e) for i, e in enumerate(detections.events, start=1)]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write selection table {path}: {exc}") from exc
    return len(lines) - 1


def read_selection_table(path: str | PathLike) -> DetectionSet:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SELECTION_HEADER:
        raise ValueError(f"{path}: missing selection table header")
    events = []
    for n, line in enumerate(lines[1:], start=1):
        cols = line.split("\t")
        if len(cols) != 8 or int(cols[0]) != n:
            raise ValueError(f"{path}:{n + 1}: malformed selection row")
        events.append(DetectionEvent(
            algorithm_id=int(cols[7]), channel=int(cols[1]),
            t_start=float(cols[2]), t_end=float(cols[3]),
            f_low=float(cols[4]), f_high=float(cols[5]), score=float(cols[6]),
        ))
    return DetectionSet(tuple(events))


# -- job configuration ----------------------------------------------------


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    return text


def _channels(text: str):
    if text.strip().lower() == "all":
        return None
    return tuple(int(c) for c in text.replace(",", " ").split())


def _workers(text: str) -> int:
    if text.strip().lower() == "auto":
        return AUTO
    n = int(text)
    if n < 0:
        raise ValueError("workers must be >= 0 or auto")
    return n


def _pad(text: str):
    if text.strip().lower() == "auto":
        return "auto"
    v = float(text)
    if v < 0:
        raise ValueError("pad must be >= 0")
    return v


_SECTION_KEYS: dict[str, dict[str, Callable[[str], Any]]] = {
    "archive": {"root": str, "pattern": str, "gap_tolerance": float, "channels": _channels},
    "runtime": {"workers": _workers, "fft_size": int, "hop": int, "window": str,
                "pad": _pad, "max_block": float},
    "output": {"dir": str},
}
_REQUIRED = {"archive": ("root",)}


_COMMENT = re.compile(r"(^|\s)#.*$")


@dataclass
class _Block:
    name: str
    line: int
    values: dict
    lines: dict


def _parse_blocks(path: Path) -> list[_Block]:
    blocks: list[_Block] = []
    for n, raw in enumerate(path.read_text().splitlines(), start=1):
        text = _COMMENT.sub("", raw).strip()
        if not text or text.startswith("#"):
            continue
        if text.startswith("[") and text.endswith("]"):
            name = text[1:-1].strip().lower()
            if name not in (*_SECTION_KEYS, "detector"):
                raise ConfigError(path, n, f"unknown section [{name}]")
            if name != "detector" and any(b.name == name for b in blocks):
                raise ConfigError(path, n, f"section [{name}] given twice")
            blocks.append(_Block(name, n, {}, {}))
            continue
        if "=" not in text:
            raise ConfigError(path, n, f"expected 'key = value', got {text!r}")
        if not blocks:
            raise ConfigError(path, n, "key outside of any section")
        key, value = (s.strip() for s in text.split("=", 1))
        block = blocks[-1]
        if key in block.values:
            raise ConfigError(path, n, f"duplicate key {key!r}")
        block.values[key], block.lines[key] = value, n
    return blocks


def read_job_config(path: str | PathLike, registry: DetectorRegistry | None = None) -> JobSpec:
    """Parse a job configuration file into a fully resolved ``JobSpec``."""
    path = Path(path)
    registry = registry or default_registry()
    if not path.is_file():
        raise FileNotFoundError(f"config file {path} not found")
    base = path.parent
    blocks = _parse_blocks(path)

    settings: dict[str, dict[str, Any]] = {name: {} for name in _SECTION_KEYS}
    detectors: list[DetectorRequest] = []
    for block in blocks:
        if block.name == "detector":
            detectors.append(_detector_request(path, base, block, registry, detectors))
            continue
        schema = _SECTION_KEYS[block.name]
        for key, value in block.values.items():
            if key not in schema:
                raise ConfigError(path, block.lines[key], f"unknown key {key!r} in [{block.name}]")
            try:
                settings[block.name][key] = schema[key](value)
            except ValueError as exc:
                raise ConfigError(path, block.lines[key], f"bad value for {key!r}: {exc}") from None
    for section, keys in _REQUIRED.items():
        for key in keys:
            if key not in settings[section]:
                line = next((b.line for b in blocks if b.name == section), None)
                raise ConfigError(path, line, f"missing required key {key!r} in [{section}]")
    if not detectors:
        raise ConfigError(path, None, "no [detector] blocks")

    archive, runtime, output = settings["archive"], settings["runtime"], settings["output"]
    defaults = SpectrogramParams()
    try:
        spectrogram = SpectrogramParams(
            runtime.get("fft_size", defaults.fft_size),
            runtime.get("hop", defaults.hop),
            runtime.get("window", defaults.window),
        )
    except ValueError as exc:
        line = next((b.line for b in blocks if b.name == "runtime"), None)
        raise ConfigError(path, line, str(exc)) from None
    out_dir = output.get("dir")
    return JobSpec(
        archive_root=str((base / archive["root"]).resolve()),
        detectors=tuple(detectors),
        pattern=archive.get("pattern"),
        gap_tolerance=archive.get("gap_tolerance"),
        channels=archive.get("channels"),
        n_workers=runtime.get("workers", AUTO),
        spectrogram=spectrogram,
        pad=runtime.get("pad", "auto"),
        max_block=runtime.get("max_block"),
        output_dir=str((base / out_dir).resolve()) if out_dir else None,
    )


def _detector_request(path, base, block: _Block, registry, seen) -> DetectorRequest:
    if "id" not in block.values:
        raise ConfigError(path, block.line, "[detector] block needs an 'id'")
    line = block.lines["id"]
    try:
        algorithm_id = int(block.values["id"])
    except ValueError:
        raise ConfigError(path, line, "detector id must be an integer") from None
    if algorithm_id not in registry:
        raise ConfigError(path, line, f"no detector registered with id {algorithm_id}")
    if any(r.algorithm_id == algorithm_id for r in seen):
        raise ConfigError(path, line, f"detector {algorithm_id} listed twice")
    spec = registry.spec(algorithm_id)
    params = {}
    for key, value in block.values.items():
        if key == "id":
            continue
        if key not in spec.params:
            raise ConfigError(path, block.lines[key],
                              f"unknown parameter {key!r} for detector {algorithm_id}")
        params[key] = str((base / value).resolve()) if key in spec.path_params else _number(value)
    return DetectorRequest(algorithm_id, params)
