"""Serialization at full double precision.

JSON floats and columnar text both use 17 significant digits, which
round-trips every IEEE double exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .spectroscopy import Signal, Spectrum


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _float_token(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = fmt(x)
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def to_plain(obj):
    """Convert numpy containers and scalars into JSON-ready Python objects."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _encode(obj, indent, level, sort_keys):
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = ", " if indent is None else ","
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _float_token(obj)
    if isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        keys = sorted(obj) if sort_keys else list(obj)
        items = [f"{json.dumps(k)}: {_encode(obj[k], indent, level + 1, sort_keys)}" for k in keys]
        return "{" + pad + (sep + pad).join(items) + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, None, 0, sort_keys) for v in obj) + "]"
        items = [_encode(v, indent, level + 1, sort_keys) for v in obj]
        return "[" + pad + (sep + pad).join(items) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int | None = 1, sort_keys: bool = False) -> str:
    return _encode(to_plain(obj), indent, 0, sort_keys)


def write_json(path, obj, sort_keys: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj, sort_keys=sort_keys) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def _write_columns(path, header: dict, columns) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# " + dumps(header, indent=None)]
    for row in zip(*columns):
        lines.append(" ".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _read_columns(path) -> tuple[dict, np.ndarray]:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# "):
        raise ValueError(f"{path}: missing JSON header line")
    header = json.loads(text[0][2:])
    rows = [[float(v) for v in line.split()] for line in text[1:] if line.strip()]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header["columns"]))


def write_signal(path, signal: Signal) -> Path:
    header = {"kind": "signal", "columns": ["time_ns", "real", "imag"], "meta": signal.meta}
    return _write_columns(path, header, (signal.times, signal.values.real, signal.values.imag))


def read_signal(path) -> Signal:
    header, data = _read_columns(path)
    if header.get("kind") != "signal":
        raise ValueError(f"{path}: not a signal file")
    return Signal(data[:, 0].copy(), data[:, 1] + 1j * data[:, 2], header.get("meta", {}))


def write_spectrum(path, spectrum: Spectrum) -> Path:
    header = {
        "kind": "spectrum",
        "columns": ["frequency_mhz", "magnitude"],
        "resolution": spectrum.resolution,
        "pad_factor": spectrum.pad_factor,
        "window": spectrum.window,
        "meta": spectrum.meta,
    }
    return _write_columns(path, header, (spectrum.frequencies, spectrum.magnitudes))


def read_spectrum(path) -> Spectrum:
    header, data = _read_columns(path)
    if header.get("kind") != "spectrum":
        raise ValueError(f"{path}: not a spectrum file")
    return Spectrum(data[:, 0].copy(), data[:, 1].copy(), header["resolution"],
                    header["pad_factor"], header["window"], header.get("meta", {}))


def write_histogram(path, edges, density, meta=None) -> Path:
    edges = np.asarray(edges, dtype=float)
    header = {"kind": "histogram", "columns": ["left", "right", "density"], "meta": meta or {}}
    return _write_columns(path, header, (edges[:-1], edges[1:], density))


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path
