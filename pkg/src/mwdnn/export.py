"""Artifact export: raw phase maps, PGM previews, history, metrics.

The raw format is the authoritative interchange for trained phase maps:

    offset  size  field
    0       4     magic "MWDN"
    4       1     format version (0x01)
    5       3     reserved, zero
    8       4     layer count, uint32 little-endian
    12      4     grid side,   uint32 little-endian
    16      -     layers * side * side float64 little-endian phases,
                  row-major, each layer in order, wrapped to [0, 2 pi)

PGM previews quantize each layer to 8 bits (floor(255 * phase / 2 pi))
and exist for quick eyeballing only; the raw file keeps full precision.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .optics import PhaseStack

__all__ = [
    "ExportError",
    "MAGIC",
    "FORMAT_VERSION",
    "save_phase_raw",
    "load_phase_raw",
    "save_phase_pgm",
    "read_pgm",
    "save_history_jsonl",
    "save_metrics_csv",
]

MAGIC = b"MWDN"
FORMAT_VERSION = 1


class ExportError(Exception):
    """Malformed phase-map or preview file."""


def save_phase_raw(path, phases: PhaseStack):
    """Write wrapped phases in the raw format described above."""
    wrapped = phases.wrapped()
    layers, side, _ = wrapped.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B3x", FORMAT_VERSION))
        fh.write(struct.pack("<II", layers, side))
        fh.write(wrapped.astype("<f8").tobytes(order="C"))


def load_phase_raw(path) -> PhaseStack:
    """Read a raw phase file back into a PhaseStack."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise ExportError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise ExportError(f"{path}: bad magic {blob[:4]!r}")
    version = blob[4]
    if version != FORMAT_VERSION:
        raise ExportError(f"{path}: unsupported format version {version}")
    if blob[5:8] != b"\x00\x00\x00":
        raise ExportError(f"{path}: reserved header bytes are not zero")
    layers, side = struct.unpack("<II", blob[8:16])
    expected = layers * side * side * 8
    payload = blob[16:]
    if len(payload) != expected:
        raise ExportError(
            f"{path}: header declares {layers} layers of {side}x{side} "
            f"({expected} bytes) but file holds {len(payload)}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(layers, side, side)
    return PhaseStack(values.copy())


def save_phase_pgm(directory, phases: PhaseStack, prefix: str = "phase_layer"):
    """One 8-bit P5 preview per layer; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    wrapped = phases.wrapped()
    two_pi = 2.0 * np.pi
    paths = []
    for l in range(wrapped.shape[0]):
        quantized = np.floor(255.0 * wrapped[l] / two_pi).astype(np.uint8)
        path = directory / f"{prefix}{l}.pgm"
        side = wrapped.shape[1]
        with open(path, "wb") as fh:
            fh.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
            fh.write(quantized.tobytes(order="C"))
        paths.append(path)
    return paths


def read_pgm(path) -> np.ndarray:
    """Minimal binary-P5 reader (for previews written by save_phase_pgm)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise ExportError(f"{path}: not a binary PGM")
    try:
        width, height = map(int, parts[1].split())
        maxval = int(parts[2])
    except ValueError:
        raise ExportError(f"{path}: bad PGM header") from None
    if maxval != 255:
        raise ExportError(f"{path}: expected maxval 255, got {maxval}")
    pixels = parts[3][:width * height]
    if len(pixels) != width * height:
        raise ExportError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def save_history_jsonl(path, history):
    """Epoch telemetry, one JSON object per line."""
    with open(path, "w") as fh:
        for entry in history:
            record = entry.as_dict() if hasattr(entry, "as_dict") else dict(entry)
            fh.write(json.dumps(record) + "\n")


def save_metrics_csv(directory, metrics):
    """Evaluation tables: summary, plus per-task confusion and energy.

    Returns the written paths. ``metrics`` is a training.EvalMetrics.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    summary = directory / "metrics_summary.csv"
    with open(summary, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "samples", "accuracy"])
        for i, acc in enumerate(metrics.accuracy):
            writer.writerow([i, metrics.samples[i], f"{acc:.6f}"])
    paths.append(summary)
    tasks = len(metrics.accuracy)
    cats = metrics.confusion.shape[1]
    header = ["true\\pred"] + [str(j) for j in range(cats)]
    for i in range(tasks):
        cpath = directory / f"confusion_task{i}.csv"
        with open(cpath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t in range(cats):
                writer.writerow([t] + [int(v) for v in metrics.confusion[i, t]])
        paths.append(cpath)
        epath = directory / f"energy_task{i}.csv"
        with open(epath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true\\category"] + [str(j) for j in range(cats)]
                            + ["samples"])
            for t in range(cats):
                row = [t] + [f"{v:.4f}" for v in metrics.energy_percent[i, t]]
                row.append(int(metrics.energy_rows[i, t]))
                writer.writerow(row)
        paths.append(epath)
    return paths
