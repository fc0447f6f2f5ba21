"""Dataset loading, splitting, augmentation, and window extraction.

Consumes the engine's dataset format: a JSON manifest listing per-recording
CSV files (header ``t_ms,x,y``, 100 Hz, int16 counts). Training windows are
augmented per the three-transform scheme: +-4 degree rotations, downsampling
dilation 6/7/8, and 0.25 s translation at framing time. Validation keeps
theta=0, factor 7, 1 s stride.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE_HZ = 100
WINDOW_SAMPLES = 215  # floor((15*100 + 7 - 1) / 7)
BASE_FACTOR = 7

CLASS_NAMES = ("B", "FB", "S", "R", "G")
CLASS_CODES = {name: i for i, name in enumerate(CLASS_NAMES)}

ROTATIONS_DEG = (-4.0, 0.0, 4.0)
DILATION_FACTORS = (6, 7, 8)
TRAIN_STRIDE_S = 0.25
VAL_STRIDE_S = 1.0


class DatasetError(ValueError):
    pass


@dataclass
class LabelledRecording:
    path: str
    label: int
    xy: np.ndarray  # int16 (N, 2)


def load_recording(path: str | Path, label: int) -> LabelledRecording:
    xs, ys = [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["t_ms", "x", "y"]:
            raise DatasetError(f"{path}: expected header t_ms,x,y, got {header}")
        for row in reader:
            xs.append(int(row[1]))
            ys.append(int(row[2]))
    return LabelledRecording(str(path), label, np.stack([xs, ys], axis=1).astype(np.int16))


def load_dataset(manifest_path: str | Path) -> list[LabelledRecording]:
    manifest_path = Path(manifest_path)
    payload = json.loads(manifest_path.read_text())
    recordings = []
    for entry in payload["recordings"]:
        name = entry["class"]
        if name not in CLASS_CODES:
            raise DatasetError(f"unknown class {name!r} in manifest")
        path = manifest_path.parent / entry["path"]
        recordings.append(load_recording(path, CLASS_CODES[name]))
    if not recordings:
        raise DatasetError("manifest lists no recordings")
    return recordings


def split_recordings(recordings, train_fraction: float = 0.8, seed: int = 0):
    """Recording-level split so no recording leaks windows across the split."""
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError(f"train fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(recordings))
    n_train = int(round(len(recordings) * train_fraction))
    train = [recordings[i] for i in sorted(order[:n_train].tolist())]
    val = [recordings[i] for i in sorted(order[n_train:].tolist())]
    missing = set(range(len(CLASS_NAMES))) - {r.label for r in train}
    if missing:
        raise DatasetError(
            f"classes {sorted(CLASS_NAMES[i] for i in missing)} missing from the train split"
        )
    return train, val


def rotate_xy(xy: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate int16 count pairs, rounding half away from zero, saturating."""
    if theta_deg == 0.0:
        return xy
    th = math.radians(theta_deg)
    c, s = math.cos(th), math.sin(th)
    x = xy[:, 0].astype(np.float64)
    y = xy[:, 1].astype(np.float64)
    out = np.stack([x * c - y * s, x * s + y * c], axis=1)
    out = np.sign(out) * np.floor(np.abs(out) + 0.5)
    return np.clip(out, -32768, 32767).astype(np.int16)


def extract_windows(xy: np.ndarray, stride_s: float, factor: int = BASE_FACTOR) -> np.ndarray:
    """All (2, 215) frames of one recording: start at round(i*stride*100), step factor."""
    n = xy.shape[0]
    span = (WINDOW_SAMPLES - 1) * factor
    stride_samples = stride_s * SAMPLE_RATE_HZ
    starts = []
    i = 0
    while True:
        start = int(round(i * stride_samples))
        if start + span > n - 1:
            break
        starts.append(start)
        i += 1
    if not starts:
        raise DatasetError(f"no window of span {span + 1} fits in {n} samples")
    idx = np.asarray(starts)[:, None] + factor * np.arange(WINDOW_SAMPLES)[None, :]
    return xy[idx].transpose(0, 2, 1)  # (frames, 2, 215)


def build_train_windows(recordings) -> tuple[np.ndarray, np.ndarray]:
    """Augmented training windows: rotations x dilations x 0.25 s translation."""
    chunks, labels = [], []
    for rec in recordings:
        for theta in ROTATIONS_DEG:
            rotated = rotate_xy(rec.xy, theta)
            for factor in DILATION_FACTORS:
                w = extract_windows(rotated, TRAIN_STRIDE_S, factor)
                chunks.append(w)
                labels.append(np.full(w.shape[0], rec.label, dtype=np.int64))
    return np.concatenate(chunks), np.concatenate(labels)


def build_val_windows(recordings) -> tuple[np.ndarray, np.ndarray]:
    """Validation windows: unaugmented, factor 7, 1 s stride."""
    chunks, labels = [], []
    for rec in recordings:
        w = extract_windows(rec.xy, VAL_STRIDE_S, BASE_FACTOR)
        chunks.append(w)
        labels.append(np.full(w.shape[0], rec.label, dtype=np.int64))
    return np.concatenate(chunks), np.concatenate(labels)


def write_manifest(path: str | Path, recordings, sample_rate_hz: int = SAMPLE_RATE_HZ) -> None:
    """Write a manifest referencing existing recording CSVs (paths relativized)."""
    path = Path(path)
    entries = []
    for rec in recordings:
        import os

        entries.append(
            {
                "path": os.path.relpath(rec.path, path.parent),
                "class": CLASS_NAMES[rec.label],
                "sample_rate_hz": sample_rate_hz,
                "seed": 0,
                "provenance": {"role": "validation"},
            }
        )
    path.write_text(
        json.dumps({"sample_rate_hz": sample_rate_hz, "recordings": entries}, indent=2, sort_keys=True)
        + "\n"
    )
