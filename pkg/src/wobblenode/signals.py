"""Dataset model and synthetic wobble-board signal generation.

Recordings are 100 Hz two-axis accelerometer streams (int16 counts, axes
parallel to the floor). The synthetic generator stands in for the original
private dataset: each exercise class gets a characteristic waveform (see
generate_recording). Augmentation follows the three-transform scheme:
translation at framing time, plus per-recording rotation (-4/0/+4 degrees)
and time dilation (downsampling step 6/7/8) with window size held at 215.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .model import ExerciseClass
from .qnn import round_half_away

SAMPLE_RATE_HZ = 100
WINDOW_SECONDS = 15
BASE_FACTOR = 7
# floor((15*100 + 7 - 1) / 7) = 215 samples per network input window
WINDOW_SAMPLES = (WINDOW_SECONDS * SAMPLE_RATE_HZ + BASE_FACTOR - 1) // BASE_FACTOR

INT16_MIN = -32768
INT16_MAX = 32767


class SignalError(ValueError):
    pass


class Sample(NamedTuple):
    """One accelerometer reading: millisecond timestamp plus raw counts."""

    t_ms: int
    x: int
    y: int


@dataclass
class Recording:
    """100 Hz accelerometer stream with an optional class label."""

    t_ms: np.ndarray   # uint32 (N,), strictly increasing
    xy: np.ndarray     # int16 (N, 2)
    label: ExerciseClass | None = None
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        self.t_ms = np.asarray(self.t_ms, dtype=np.uint32)
        self.xy = np.asarray(self.xy, dtype=np.int16)
        if self.t_ms.ndim != 1 or self.xy.shape != (self.t_ms.shape[0], 2):
            raise SignalError(
                f"inconsistent sample arrays: t {self.t_ms.shape}, xy {self.xy.shape}"
            )
        if self.t_ms.shape[0] >= 2 and not np.all(np.diff(self.t_ms.astype(np.int64)) > 0):
            raise SignalError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.t_ms.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def samples(self):
        for t, (x, y) in zip(self.t_ms.tolist(), self.xy.tolist()):
            yield Sample(t, x, y)


@dataclass
class Window:
    """One network input: 215 sample pairs, rows (x, y), plus its provenance."""

    data: np.ndarray   # int16 (2, WINDOW_SAMPLES)
    offset_s: float
    factor: int = BASE_FACTOR

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int16)
        if self.data.shape[0] != 2:
            raise SignalError(f"window rows must be (x, y), got shape {self.data.shape}")


@dataclass(frozen=True)
class AugmentConfig:
    translation_stride_s: float = 0.25
    rotations_deg: tuple[float, ...] = (-4.0, 0.0, 4.0)
    dilation_factors: tuple[int, ...] = (6, 7, 8)

    def __post_init__(self):
        if self.translation_stride_s <= 0:
            raise SignalError("translation stride must be positive")
        if any(f < 1 for f in self.dilation_factors):
            raise SignalError("dilation factors must be >= 1")


def _default_amplitudes() -> dict[ExerciseClass, float]:
    return {
        ExerciseClass.B: 0.0,
        ExerciseClass.FB: 900.0,
        ExerciseClass.S: 900.0,
        ExerciseClass.R: 900.0,
        ExerciseClass.G: 900.0,
    }


def _default_periods() -> dict[ExerciseClass, tuple[float, float]]:
    return {cls: (2.0, 5.0) for cls in ExerciseClass}


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic-signal knobs. Everything is deterministic under `seed`."""

    amplitudes: dict[ExerciseClass, float] = field(default_factory=_default_amplitudes)
    period_ranges: dict[ExerciseClass, tuple[float, float]] = field(default_factory=_default_periods)
    noise_sigma: float = 60.0
    burst_amplitude: float = 2500.0
    seed: int = 0

    def __post_init__(self):
        for cls in (ExerciseClass.FB, ExerciseClass.S, ExerciseClass.R):
            if self.amplitudes[cls] <= 0:
                raise SignalError(f"amplitude for moving class {cls.name} must be positive")


def _to_int16(arr: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(arr), INT16_MIN, INT16_MAX).astype(np.int16)


def generate_recording(
    cls: ExerciseClass, duration_s: float, cfg: GeneratorConfig
) -> Recording:
    """Generate one class-characteristic recording at 100 Hz.

    B: noise around zero tilt. FB: sinusoid on y. S: sinusoid on x.
    R: circular x/y sinusoid pair, reversing direction mid-recording.
    G: a mixture of mean-reverting random walks, stillness, and bursts that
    slam toward the board's range extremes.
    """
    if duration_s < WINDOW_SECONDS:
        raise SignalError(f"duration {duration_s} s is shorter than one {WINDOW_SECONDS} s window")
    n = int(round(duration_s * SAMPLE_RATE_HZ))
    rng = np.random.default_rng(cfg.seed)
    t = np.arange(n) / SAMPLE_RATE_HZ
    amp_base = cfg.amplitudes[cls]
    lo, hi = cfg.period_ranges[cls]
    period = rng.uniform(lo, hi)
    amp = amp_base * rng.uniform(0.8, 1.2) if amp_base > 0 else 0.0
    phase = rng.uniform(0.0, 2.0 * math.pi)

    if cls is ExerciseClass.B:
        x = np.zeros(n)
        y = np.zeros(n)
    elif cls is ExerciseClass.FB:
        x = np.zeros(n)
        y = amp * np.sin(2.0 * math.pi * t / period + phase)
    elif cls is ExerciseClass.S:
        x = amp * np.sin(2.0 * math.pi * t / period + phase)
        y = np.zeros(n)
    elif cls is ExerciseClass.R:
        omega = 2.0 * math.pi / period
        flip = n // 2  # n >= 1500, so flip > 0
        angle = np.empty(n)
        angle[:flip] = phase + omega * t[:flip]
        # reverse rotation direction at mid-recording, phase-continuous
        angle[flip:] = angle[flip - 1] - omega * (t[flip:] - t[flip - 1])
        x = amp * np.sin(angle)
        y = amp * np.cos(angle)
    else:  # ExerciseClass.G
        x, y = _generate_other(n, rng, cfg)

    if cls is not ExerciseClass.G:
        x = x + rng.normal(0.0, cfg.noise_sigma, n) if cfg.noise_sigma > 0 else x
        y = y + rng.normal(0.0, cfg.noise_sigma, n) if cfg.noise_sigma > 0 else y

    xy = np.stack([_to_int16(x), _to_int16(y)], axis=1)
    return Recording(np.arange(n, dtype=np.uint32) * 10, xy, label=cls)


def _generate_other(n: int, rng: np.random.Generator, cfg: GeneratorConfig):
    """Class G: segments of walk / stillness / burst / sloppy-tilt behavior.

    The sloppy tilt is a sinusoid along a random floor direction: near-axis
    directions overlap the genuine exercises, which keeps this class the hard
    one to separate.
    """
    x = np.zeros(n)
    y = np.zeros(n)
    kinds = ["walk", "still", "burst", "tilt"]
    pos = 0
    seg_index = 0
    state = np.zeros(2)
    while pos < n:
        # long segments matter: a tilt spanning a whole 15 s window is the
        # genuinely ambiguous case
        seg_len = int(rng.uniform(2.0, 20.0) * SAMPLE_RATE_HZ)
        end = min(pos + seg_len, n)
        # guarantee the mixture: the first segments cover every kind
        kind = kinds[seg_index % 4] if seg_index < 4 else kinds[int(rng.integers(0, 4))]
        m = end - pos
        if kind == "walk":
            # mean-reverting walk, usually smooth and large; sometimes
            # near-white and small, where it shades into basic-stance noise
            if rng.random() < 0.25:
                rho = rng.uniform(0.2, 0.6)
                target_std = rng.uniform(40.0, 120.0)
            else:
                rho = rng.uniform(0.9, 0.999)
                target_std = rng.uniform(150.0, 600.0)
            step_std = target_std * math.sqrt(max(1.0 - rho * rho, 1e-6))
            steps = rng.normal(0.0, step_std, (m, 2))
            seg = np.empty((m, 2))
            s = state.copy()
            for i in range(m):
                s = rho * s + steps[i]
                seg[i] = s
            state = s
            x[pos:end] = seg[:, 0] + rng.normal(0.0, cfg.noise_sigma, m)
            y[pos:end] = seg[:, 1] + rng.normal(0.0, cfg.noise_sigma, m)
        elif kind == "still":
            cx, cy = rng.uniform(-200.0, 200.0, 2)
            x[pos:end] = cx + rng.normal(0.0, 1.0, m)
            y[pos:end] = cy + rng.normal(0.0, 1.0, m)
            state = np.array([cx, cy])
        elif kind == "burst":
            flips = np.cumsum(rng.uniform(0.3, 1.0, 16))
            sign = np.ones(m)
            t_local = np.arange(m) / SAMPLE_RATE_HZ
            for f in flips:
                sign[t_local >= f] *= -1
            axis = int(rng.integers(0, 2))
            seg = np.zeros((m, 2))
            seg[:, axis] = sign * cfg.burst_amplitude
            seg += rng.normal(0.0, cfg.noise_sigma, (m, 2))
            x[pos:end] = seg[:, 0]
            y[pos:end] = seg[:, 1]
            state = seg[-1]
        else:  # sloppy tilt along a random floor direction
            period = rng.uniform(1.5, 8.0)
            a = cfg.amplitudes[ExerciseClass.G] * rng.uniform(0.4, 1.3)
            if rng.random() < 0.5:
                # near an axis: overlaps the genuine tilt exercises
                direction = float(rng.integers(0, 4)) * (math.pi / 2) + rng.normal(0.0, math.radians(8.0))
            else:
                direction = rng.uniform(0.0, 2.0 * math.pi)
            t_local = np.arange(m) / SAMPLE_RATE_HZ
            wave = a * np.sin(2.0 * math.pi * t_local / period + rng.uniform(0, 2 * math.pi))
            x[pos:end] = wave * math.cos(direction) + rng.normal(0.0, cfg.noise_sigma, m)
            y[pos:end] = wave * math.sin(direction) + rng.normal(0.0, cfg.noise_sigma, m)
            state = np.array([x[end - 1], y[end - 1]])
        pos = end
        seg_index += 1
    return x, y


def downsample(r: Recording, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep every factor-th sample (indices 0, f, 2f, ...)."""
    if factor < 1:
        raise SignalError(f"downsample factor must be >= 1, got {factor}")
    return r.t_ms[::factor].copy(), r.xy[::factor].copy()


def rotate(r: Recording, theta_deg: float) -> Recording:
    """Rotate the (x, y) tilt vector by theta degrees, saturating to int16."""
    th = math.radians(theta_deg)
    c, s = math.cos(th), math.sin(th)
    x = r.xy[:, 0].astype(np.float64)
    y = r.xy[:, 1].astype(np.float64)
    xr = x * c - y * s
    yr = x * s + y * c
    xy = np.stack([_to_int16(xr), _to_int16(yr)], axis=1)
    return Recording(r.t_ms.copy(), xy, label=r.label, sample_rate_hz=r.sample_rate_hz)


def frame_windows(
    r: Recording,
    stride_s: float,
    window_s: float = WINDOW_SECONDS,
    factor: int = BASE_FACTOR,
) -> list[Window]:
    """Slide a window over the 100 Hz stream, downsampling each frame.

    Frame i starts at sample round(i * stride_s * 100) and takes
    WINDOW_SAMPLES samples with step `factor`. At factor 7 the count is
    floor((duration - window_s) / stride_s) + 1: 181 frames for 60 s at
    0.25 s stride, 46 at 1 s.
    """
    if stride_s <= 0:
        raise SignalError("stride must be positive")
    n = len(r)
    if n < int(window_s * r.sample_rate_hz):
        raise SignalError(
            f"recording of {r.duration_s:.2f} s is shorter than the {window_s} s window"
        )
    span = (WINDOW_SAMPLES - 1) * factor
    windows = []
    i = 0
    while True:
        start = int(round(i * stride_s * r.sample_rate_hz))
        if start + span > n - 1:
            break
        idx = start + factor * np.arange(WINDOW_SAMPLES)
        windows.append(Window(r.xy[idx].T.copy(), start / r.sample_rate_hz, factor))
        i += 1
    if not windows:
        raise SignalError("window does not fit in the recording at this dilation factor")
    return windows


@dataclass
class Variant:
    """An augmented recording plus the provenance needed to reproduce it."""

    recording: Recording
    factor: int
    provenance: dict


def augment_dataset(recordings, cfg: AugmentConfig | None = None) -> list[Variant]:
    """Rotation x dilation product per recording; translation happens at framing.

    len(output) == len(input) * len(rotations) * len(factors).
    """
    cfg = cfg or AugmentConfig()
    variants = []
    for idx, rec in enumerate(recordings):
        for theta in cfg.rotations_deg:
            rotated = rotate(rec, theta) if theta != 0 else rec
            for f in cfg.dilation_factors:
                variants.append(
                    Variant(
                        rotated,
                        f,
                        {"source": idx, "theta_deg": theta, "factor": f},
                    )
                )
    return variants


def split_dataset(recordings, train_fraction: float = 0.8, seed: int = 0):
    """Deterministic recording-level split; windows never straddle the split."""
    if not recordings:
        raise SignalError("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise SignalError(f"train fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(recordings))
    n_train = int(round(len(recordings) * train_fraction))
    train_idx = sorted(order[:n_train].tolist())
    val_idx = sorted(order[n_train:].tolist())
    return [recordings[i] for i in train_idx], [recordings[i] for i in val_idx]


def write_recording_csv(path: Path, r: Recording) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_ms", "x", "y"])
        for t, (x, y) in zip(r.t_ms.tolist(), r.xy.tolist()):
            w.writerow([t, x, y])


def load_recording_csv(path: Path, label: ExerciseClass | None = None) -> Recording:
    t, xs, ys = [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["t_ms", "x", "y"]:
            raise SignalError(f"{path}: expected header t_ms,x,y, got {header}")
        for row in reader:
            t.append(int(row[0]))
            xs.append(int(row[1]))
            ys.append(int(row[2]))
    return Recording(np.array(t), np.stack([xs, ys], axis=1), label=label)


def write_manifest(path: Path, entries: list[dict]) -> None:
    path = Path(path)
    payload = {"sample_rate_hz": SAMPLE_RATE_HZ, "recordings": entries}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path: Path) -> list[dict]:
    """Manifest entries with paths resolved relative to the manifest file."""
    path = Path(path)
    payload = json.loads(path.read_text())
    entries = payload["recordings"]
    for e in entries:
        e["path"] = str((path.parent / e["path"]).resolve())
    return entries


def save_dataset(out_dir: Path, recordings: list[Recording], seeds: list[int]) -> Path:
    """Write recordings as CSVs plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    counters: dict[str, int] = {}
    for rec, seed in zip(recordings, seeds):
        name = rec.label.name if rec.label is not None else "U"
        k = counters.get(name, 0)
        counters[name] = k + 1
        fname = f"rec_{name}_{k:02d}.csv"
        write_recording_csv(out_dir / fname, rec)
        entries.append(
            {
                "path": fname,
                "class": name,
                "sample_rate_hz": rec.sample_rate_hz,
                "seed": seed,
                "provenance": {"generator": "synthetic"},
            }
        )
    manifest = out_dir / "manifest.json"
    write_manifest(manifest, entries)
    return manifest


# convenience used by the CLI and tests
def default_generator(seed: int = 0) -> GeneratorConfig:
    return GeneratorConfig(seed=seed)


def with_seed(cfg: GeneratorConfig, seed: int) -> GeneratorConfig:
    return replace(cfg, seed=seed)
