"""Post-training static quantization with MinMax observers and zero biases.

Weights are quantized symmetrically per tensor (zero-point 0); activations
asymmetrically from observed min/max: scale = (max - min) / 255, zero-point
= round(-128 - min/scale) clamped to int8. Each requantization stage encodes
the real factor s_in * s_w / s_out as a normalized Q0.31 multiplier plus a
right shift, exactly as the integer engine expects.

Rounding is half away from zero everywhere so exported goldens match the
engine bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

INT8_MIN = -128
INT8_MAX = 127
# the float net trains on (q - zp) / INPUT_UNIT, so one quantum spans
# 1/INPUT_UNIT training units; any constant works, this keeps inputs O(1)
INPUT_UNIT = 128.0


class QuantizationError(ValueError):
    pass


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class Observer:
    """Running min/max of one tensor over a calibration pass."""

    name: str
    min_val: float = math.inf
    max_val: float = -math.inf

    def update(self, tensor) -> None:
        t = tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else np.asarray(tensor)
        self.min_val = min(self.min_val, float(t.min()))
        self.max_val = max(self.max_val, float(t.max()))

    def qparams(self) -> tuple[float, int]:
        if not math.isfinite(self.min_val) or self.min_val >= self.max_val:
            raise QuantizationError(
                f"degenerate activation range for {self.name}: "
                f"[{self.min_val}, {self.max_val}]"
            )
        lo, hi = min(self.min_val, 0.0), max(self.max_val, 0.0)
        scale = (hi - lo) / 255.0
        zp = int(round_half_away(INT8_MIN - lo / scale))
        return scale, int(np.clip(zp, INT8_MIN, INT8_MAX))


def quantize_weights_symmetric(w: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-tensor symmetric int8: scale = max|w| / 127."""
    peak = float(np.abs(w).max())
    if peak == 0.0:
        return np.zeros_like(w, dtype=np.int8), 1.0
    scale = peak / 127.0
    q = np.clip(round_half_away(w / scale), INT8_MIN, INT8_MAX).astype(np.int8)
    return q, scale


def encode_multiplier(m_real: float) -> tuple[int, int]:
    """Normalized Q0.31 encoding: m_real ~= multiplier / 2**(31 + shift)."""
    if not m_real > 0 or not math.isfinite(m_real):
        raise QuantizationError(f"requantization factor must be positive, got {m_real}")
    mant, exp = math.frexp(m_real)  # m_real = mant * 2**exp, mant in [0.5, 1)
    multiplier = int(mant * (1 << 31) + 0.5)
    if multiplier == 1 << 31:
        multiplier >>= 1
        exp += 1
    shift = -exp
    if shift < 0:
        # factor >= 1: saturate at the largest representable ratio (~1.0)
        return (1 << 31) - 1, 0
    if shift > 31:
        raise QuantizationError(f"requantization factor {m_real} too small to encode")
    return multiplier, shift


def quantize_tensor(x: np.ndarray, scale: float, zp: int) -> np.ndarray:
    q = round_half_away(np.asarray(x, dtype=np.float64) / scale) + zp
    return np.clip(q, INT8_MIN, INT8_MAX).astype(np.int8)


@dataclass
class QConv:
    weights: np.ndarray  # int8 (out, in, k)
    multiplier: int
    shift: int
    out_zero_point: int
    relu: bool
    out_scale: float


@dataclass
class QPool:
    kernel: int = 2
    stride: int = 2


@dataclass
class QFlatten:
    pass


@dataclass
class QFc:
    weights: np.ndarray  # int8 (out, in)
    multiplier: int
    shift: int
    out_zero_point: int
    relu: bool
    out_scale: float


@dataclass
class QModel:
    """The engine-ready network: input qparams plus the quantized layer chain."""

    input_scale: float  # sensor counts per quantum
    input_zero_point: int
    layers: list = field(default_factory=list)

    def quantize_input(self, xy_window: np.ndarray) -> np.ndarray:
        return quantize_tensor(xy_window, self.input_scale, self.input_zero_point)


def calibrate_observers(net, windows_q: np.ndarray, input_zp: int, batch: int = 256):
    """Run the float net over calibration windows, recording activation extrema.

    windows_q: int8 quantized windows (N, 2, 215); the net consumes
    (q - zp) / INPUT_UNIT floats, the same mapping used in training.
    """
    observers = {name: Observer(name) for name in ("conv1", "conv2", "fc1", "fc2")}
    net.eval()
    with torch.no_grad():
        for i in range(0, len(windows_q), batch):
            chunk = windows_q[i : i + batch].astype(np.float32)
            x = torch.from_numpy((chunk - input_zp) / INPUT_UNIT)
            for name, tensor in net.activations(x).items():
                observers[name].update(tensor)
    return observers


def quantize_model(net, calib_windows_q: np.ndarray, input_scale: float, input_zp: int) -> QModel:
    """Freeze the float net into the integer pipeline.

    calib_windows_q are int8 windows already quantized with the input qparams;
    input_scale stays in sensor counts per quantum and is carried through to
    the weight file unchanged.
    """
    if len(calib_windows_q) == 0:
        raise QuantizationError("calibration set is empty")
    observers = calibrate_observers(net, calib_windows_q, input_zp)
    qparams = {name: obs.qparams() for name, obs in observers.items()}

    # training-domain scale of the input: one quantum is 1/INPUT_UNIT units
    s_in = 1.0 / INPUT_UNIT
    model = QModel(input_scale, input_zp)

    w1, s_w1 = quantize_weights_symmetric(net.conv1.weight.detach().numpy())
    s1, zp1 = qparams["conv1"]
    m1, sh1 = encode_multiplier(s_in * s_w1 / s1)
    model.layers.append(QConv(w1, m1, sh1, zp1, True, s1))
    model.layers.append(QPool())

    w2, s_w2 = quantize_weights_symmetric(net.conv2.weight.detach().numpy())
    s2, zp2 = qparams["conv2"]
    m2, sh2 = encode_multiplier(s1 * s_w2 / s2)
    model.layers.append(QConv(w2, m2, sh2, zp2, True, s2))
    model.layers.append(QPool())
    model.layers.append(QFlatten())

    w3, s_w3 = quantize_weights_symmetric(net.fc1.weight.detach().numpy())
    s3, zp3 = qparams["fc1"]
    m3, sh3 = encode_multiplier(s2 * s_w3 / s3)
    model.layers.append(QFc(w3, m3, sh3, zp3, True, s3))

    w4, s_w4 = quantize_weights_symmetric(net.fc2.weight.detach().numpy())
    s4, zp4 = qparams["fc2"]
    m4, sh4 = encode_multiplier(s3 * s_w4 / s4)
    model.layers.append(QFc(w4, m4, sh4, zp4, False, s4))
    return model


def input_qparams_from_windows(windows: np.ndarray) -> tuple[float, int]:
    """MinMax observer over raw count windows; returns counts-per-quantum scale."""
    obs = Observer("input")
    obs.update(windows.astype(np.float64))
    return obs.qparams()
