"""Integer-only neural network kernels for int8 inference.

Convolution and fully-connected layers accumulate int8 products exactly in
int64, then requantize back to int8 through a fixed-point multiplier: the
real rescale factor is encoded as ``multiplier / 2**(31 + shift)`` with a
normalized Q0.31 multiplier, so arbitrary (non power-of-two) output scales
are representable. Rounding is half-away-from-zero everywhere; all outputs
saturate to [-128, 127]. No layer carries a bias term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INT8_MIN = -128
INT8_MAX = 127
Q31 = 1 << 31


class KernelError(ValueError):
    """Invalid kernel input: bad shape, parameter, or value domain."""


def round_half_away(x):
    """Round half away from zero; works on scalars and ndarrays."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    """Affine quantization parameters: real = scale * (q - zero_point)."""

    scale: float
    zero_point: int

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise KernelError(f"scale must be finite and positive, got {self.scale}")
        if not INT8_MIN <= int(self.zero_point) <= INT8_MAX:
            raise KernelError(f"zero_point {self.zero_point} outside int8 range")


@dataclass(frozen=True)
class QuantizedTensor:
    """int8 tensor with shape (channels, length) plus its quantization params."""

    data: np.ndarray
    qparams: QuantParams

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != np.int8:
            raise KernelError(f"tensor data must be int8, got {data.dtype}")
        if data.ndim != 2:
            raise KernelError(f"tensor must be 2-D (channels, length), got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class RequantSpec:
    """Fixed-point requantization: q = round(acc * multiplier / 2**(31+shift)) + zp.

    The multiplier is normalized so its leading bit of precision is kept:
    multiplier in [2**30, 2**31), or 0 for a degenerate (all-zero) layer.
    """

    multiplier: int
    shift: int
    output_zero_point: int

    def __post_init__(self):
        if not 0 <= self.multiplier < Q31:
            raise KernelError(f"multiplier {self.multiplier} outside [0, 2^31)")
        if self.multiplier != 0 and self.multiplier < (1 << 30):
            raise KernelError(f"multiplier {self.multiplier} is not normalized (< 2^30)")
        if not 0 <= self.shift <= 31:
            raise KernelError(f"shift {self.shift} outside [0, 31]")
        if not INT8_MIN <= self.output_zero_point <= INT8_MAX:
            raise KernelError(f"output_zero_point {self.output_zero_point} outside int8 range")


@dataclass(frozen=True)
class ConvWeights:
    """1-D convolution weights, int8, shape (out_channels, in_channels, kernel_size).

    There is no bias field: the format forces bias to zero.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.dtype != np.int8:
            raise KernelError(f"weights must be int8, got {w.dtype}")
        if w.ndim != 3:
            raise KernelError(f"weights must be 3-D (out, in, k), got shape {w.shape}")
        object.__setattr__(self, "weights", w)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]


def quantize(x, qp: QuantParams) -> QuantizedTensor:
    """Quantize real values to int8: clamp(round(x/scale) + zero_point)."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise KernelError("cannot quantize non-finite values")
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise KernelError(f"expected 1-D or 2-D input, got shape {arr.shape}")
    q = round_half_away(arr / qp.scale) + qp.zero_point
    q = np.clip(q, INT8_MIN, INT8_MAX).astype(np.int8)
    return QuantizedTensor(q, qp)


def dequantize(t: QuantizedTensor) -> np.ndarray:
    """Inverse affine map back to reals: scale * (q - zero_point)."""
    return t.qparams.scale * (t.data.astype(np.float64) - t.qparams.zero_point)


def _requant_array(acc: np.ndarray, spec: RequantSpec) -> np.ndarray:
    """Requantize int64 accumulators to int8. Exact: products stay below 2^63."""
    acc = acc.astype(np.int64)
    prod = acc * np.int64(spec.multiplier)
    n = 31 + spec.shift
    half = np.int64(1) << np.int64(n - 1)
    rounded = np.sign(prod) * ((np.abs(prod) + half) >> np.int64(n))
    out = rounded + spec.output_zero_point
    return np.clip(out, INT8_MIN, INT8_MAX).astype(np.int8)


def requantize(acc: int, spec: RequantSpec) -> int:
    """Requantize a single int32 accumulator to int8."""
    acc = int(acc)
    if not -(1 << 31) <= acc < (1 << 31):
        raise KernelError(f"accumulator {acc} outside int32 range")
    return int(_requant_array(np.array([acc], dtype=np.int64), spec)[0])


def conv1d(
    inp: QuantizedTensor,
    w: ConvWeights,
    spec: RequantSpec,
    relu: bool = False,
    out_scale: float = 1.0,
) -> QuantizedTensor:
    """Valid (no padding) stride-1 1-D convolution with requantized int8 output.

    acc[o, j] = sum_{c,k} w[o,c,k] * (x[c, j+k] - in_zero_point), then
    requantize; with relu, output is clamped below at the output zero point.
    """
    if inp.channels != w.in_channels:
        raise KernelError(
            f"input has {inp.channels} channels, weights expect {w.in_channels}"
        )
    if inp.length < w.kernel_size:
        raise KernelError(
            f"input length {inp.length} shorter than kernel {w.kernel_size}"
        )
    x = inp.data.astype(np.int64) - inp.qparams.zero_point
    k = w.kernel_size
    out_len = inp.length - k + 1
    # im2col: rows are (channel, tap) pairs, columns are output positions
    cols = np.stack([x[:, i : i + out_len] for i in range(k)], axis=1)
    cols = cols.reshape(inp.channels * k, out_len)
    wmat = w.weights.astype(np.int64).reshape(w.out_channels, inp.channels * k)
    acc = wmat @ cols
    out = _requant_array(acc, spec)
    if relu:
        out = np.maximum(out, np.int8(spec.output_zero_point))
    return QuantizedTensor(out, QuantParams(out_scale, spec.output_zero_point))


def maxpool1d(inp: QuantizedTensor, kernel: int, stride: int) -> QuantizedTensor:
    """Element-wise max over non-overlapping windows; trailing remainder dropped."""
    if kernel < 1 or stride < 1:
        raise KernelError(f"kernel and stride must be >= 1, got {kernel}, {stride}")
    if kernel > inp.length:
        raise KernelError(f"pool kernel {kernel} exceeds input length {inp.length}")
    out_len = (inp.length - kernel) // stride + 1
    taps = [inp.data[:, i : i + (out_len - 1) * stride + 1 : stride] for i in range(kernel)]
    out = np.max(np.stack(taps, axis=0), axis=0)
    return QuantizedTensor(out.astype(np.int8), inp.qparams)


def flatten(inp: QuantizedTensor) -> QuantizedTensor:
    """Channel-major flattening: out[c * length + j] = in[c, j]."""
    return QuantizedTensor(inp.data.reshape(1, -1), inp.qparams)


def fully_connected(
    inp: QuantizedTensor,
    weights: np.ndarray,
    spec: RequantSpec,
    relu: bool = False,
    out_scale: float = 1.0,
) -> QuantizedTensor:
    """Fully-connected layer on a flattened input; no bias term.

    acc[o] = sum_i w[o,i] * (x[i] - in_zero_point), then requantize.
    """
    w = np.asarray(weights)
    if w.dtype != np.int8 or w.ndim != 2:
        raise KernelError(f"fc weights must be 2-D int8, got {w.dtype} shape {w.shape}")
    x = inp.data.reshape(-1)
    if x.shape[0] != w.shape[1]:
        raise KernelError(
            f"fc expects input of length {w.shape[1]}, got {x.shape[0]}"
        )
    acc = w.astype(np.int64) @ (x.astype(np.int64) - inp.qparams.zero_point)
    out = _requant_array(acc, spec)
    if relu:
        out = np.maximum(out, np.int8(spec.output_zero_point))
    return QuantizedTensor(out.reshape(1, -1), QuantParams(out_scale, spec.output_zero_point))
