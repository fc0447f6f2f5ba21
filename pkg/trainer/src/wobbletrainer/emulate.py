"""Integer-exact emulation of the inference engine's kernel contract.

Expected golden outputs come from here, not from float inference: the
arithmetic mirrors the engine spec (int64 accumulation, Q0.31 multiplier
requantization, half-away-from-zero rounding, relu as a clamp at the output
zero-point, channel-major flatten) without sharing any engine code.
"""

from __future__ import annotations

import numpy as np

from .quantize import QConv, QFc, QFlatten, QModel, QPool

INT8_MIN = -128
INT8_MAX = 127


def requantize(acc: np.ndarray, multiplier: int, shift: int, zero_point: int) -> np.ndarray:
    acc = acc.astype(np.int64)
    prod = acc * np.int64(multiplier)
    n = 31 + shift
    half = np.int64(1) << np.int64(n - 1)
    rounded = np.sign(prod) * ((np.abs(prod) + half) >> np.int64(n))
    return np.clip(rounded + zero_point, INT8_MIN, INT8_MAX).astype(np.int8)


def conv1d(x: np.ndarray, x_zp: int, layer: QConv) -> np.ndarray:
    """x: int8 (C, L); valid convolution, stride 1, no bias."""
    w = layer.weights.astype(np.int64)
    c_out, c_in, k = w.shape
    xs = x.astype(np.int64) - x_zp
    out_len = x.shape[1] - k + 1
    acc = np.zeros((c_out, out_len), dtype=np.int64)
    for tap in range(k):
        acc += np.tensordot(w[:, :, tap], xs[:, tap : tap + out_len], axes=(1, 0))
    out = requantize(acc, layer.multiplier, layer.shift, layer.out_zero_point)
    if layer.relu:
        out = np.maximum(out, np.int8(layer.out_zero_point))
    return out


def maxpool1d(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    out_len = (x.shape[1] - kernel) // stride + 1
    taps = [x[:, i : i + (out_len - 1) * stride + 1 : stride] for i in range(kernel)]
    return np.max(np.stack(taps), axis=0).astype(np.int8)


def fully_connected(x_flat: np.ndarray, x_zp: int, layer: QFc) -> np.ndarray:
    acc = layer.weights.astype(np.int64) @ (x_flat.astype(np.int64) - x_zp)
    out = requantize(acc, layer.multiplier, layer.shift, layer.out_zero_point)
    if layer.relu:
        out = np.maximum(out, np.int8(layer.out_zero_point))
    return out


def infer(model: QModel, window_q: np.ndarray) -> np.ndarray:
    """Run one int8 window (2, 215) through the chain; returns int8 logits."""
    x = np.asarray(window_q, dtype=np.int8)
    zp = model.input_zero_point
    for layer in model.layers:
        if isinstance(layer, QConv):
            x = conv1d(x, zp, layer)
            zp = layer.out_zero_point
        elif isinstance(layer, QPool):
            x = maxpool1d(x, layer.kernel, layer.stride)
        elif isinstance(layer, QFlatten):
            x = x.reshape(1, -1)
        elif isinstance(layer, QFc):
            x = fully_connected(x.reshape(-1), zp, layer)
            zp = layer.out_zero_point
        else:
            raise TypeError(f"unknown layer {layer!r}")
    return x.reshape(-1)


def classify(model: QModel, window_q: np.ndarray) -> int:
    return int(np.argmax(infer(model, window_q)))


def batch_accuracy(model: QModel, windows_q: np.ndarray, labels: np.ndarray) -> float:
    hits = sum(classify(model, w) == int(y) for w, y in zip(windows_q, labels))
    return hits / len(labels)
