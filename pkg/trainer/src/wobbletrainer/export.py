"""Serialization of quantized models and golden vectors for the engine.

Weight-file layout (little-endian, CRC32 trailer):

    "WBNN" | version u16 | layer_count u16
    input: channels u16, length u16, scale f32, zero_point i8, pad x3
    per layer: type u8 (1 conv, 2 pool, 3 fc, 4 flatten), relu u8
      conv: in u16, out u16, k u16, zp i8, pad i8, multiplier i32, shift i8,
            pad x3, out_scale f32, weights int8[out][in][k]
      pool: kernel u16, stride u16
      fc:   in u32, out u32, zp i8, pad i8, multiplier i32, shift i8,
            pad x3, out_scale f32, weights int8[out][in]
    crc32 u32 over everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from base64 import b64encode
from pathlib import Path

import numpy as np

from . import emulate
from .quantize import QConv, QFc, QFlatten, QModel, QPool

MAGIC = b"WBNN"
VERSION = 1
INPUT_CHANNELS = 2
INPUT_LENGTH = 215


class ExportError(ValueError):
    pass


def _requant_block(zp: int, multiplier: int, shift: int, out_scale: float) -> bytes:
    return struct.pack("<bbib3xf", zp, 0, multiplier, shift, out_scale)


def serialize(model: QModel) -> bytes:
    expected_lengths = [INPUT_LENGTH, 207, 103, 95, 47, 940, 100, 5]
    lengths = _length_chain(model)
    if lengths != expected_lengths:
        raise ExportError(f"layer chain {lengths} does not match the engine architecture")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, len(model.layers))
    out += struct.pack("<HHfb3x", INPUT_CHANNELS, INPUT_LENGTH, model.input_scale, model.input_zero_point)
    for layer in model.layers:
        if isinstance(layer, QConv):
            o, i, k = layer.weights.shape
            out += struct.pack("<BB", 1, int(layer.relu))
            out += struct.pack("<HHH", i, o, k)
            out += _requant_block(layer.out_zero_point, layer.multiplier, layer.shift, layer.out_scale)
            out += layer.weights.astype(np.int8).tobytes()
        elif isinstance(layer, QPool):
            out += struct.pack("<BB", 2, 0)
            out += struct.pack("<HH", layer.kernel, layer.stride)
        elif isinstance(layer, QFlatten):
            out += struct.pack("<BB", 4, 0)
        elif isinstance(layer, QFc):
            o, i = layer.weights.shape
            out += struct.pack("<BB", 3, int(layer.relu))
            out += struct.pack("<II", i, o)
            out += _requant_block(layer.out_zero_point, layer.multiplier, layer.shift, layer.out_scale)
            out += layer.weights.astype(np.int8).tobytes()
        else:
            raise ExportError(f"cannot serialize layer {layer!r}")
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def _length_chain(model: QModel) -> list[int]:
    c, n = INPUT_CHANNELS, INPUT_LENGTH
    chain = [n]
    for layer in model.layers:
        if isinstance(layer, QConv):
            o, i, k = layer.weights.shape
            if i != c:
                raise ExportError(f"conv expects {i} channels, chain has {c}")
            c, n = o, n - k + 1
        elif isinstance(layer, QPool):
            n = (n - layer.kernel) // layer.stride + 1
        elif isinstance(layer, QFlatten):
            c, n = 1, c * n
        elif isinstance(layer, QFc):
            o, i = layer.weights.shape
            if i != c * n:
                raise ExportError(f"fc expects {i} inputs, chain has {c * n}")
            c, n = 1, o
        chain.append(n)
    return chain


def write_weights(model: QModel, path: str | Path) -> str:
    """Serialize to disk; returns the file's sha256 hex digest."""
    data = serialize(model)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def export_golden(
    model: QModel,
    windows_q: np.ndarray,
    labels: np.ndarray,
    weight_sha256: str,
    path: str | Path,
    float_argmax: np.ndarray | None = None,
) -> dict:
    """Golden vectors: int8 inputs with emulator-computed int8 logits.

    Requires at least 100 windows covering all five classes. If float_argmax
    is given, an emulation/float argmax divergence above 5% is recorded as a
    warning in the file.
    """
    windows_q = np.asarray(windows_q, dtype=np.int8)
    if len(windows_q) < 100:
        raise ExportError(f"golden set needs >= 100 windows, got {len(windows_q)}")
    if set(np.unique(labels).tolist()) != {0, 1, 2, 3, 4}:
        raise ExportError("golden set must cover all five classes")
    entries = []
    divergence = 0
    for i, w in enumerate(windows_q):
        logits = emulate.infer(model, w)
        cls = int(np.argmax(logits))
        if float_argmax is not None and cls != int(float_argmax[i]):
            divergence += 1
        entries.append(
            {
                "input": b64encode(w.tobytes()).decode(),
                "logits": logits.tolist(),
                "class": cls,
                "label": int(labels[i]),
            }
        )
    payload = {
        "weight_sha256": weight_sha256,
        "input_shape": [INPUT_CHANNELS, INPUT_LENGTH],
        "windows": entries,
    }
    if float_argmax is not None:
        rate = divergence / len(windows_q)
        payload["float_argmax_divergence"] = rate
        if rate > 0.05:
            payload["warning"] = (
                f"emulated argmax diverges from float inference on {100 * rate:.1f}% of windows"
            )
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return payload
