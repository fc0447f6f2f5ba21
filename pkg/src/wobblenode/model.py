"""The concrete exercise-recognition CNN: weight file format and inference.

Layer stack (two conv blocks, two fully-connected layers):

    input (2, 215) -> Conv(2->20, k9, relu) -> Pool(2) -> Conv(20->20, k9, relu)
    -> Pool(2) -> Flatten -> FC(940->100, relu) -> FC(100->5)

Weight files carry int8 weights plus per-layer requantization parameters in a
little-endian binary layout (see serialize_weights), trailed by a CRC32.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .qnn import (
    ConvWeights,
    QuantParams,
    QuantizedTensor,
    RequantSpec,
    conv1d,
    flatten,
    fully_connected,
    maxpool1d,
    quantize,
)

MAGIC = b"WBNN"
VERSION = 1

LAYER_CONV = 1
LAYER_POOL = 2
LAYER_FC = 3
LAYER_FLATTEN = 4

# Length progression of the reference network, input through logits.
REFERENCE_LENGTHS = (215, 207, 103, 95, 47, 940, 100, 5)
INPUT_CHANNELS = 2
INPUT_LENGTH = 215
NUM_CLASSES = 5


class ExerciseClass(IntEnum):
    """The five recognized movement classes, in fixed code order."""

    B = 0   # basic stance balance
    FB = 1  # forward/backward tilt
    S = 2   # side tilt
    R = 3   # two leg tilts (circular)
    G = 4   # other / unmatched movement

    @classmethod
    def from_name(cls, name: str) -> "ExerciseClass":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown exercise class {name!r}") from None


class WeightFileError(ValueError):
    """Base class for weight-file problems."""


class BadMagicError(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ShapeMismatchError(WeightFileError):
    pass


@dataclass(frozen=True)
class ConvLayer:
    weights: np.ndarray  # int8 (out, in, k)
    requant: RequantSpec
    relu: bool
    out_scale: float


@dataclass(frozen=True)
class PoolLayer:
    kernel: int
    stride: int


@dataclass(frozen=True)
class FlattenLayer:
    pass


@dataclass(frozen=True)
class FcLayer:
    weights: np.ndarray  # int8 (out, in)
    requant: RequantSpec
    relu: bool
    out_scale: float


Layer = ConvLayer | PoolLayer | FlattenLayer | FcLayer


@dataclass(frozen=True)
class ModelSpec:
    """A validated layer chain with input quantization parameters."""

    input_channels: int
    input_length: int
    input_qparams: QuantParams
    layers: tuple[Layer, ...]

    def __post_init__(self):
        self.shape_chain()  # raises ShapeMismatchError on an inconsistent chain

    def shape_chain(self) -> list[tuple[int, int]]:
        """Walk the layer chain, returning (channels, length) after each stage."""
        c, n = self.input_channels, self.input_length
        chain = [(c, n)]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvLayer):
                out_c, in_c, k = layer.weights.shape
                if in_c != c:
                    raise ShapeMismatchError(
                        f"layer {i}: conv expects {in_c} channels, chain has {c}"
                    )
                if n < k:
                    raise ShapeMismatchError(
                        f"layer {i}: conv kernel {k} exceeds length {n}"
                    )
                c, n = out_c, n - k + 1
            elif isinstance(layer, PoolLayer):
                if layer.kernel > n:
                    raise ShapeMismatchError(
                        f"layer {i}: pool kernel {layer.kernel} exceeds length {n}"
                    )
                n = (n - layer.kernel) // layer.stride + 1
            elif isinstance(layer, FlattenLayer):
                c, n = 1, c * n
            elif isinstance(layer, FcLayer):
                out_n, in_n = layer.weights.shape
                if in_n != c * n:
                    raise ShapeMismatchError(
                        f"layer {i}: fc expects input {in_n}, chain has {c * n}"
                    )
                c, n = 1, out_n
            else:
                raise ShapeMismatchError(f"layer {i}: unknown layer type {layer!r}")
            chain.append((c, n))
        return chain

    def length_chain(self) -> tuple[int, ...]:
        """Length after each stage; flatten reports channels x length."""
        return tuple(n for _, n in self.shape_chain())

    def is_reference_architecture(self) -> bool:
        return (
            self.input_channels == INPUT_CHANNELS
            and self.length_chain() == REFERENCE_LENGTHS
            and self.shape_chain()[-1] == (1, NUM_CLASSES)
        )


def _requant_block(requant: RequantSpec, out_scale: float) -> bytes:
    return struct.pack(
        "<bbib3xf",
        requant.output_zero_point,
        0,
        requant.multiplier,
        requant.shift,
        out_scale,
    )


def serialize_weights(spec: ModelSpec) -> bytes:
    """Encode a ModelSpec into the binary weight-file layout."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, len(spec.layers))
    out += struct.pack(
        "<HHfb3x",
        spec.input_channels,
        spec.input_length,
        spec.input_qparams.scale,
        spec.input_qparams.zero_point,
    )
    for layer in spec.layers:
        if isinstance(layer, ConvLayer):
            out += struct.pack("<BB", LAYER_CONV, int(layer.relu))
            o, i, k = layer.weights.shape
            out += struct.pack("<HHH", i, o, k)
            out += _requant_block(layer.requant, layer.out_scale)
            out += layer.weights.tobytes()
        elif isinstance(layer, PoolLayer):
            out += struct.pack("<BB", LAYER_POOL, 0)
            out += struct.pack("<HH", layer.kernel, layer.stride)
        elif isinstance(layer, FcLayer):
            out += struct.pack("<BB", LAYER_FC, int(layer.relu))
            o, i = layer.weights.shape
            out += struct.pack("<II", i, o)
            out += _requant_block(layer.requant, layer.out_scale)
            out += layer.weights.tobytes()
        elif isinstance(layer, FlattenLayer):
            out += struct.pack("<BB", LAYER_FLATTEN, 0)
        else:
            raise WeightFileError(f"cannot serialize layer {layer!r}")
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"need {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_requant(r: _Reader) -> tuple[RequantSpec, float]:
    zp, _pad, multiplier, shift, out_scale = r.unpack("<bbib3xf")
    try:
        spec = RequantSpec(multiplier, shift, zp)
    except ValueError as exc:
        raise WeightFileError(str(exc)) from None
    return spec, out_scale


def load_weights(data: bytes) -> ModelSpec:
    """Decode and validate a weight file; the layer chain is shape-checked."""
    if len(data) < 4:
        raise TruncatedFileError(f"file of {len(data)} bytes is too short for a header")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 8:
        raise TruncatedFileError("missing version/layer-count header")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")

    r = _Reader(data[:-4])
    r.take(4)  # magic
    version, layer_count = r.unpack("<HH")
    if version != VERSION:
        raise WeightFileError(f"unsupported version {version}")
    channels, length, in_scale, in_zp = r.unpack("<HHfb3x")
    try:
        in_qp = QuantParams(in_scale, in_zp)
    except ValueError as exc:
        raise WeightFileError(str(exc)) from None

    layers: list[Layer] = []
    for _ in range(layer_count):
        ltype, relu = r.unpack("<BB")
        if ltype == LAYER_CONV:
            in_c, out_c, k = r.unpack("<HHH")
            requant, out_scale = _read_requant(r)
            raw = r.take(out_c * in_c * k)
            w = np.frombuffer(raw, dtype=np.int8).reshape(out_c, in_c, k)
            layers.append(ConvLayer(w, requant, bool(relu), out_scale))
        elif ltype == LAYER_POOL:
            kernel, stride = r.unpack("<HH")
            if kernel < 1 or stride < 1:
                raise WeightFileError(f"invalid pool kernel/stride {kernel}/{stride}")
            layers.append(PoolLayer(kernel, stride))
        elif ltype == LAYER_FC:
            in_n, out_n = r.unpack("<II")
            requant, out_scale = _read_requant(r)
            raw = r.take(out_n * in_n)
            w = np.frombuffer(raw, dtype=np.int8).reshape(out_n, in_n)
            layers.append(FcLayer(w, requant, bool(relu), out_scale))
        elif ltype == LAYER_FLATTEN:
            layers.append(FlattenLayer())
        else:
            raise WeightFileError(f"unknown layer type byte {ltype}")
    if r.pos != len(r.data):
        raise WeightFileError(f"{len(r.data) - r.pos} trailing bytes after last layer")

    return ModelSpec(channels, length, in_qp, tuple(layers))


def infer_window(m: ModelSpec, window: QuantizedTensor) -> tuple[ExerciseClass, np.ndarray]:
    """Run the layer chain on one window; argmax ties go to the lowest class code."""
    if window.data.shape != (m.input_channels, m.input_length):
        raise ShapeMismatchError(
            f"window shape {window.data.shape} does not match model input "
            f"({m.input_channels}, {m.input_length})"
        )
    if window.qparams.zero_point != m.input_qparams.zero_point or not np.isclose(
        window.qparams.scale, m.input_qparams.scale, rtol=1e-6
    ):
        raise ShapeMismatchError("window quantization parameters do not match the model input")
    t = window
    for layer in m.layers:
        if isinstance(layer, ConvLayer):
            t = conv1d(t, ConvWeights(layer.weights), layer.requant, layer.relu, layer.out_scale)
        elif isinstance(layer, PoolLayer):
            t = maxpool1d(t, layer.kernel, layer.stride)
        elif isinstance(layer, FlattenLayer):
            t = flatten(t)
        else:
            t = fully_connected(t, layer.weights, layer.requant, layer.relu, layer.out_scale)
    logits = t.data.reshape(-1)
    if logits.shape[0] != NUM_CLASSES:
        raise ShapeMismatchError(
            f"model produces {logits.shape[0]} outputs, expected {NUM_CLASSES}"
        )
    return ExerciseClass(int(np.argmax(logits))), logits


def infer_counts(m: ModelSpec, xy: np.ndarray) -> tuple[ExerciseClass, np.ndarray]:
    """Quantize a raw-count window (2, input_length) and classify it."""
    window = quantize(np.asarray(xy, dtype=np.float64), m.input_qparams)
    return infer_window(m, window)


def classify_recording(m: ModelSpec, recording, stride_s: float = 1.0):
    """Slide a 15 s window over a 100 Hz recording, one inference per window.

    Returns a list of (window offset in seconds, predicted class). A 60 s
    recording at 1 s stride yields 46 entries.
    """
    from .signals import frame_windows

    results = []
    for w in frame_windows(recording, stride_s=stride_s):
        cls, _ = infer_counts(m, w.data)
        results.append((w.offset_s, cls))
    return results


def synthetic_reference_model(seed: int = 0, input_scale: float = 16.0, input_zero_point: int = 0) -> ModelSpec:
    """Reference-architecture model with random weights.

    Useful for exercising the engine and the runtime simulator without a
    trained weight file; predictions are arbitrary but deterministic.
    """
    rng = np.random.default_rng(seed)

    def w8(*shape):
        return rng.integers(-30, 31, size=shape).astype(np.int8)

    def rq(zp, shift):
        return RequantSpec((1 << 30) + int(rng.integers(0, 1 << 30)), shift, zp)

    # shifts keep intermediate activations alive in mid-range for typical
    # full-scale int8 inputs
    layers = (
        ConvLayer(w8(20, 2, 9), rq(zp=-100, shift=7), True, 0.1),
        PoolLayer(2, 2),
        ConvLayer(w8(20, 20, 9), rq(zp=-100, shift=8), True, 0.1),
        PoolLayer(2, 2),
        FlattenLayer(),
        FcLayer(w8(100, 940), rq(zp=-100, shift=9), True, 0.1),
        FcLayer(w8(5, 100), rq(zp=0, shift=7), False, 0.1),
    )
    return ModelSpec(INPUT_CHANNELS, INPUT_LENGTH, QuantParams(input_scale, input_zero_point), layers)
