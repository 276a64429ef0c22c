"""Tiny convolutional backbone and the binary feature-map interchange format.

File layout (little-endian)::

    b"PDAF" | u32 h | u32 w | u32 n | h*w*n float32, channel-major (channel, row, column)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import engine as E
from .engine import Tensor
from .errors import ConfigurationError, FormatError
from .head import FeatureMap

FEATURE_MAGIC = b"PDAF"
_HEADER = struct.Struct("<4sIII")
# refuse to allocate absurd payloads from corrupt headers
MAX_FEATURE_VALUES = 1 << 28

DEFAULT_CHANNELS = (3, 8, 16, 32, 32)
# TF-style "same" padding: stride-2 3x3 on an even extent needs one extra
# trailing row/column to keep the output size integral.
SAME_PAD = (0, 1)


@dataclass
class ConvStage:
    kernels: Tensor
    bias: Tensor
    stride: int = 2
    pad: Tuple[int, int] = SAME_PAD
    activation: str = "tanh"


@dataclass
class TinyBackboneParams:
    stages: List[ConvStage]
    input_size: int = 64

    def named(self) -> Dict[str, Tensor]:
        out = {}
        for i, st in enumerate(self.stages):
            out[f"conv{i}.kernels"] = st.kernels
            out[f"conv{i}.bias"] = st.bias
        return out

    def load_named(self, tensors: Dict[str, Tensor]) -> None:
        for i, st in enumerate(self.stages):
            st.kernels = tensors[f"conv{i}.kernels"]
            st.bias = tensors[f"conv{i}.bias"]

    @property
    def in_channels(self) -> int:
        return self.stages[0].kernels.shape[1]

    @property
    def out_channels(self) -> int:
        return self.stages[-1].kernels.shape[0]

    def output_size(self) -> int:
        size = self.input_size
        for st in self.stages:
            size = E.conv_output_size(size, st.kernels.shape[2], st.stride, st.pad)
        return size


def init_backbone(
    channels: Sequence[int] = DEFAULT_CHANNELS,
    input_size: int = 64,
    kernel: int = 3,
    stride: int = 2,
    rng: Optional[np.random.Generator] = None,
    dtype=np.float64,
    init_gain: float = 3.0,
) -> TinyBackboneParams:
    """Build the conv stack; raises ConfigurationError if any stage has fractional output.

    Kernels are uniform in [-s, s] with s = sqrt(init_gain / fan_in); the
    default gain keeps activation variance roughly constant through depth.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    stages = []
    for c_in, c_out in zip(channels[:-1], channels[1:]):
        s = np.sqrt(init_gain / (c_in * kernel * kernel))
        k = Tensor(rng.uniform(-s, s, size=(c_out, c_in, kernel, kernel)), requires_grad=True, dtype=dtype)
        b = Tensor(np.zeros(c_out), requires_grad=True, dtype=dtype)
        stages.append(ConvStage(k, b, stride=stride))
    params = TinyBackboneParams(stages, input_size=input_size)
    params.output_size()
    return params


def backbone_forward(img, p: TinyBackboneParams) -> FeatureMap:
    """Map a ``(C, S, S)`` image (or a ``(B, C, S, S)`` batch) to a feature map."""
    x = img if isinstance(img, Tensor) else Tensor(np.asarray(img))
    if x.ndim not in (3, 4):
        raise ConfigurationError(f"image must be (C, H, W) or (B, C, H, W), got {x.shape}")
    c, hh, ww = x.shape[-3:]
    if (hh, ww) != (p.input_size, p.input_size) or c != p.in_channels:
        raise ConfigurationError(
            f"backbone expects {p.in_channels}x{p.input_size}x{p.input_size} input, got {c}x{hh}x{ww}"
        )
    for st in p.stages:
        x = E.conv2d(x, st.kernels, st.bias, stride=st.stride, pad=st.pad)
        x = E.activation(x, st.activation)
    return FeatureMap(x)


# ---------------------------------------------------------------------------
# feature-map files


def feature_map_to_bytes(fm: FeatureMap) -> bytes:
    if fm.batch_shape:
        raise ConfigurationError("only single (n, h, w) feature maps can be serialized")
    payload = np.ascontiguousarray(fm.data.values, dtype="<f4").tobytes()
    return _HEADER.pack(FEATURE_MAGIC, fm.h, fm.w, fm.n) + payload


def feature_map_from_bytes(buf: bytes, dtype=np.float64) -> FeatureMap:
    if len(buf) < _HEADER.size:
        if len(buf) >= 4 and buf[:4] != FEATURE_MAGIC:
            raise FormatError(f"bad magic {buf[:4]!r}, expected {FEATURE_MAGIC!r}", offset=0)
        raise FormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes", offset=len(buf))
    magic, h, w, n = _HEADER.unpack_from(buf)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}", offset=0)
    if h == 0 or w == 0 or n == 0:
        raise FormatError(f"zero dimension in header ({h}x{w}x{n})", offset=4)
    count = h * w * n
    if count > MAX_FEATURE_VALUES:
        raise FormatError(f"dimension overflow: {h}x{w}x{n} exceeds {MAX_FEATURE_VALUES} values", offset=4)
    need = _HEADER.size + 4 * count
    if len(buf) < need:
        got = (len(buf) - _HEADER.size) // 4
        raise FormatError(f"truncated payload: header says {h}x{w}x{n} but only {got} floats follow", offset=len(buf))
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after payload", offset=need)
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=_HEADER.size).reshape(n, h, w)
    return FeatureMap(Tensor(values.astype(dtype)))


def save_feature_map(fm: FeatureMap, sink) -> None:
    """Write ``fm`` to a path or a binary file object."""
    data = feature_map_to_bytes(fm)
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)


def load_feature_map(source, dtype=np.float64) -> FeatureMap:
    """Read a feature map from a path, bytes, or a binary file object."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        buf = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            buf = fh.read()
    else:
        buf = source.read()
    return feature_map_from_bytes(buf, dtype=dtype)
