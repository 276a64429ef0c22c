"""Spatial / channel-wise attention head and the regression projection.

Shapes follow the feature map F viewed as ``n x m`` (channels by
locations, ``m = h * w``).  Every function also accepts a leading batch
axis, in which case F is ``(B, n, m)`` and all outputs gain that axis.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Dict, Optional, Tuple

import numpy as np

from . import engine as E
from .engine import Tensor
from .errors import ConfigurationError, DimensionError

MODES = ("S", "CW", "S_CW")
_MODE_ALIASES = {"S+CW": "S_CW", "SCW": "S_CW"}


def normalize_mode(mode: str) -> str:
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ConfigurationError(f"unknown attention mode {mode!r}; expected one of {MODES}")
    return mode


@dataclass
class FeatureMap:
    """Backbone output with channel-major data of shape ``(..., n, h, w)``."""

    data: Tensor

    def __post_init__(self):
        if self.data.ndim < 3:
            raise DimensionError(f"feature map needs (n, h, w) data, got {self.data.shape}")
        if min(self.data.shape[-3:]) <= 0:
            raise DimensionError(f"feature map has an empty axis: {self.data.shape}")

    @property
    def n(self) -> int:
        return self.data.shape[-3]

    @property
    def h(self) -> int:
        return self.data.shape[-2]

    @property
    def w(self) -> int:
        return self.data.shape[-1]

    @property
    def m(self) -> int:
        return self.h * self.w

    @property
    def batch_shape(self) -> tuple:
        return self.data.shape[:-3]

    def as_nm(self) -> Tensor:
        """F: one column per spatial location, row-major over (row, col)."""
        return E.reshape(self.data, self.batch_shape + (self.n, self.m))

    def as_mn(self) -> Tensor:
        """G: one column per channel."""
        return E.transpose(self.as_nm())


@dataclass
class PdanetParams:
    W_S2: Tensor
    b_S: Tensor
    W_S1: Tensor
    W_C1: Tensor
    b_C: Tensor
    W_CS: Tensor
    b_CS: Tensor
    W_out: Tensor
    b_out: Tensor

    @property
    def k(self) -> int:
        return self.W_S2.shape[0]

    @property
    def n(self) -> int:
        return self.W_S2.shape[1]

    @property
    def m(self) -> int:
        return self.W_C1.shape[0]

    @property
    def n_e(self) -> int:
        return self.W_out.shape[0]

    def named(self) -> Dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_named(cls, tensors: Dict[str, Tensor]) -> "PdanetParams":
        return cls(**{f.name: tensors[f.name] for f in fields(cls)})

    def validate(self, fm: Optional[FeatureMap] = None) -> None:
        k, n, m = self.k, self.n, self.m
        if k != n:
            raise DimensionError(f"hidden size k={k} must equal channel count n={n}")
        expected = {
            "W_S2": (k, n), "b_S": (k,), "W_S1": (1, k), "W_C1": (m, m), "b_C": (m,),
            "W_CS": (k, n), "b_CS": (k,), "W_out": (self.n_e, 2 * k), "b_out": (self.n_e,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionError(f"parameter {name} has shape {got}, expected {shape}")
        if fm is not None and (fm.n != n or fm.m != m):
            raise DimensionError(
                f"feature map (h={fm.h}, w={fm.w}, n={fm.n}) is inconsistent with parameters (m={m}, n={n})"
            )


def init_params(
    h: int,
    w: int,
    n: int,
    n_e: int = 3,
    rng: Optional[np.random.Generator] = None,
    dtype=np.float64,
) -> PdanetParams:
    """Uniform(-s, s) weights with s = sqrt(1 / fan_in); zero biases."""
    rng = rng if rng is not None else np.random.default_rng(0)
    m, k = h * w, n

    def weight(rows, cols):
        s = np.sqrt(1.0 / cols)
        return Tensor(rng.uniform(-s, s, size=(rows, cols)), requires_grad=True, dtype=dtype)

    def bias(size):
        return Tensor(np.zeros(size), requires_grad=True, dtype=dtype)

    return PdanetParams(
        W_S2=weight(k, n), b_S=bias(k), W_S1=weight(1, k),
        W_C1=weight(m, m), b_C=bias(m),
        W_CS=weight(k, n), b_CS=bias(k),
        W_out=weight(n_e, 2 * k), b_out=bias(n_e),
    )


@dataclass
class AttentionOutputs:
    A_S: Optional[Tensor]
    A_C: Optional[Tensor]
    f_S: Optional[Tensor]
    f_C: Optional[Tensor]
    f_A: Tensor
    prediction: Tensor


def _projected(F: FeatureMap, p: PdanetParams) -> Tensor:
    # W_S2 F ⊕ b_S, shared by both branches
    return E.broadcast_add_cols(E.matmul(p.W_S2, F.as_nm()), p.b_S)


def _spatial_from_hidden(hidden: Tensor, projected: Tensor, p: PdanetParams) -> Tuple[Tensor, Tensor]:
    scores = E.matmul(p.W_S1, E.tanh(hidden))  # (..., 1, m)
    A_S = E.softmax(E.reshape(scores, scores.shape[:-2] + (scores.shape[-1],)))
    f_S = E.pool(E.scale_cols(projected, A_S), axis="cols", kind="sum")
    return A_S, f_S


def spatial_attention(F: FeatureMap, p: PdanetParams) -> Tuple[Tensor, Tensor]:
    """A_S = softmax(W_S1 tanh(W_S2 F ⊕ b_S)); f_S = sum over locations of A_S ⊙ (W_S2 F ⊕ b_S)."""
    p.validate(F)
    projected = _projected(F, p)
    return _spatial_from_hidden(projected, projected, p)


def channel_attention(F: FeatureMap, p: PdanetParams) -> Tuple[Tensor, Tensor]:
    """One sigmoid gate per channel, then the channel-weighted location average."""
    p.validate(F)
    gates = E.sigmoid(E.broadcast_add_cols(E.matmul(p.W_C1, F.as_mn()), p.b_C))  # (..., m, n)
    A_C = E.pool(gates, axis="rows", kind="avg")
    f_C = E.pool(E.scale_rows(_projected(F, p), A_C), axis="cols", kind="avg")
    return A_C, f_C


def _coupling(A_C: Tensor, p: PdanetParams) -> Tensor:
    col = E.reshape(A_C, A_C.shape + (1,))
    shift = E.matmul(p.W_CS, col)
    return E.add(E.reshape(shift, shift.shape[:-1]), p.b_CS)


def coupled_spatial_attention(F: FeatureMap, A_C: Tensor, p: PdanetParams) -> Tuple[Tensor, Tensor]:
    """Spatial attention whose hidden layer is shifted by a linear map of A_C."""
    p.validate(F)
    if A_C.shape[-1] != p.n or A_C.shape[:-1] != F.batch_shape:
        raise DimensionError(f"channel attention shape {A_C.shape} does not match feature map {F.data.shape}")
    projected = _projected(F, p)
    hidden = E.broadcast_add_cols(projected, _coupling(A_C, p))
    return _spatial_from_hidden(hidden, projected, p)


def regress(f_A: Tensor, p: PdanetParams) -> Tensor:
    col = E.reshape(f_A, f_A.shape + (1,))
    out = E.matmul(p.W_out, col)
    return E.add(E.reshape(out, out.shape[:-1]), p.b_out)


def head_forward(F: FeatureMap, p: PdanetParams, mode: str = "S_CW") -> AttentionOutputs:
    mode = normalize_mode(mode)
    A_S = A_C = f_S = f_C = None
    if mode == "S":
        A_S, f_S = spatial_attention(F, p)
        f_A = E.concat(f_S, f_S)
    elif mode == "CW":
        A_C, f_C = channel_attention(F, p)
        f_A = E.concat(f_C, f_C)
    else:
        A_C, f_C = channel_attention(F, p)
        A_S, f_S = coupled_spatial_attention(F, A_C, p)
        f_A = E.concat(f_S, f_C)
    return AttentionOutputs(A_S=A_S, A_C=A_C, f_S=f_S, f_C=f_C, f_A=f_A, prediction=regress(f_A, p))
