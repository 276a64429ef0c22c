"""Differentiable operations used by the attention head and the backbone.

Matrix-shaped operations act on the last two axes and accept optional
leading batch axes; a parameter without batch axes is shared across the
batch and its adjoint is summed over them.
"""

from __future__ import annotations

from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, DimensionError, ShapeError
from .tensor import Function, Tensor


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over the leading axes that ``shape`` does not have."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def _check_batch(a_lead: tuple, b_lead: tuple, what: str, a_shape, b_shape) -> None:
    if a_lead and b_lead and a_lead != b_lead:
        raise DimensionError(f"{what}: batch axes differ for shapes {a_shape} and {b_shape}")


def _check_suffix(big: tuple, small: tuple, what: str) -> None:
    if len(small) > len(big) or big[len(big) - len(small):] != small:
        raise DimensionError(f"{what}: shape {small} does not broadcast onto {big}")


# ---------------------------------------------------------------------------
# matrix products and the three matrix/vector forms


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
        _check_batch(a.shape[:-2], b.shape[:-2], "matmul", a.shape, b.shape)
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return _reduce_to(ga, self.a.shape), _reduce_to(gb, self.b.shape)


class BroadcastAddCols(Function):
    """``m ⊕ v``: add vector ``v`` to every column of ``m``."""

    def forward(self, m, v):
        if m.ndim < 2 or v.ndim < 1 or v.shape[-1] != m.shape[-2]:
            raise DimensionError(
                f"broadcast_add_cols: vector {v.shape} does not match rows of {m.shape}"
            )
        _check_batch(m.shape[:-2], v.shape[:-1], "broadcast_add_cols", m.shape, v.shape)
        self.v_shape = v.shape
        return m + v[..., :, None]

    def backward(self, grad):
        return grad, _reduce_to(grad.sum(axis=-1), self.v_shape)


class ScaleCols(Function):
    """``m ⊙ v``: multiply column j of ``m`` by ``v[j]``."""

    def forward(self, m, v):
        if m.ndim < 2 or v.ndim < 1 or v.shape[-1] != m.shape[-1]:
            raise DimensionError(f"scale_cols: vector {v.shape} does not match columns of {m.shape}")
        _check_batch(m.shape[:-2], v.shape[:-1], "scale_cols", m.shape, v.shape)
        self.m, self.v = m, v
        return m * v[..., None, :]

    def backward(self, grad):
        gm = _reduce_to(grad * self.v[..., None, :], self.m.shape)
        gv = _reduce_to((grad * self.m).sum(axis=-2), self.v.shape)
        return gm, gv


class ScaleRows(Function):
    """``m ⊗ v``: multiply row i of ``m`` by ``v[i]``."""

    def forward(self, m, v):
        if m.ndim < 2 or v.ndim < 1 or v.shape[-1] != m.shape[-2]:
            raise DimensionError(f"scale_rows: vector {v.shape} does not match rows of {m.shape}")
        _check_batch(m.shape[:-2], v.shape[:-1], "scale_rows", m.shape, v.shape)
        self.m, self.v = m, v
        return m * v[..., :, None]

    def backward(self, grad):
        gm = _reduce_to(grad * self.v[..., :, None], self.m.shape)
        gv = _reduce_to((grad * self.m).sum(axis=-1), self.v.shape)
        return gm, gv


# ---------------------------------------------------------------------------
# elementwise


class Tanh(Function):
    def forward(self, x):
        self.y = np.tanh(x)
        return self.y

    def backward(self, grad):
        return (grad * (1.0 - self.y * self.y),)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


class Sigmoid(Function):
    def forward(self, x):
        self.y = _stable_sigmoid(x)
        return self.y

    def backward(self, grad):
        return (grad * self.y * (1.0 - self.y),)


class Softmax(Function):
    """Softmax over the last axis, with max-subtraction."""

    def forward(self, x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        self.y = e / e.sum(axis=-1, keepdims=True)
        return self.y

    def backward(self, grad):
        s = self.y
        return (s * (grad - (grad * s).sum(axis=-1, keepdims=True)),)


class Add(Function):
    def forward(self, a, b):
        _check_suffix(a.shape, b.shape, "add")
        self.b_shape = b.shape
        return a + b

    def backward(self, grad):
        return grad, _reduce_to(grad, self.b_shape)


class Sub(Function):
    def forward(self, a, b):
        _check_suffix(a.shape, b.shape, "sub")
        self.b_shape = b.shape
        return a - b

    def backward(self, grad):
        return grad, _reduce_to(-grad, self.b_shape)


class Mul(Function):
    def forward(self, a, b):
        _check_suffix(a.shape, b.shape, "mul")
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, _reduce_to(grad * self.a, self.b.shape)


class Square(Function):
    def forward(self, x):
        self.x = x
        return x * x

    def backward(self, grad):
        return (grad * 2.0 * self.x,)


class SumAll(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


class Pool(Function):
    """Sum or average over the column axis (-1) or the row axis (-2)."""

    def forward(self, m, axis="cols", kind="sum"):
        if m.ndim < 2:
            raise ShapeError(f"pool needs a matrix, got shape {m.shape}")
        if axis not in ("rows", "cols") or kind not in ("sum", "avg"):
            raise ConfigurationError(f"pool: bad axis/kind {axis!r}/{kind!r}")
        self.ax = -1 if axis == "cols" else -2
        self.shape = m.shape
        self.scale = 1.0 / m.shape[self.ax] if kind == "avg" else 1.0
        out = m.sum(axis=self.ax)
        return out * self.scale if kind == "avg" else out

    def backward(self, grad):
        g = np.expand_dims(grad, self.ax)
        if self.scale != 1.0:
            g = g * self.scale
        return (np.broadcast_to(g, self.shape).copy(),)


class Concat(Function):
    """Join two vectors (or batches of vectors) along the last axis."""

    def forward(self, a, b):
        if a.ndim < 1 or b.ndim < 1:
            raise ShapeError(f"concat needs vectors, got shapes {a.shape} and {b.shape}")
        if a.shape[:-1] != b.shape[:-1]:
            raise ShapeError(f"concat: leading axes differ for {a.shape} and {b.shape}")
        self.p = a.shape[-1]
        return np.concatenate([a, b], axis=-1)

    def backward(self, grad):
        return grad[..., : self.p], grad[..., self.p:]


class Reshape(Function):
    def forward(self, x, shape=()):
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as exc:
            raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from exc

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    """Swap the last two axes."""

    def forward(self, x):
        if x.ndim < 2:
            raise ShapeError(f"transpose needs a matrix, got shape {x.shape}")
        return np.ascontiguousarray(np.swapaxes(x, -1, -2))

    def backward(self, grad):
        return (np.swapaxes(grad, -1, -2),)


# ---------------------------------------------------------------------------
# convolution


def _pad_pair(pad) -> Tuple[int, int]:
    if isinstance(pad, (tuple, list)):
        before, after = int(pad[0]), int(pad[1])
    else:
        before = after = int(pad)
    if before < 0 or after < 0:
        raise ConfigurationError(f"conv2d: padding must be non-negative, got {pad}")
    return before, after


def conv_output_size(size: int, kernel: int, stride: int, pad) -> int:
    """Output extent of a convolution; raises if it is not a positive integer."""
    before, after = _pad_pair(pad)
    if stride <= 0:
        raise ConfigurationError(f"conv2d: stride must be positive, got {stride}")
    span = size + before + after - kernel
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"conv2d: ({size}+{before}+{after}-{kernel})/{stride}+1 is not a positive integer"
        )
    return span // stride + 1


class Conv2d(Function):
    """Cross-correlation of ``(N, C, H, W)`` or ``(C, H, W)`` input with ``(O, C, kh, kw)`` kernels.

    ``pad`` is either a symmetric int or a ``(before, after)`` pair applied to
    both spatial axes.
    """

    def forward(self, x, k, bias=None, stride=1, pad=0):
        self.unbatched = x.ndim == 3
        if self.unbatched:
            x = x[None]
        if x.ndim != 4 or k.ndim != 4:
            raise ShapeError(f"conv2d: expected (N,C,H,W) input and (O,C,kh,kw) kernels, got {x.shape}, {k.shape}")
        if x.shape[1] != k.shape[1]:
            raise DimensionError(f"conv2d: input channels {x.shape[1]} != kernel channels {k.shape[1]}")
        if bias is not None and bias.shape != (k.shape[0],):
            raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {k.shape[0]} kernels")
        _, _, h, w = x.shape
        kh, kw = k.shape[2:]
        oh = conv_output_size(h, kh, stride, pad)
        ow = conv_output_size(w, kw, stride, pad)
        before, after = _pad_pair(pad)
        xp = np.pad(x, ((0, 0), (0, 0), (before, after), (before, after))) if before or after else x
        # windows: (N, C, OH, OW, kh, kw)
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
        self.win, self.k, self.stride = win, k, stride
        self.xp_shape, self.x_shape, self.pad = xp.shape, x.shape, (before, after)
        self.has_bias = bias is not None
        out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))  # (N, OH, OW, O)
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        if bias is not None:
            out += bias[None, :, None, None]
        return out[0] if self.unbatched else out

    def backward(self, grad):
        if self.unbatched:
            grad = grad[None]
        k, s = self.k, self.stride
        kh, kw = k.shape[2:]
        oh, ow = grad.shape[2:]
        gk = np.tensordot(grad, self.win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)
        gxp = np.zeros(self.xp_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                # (N, O, OH, OW) x (O, C) -> (N, OH, OW, C)
                contrib = np.tensordot(grad, k[:, :, i, j], axes=([1], [0]))
                gxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += contrib.transpose(0, 3, 1, 2)
        before, _ = self.pad
        h, w = self.x_shape[2:]
        gx = gxp[:, :, before:before + h, before:before + w]
        if self.unbatched:
            gx = gx[0]
        grads = [np.ascontiguousarray(gx), gk]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads


# ---------------------------------------------------------------------------
# functional wrappers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def broadcast_add_cols(m: Tensor, v: Tensor) -> Tensor:
    return BroadcastAddCols.apply(m, v)


def scale_cols(m: Tensor, v: Tensor) -> Tensor:
    return ScaleCols.apply(m, v)


def scale_rows(m: Tensor, v: Tensor) -> Tensor:
    return ScaleRows.apply(m, v)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        return Tanh.apply(x)
    if kind == "sigmoid":
        return Sigmoid.apply(x)
    raise ConfigurationError(f"unknown activation {kind!r}")


def softmax(x: Tensor) -> Tensor:
    return Softmax.apply(x)


def pool(m: Tensor, axis: str = "cols", kind: str = "sum") -> Tensor:
    return Pool.apply(m, axis=axis, kind=kind)


def concat(a: Tensor, b: Tensor) -> Tensor:
    return Concat.apply(a, b)


def reshape(x: Tensor, shape) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x: Tensor) -> Tensor:
    return Transpose.apply(x)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def square(x: Tensor) -> Tensor:
    return Square.apply(x)


def sum_all(x: Tensor) -> Tensor:
    return SumAll.apply(x)


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    pad: Union[int, Tuple[int, int]] = 0,
) -> Tensor:
    if bias is None:
        return Conv2d.apply(x, kernels, stride=stride, pad=pad)
    return Conv2d.apply(x, kernels, bias, stride=stride, pad=pad)
