"""Differentiable operations over ``Tensor``.

Layout convention: feature maps are C x H x W, matrices are rows x cols.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from lgdc.core.exceptions import IndivisibleShape, InvalidHyperparameter, ShapeMismatch
from lgdc.ndcore.tensor import Function, Tensor


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError as exc:
        raise ShapeMismatch(f"shapes {a} and {b} are not broadcast-compatible") from exc


# -- elementwise ---------------------------------------------------------------


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        ga = grad / self.b
        gb = -grad * self.a / (self.b * self.b)
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


_ELEMENTWISE: dict[str, type[Function]] = {"add": Add, "sub": Sub, "mul": Mul, "div": Div}


def elementwise(op_kind: str, a: Tensor, b: Tensor) -> Tensor:
    """Broadcasting binary op; ``op_kind`` is one of add, sub, mul, div."""
    try:
        function = _ELEMENTWISE[op_kind]
    except KeyError:
        raise InvalidHyperparameter(f"unknown elementwise op {op_kind!r}") from None
    a, b = Tensor.wrap(a), Tensor.wrap(b)
    broadcast_shape(a.shape, b.shape)
    return function.apply(a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("mul", a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("div", a, b)


# -- linear algebra ------------------------------------------------------------


class MatMul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return MatMul.apply(a, b)


# -- convolution ---------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, pad: int, dilation: int) -> int:
    span = size + 2 * pad - dilation * (kernel - 1) - 1
    if span < 0:
        return 0
    return span // stride + 1


def _window(offset: int, stride: int, count: int) -> slice:
    return slice(offset, offset + stride * (count - 1) + 1, stride)


class Conv2d(Function):
    def forward(self, x, w, stride=1, pad=0, dilation=1):
        channels, height, width = x.shape
        k = w.shape[2]
        out_h = conv_output_size(height, k, stride, pad, dilation)
        out_w = conv_output_size(width, k, stride, pad, dilation)
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x

        cols = np.empty((channels, k, k, out_h, out_w))
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = xp[:, _window(i * dilation, stride, out_h), _window(j * dilation, stride, out_w)]

        self.cols, self.w = cols, w
        self.geometry = (x.shape, xp.shape, k, stride, pad, dilation, out_h, out_w)
        return np.tensordot(w, cols, axes=([1, 2, 3], [0, 1, 2]))

    def backward(self, grad):
        x_shape, xp_shape, k, stride, pad, dilation, out_h, out_w = self.geometry
        grad_w = np.tensordot(grad, self.cols, axes=([1, 2], [3, 4]))
        grad_cols = np.tensordot(self.w, grad, axes=([0], [0]))
        grad_xp = np.zeros(xp_shape)
        for i in range(k):
            for j in range(k):
                grad_xp[:, _window(i * dilation, stride, out_h), _window(j * dilation, stride, out_w)] += grad_cols[:, i, j]
        grad_x = grad_xp[:, pad : pad + x_shape[1], pad : pad + x_shape[2]] if pad else grad_xp
        return grad_x, grad_w


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, dilation: int = 1) -> Tensor:
    """Cross-correlation of a C_in x H x W map with C_out x C_in x k x k weights."""
    if dilation < 1:
        raise InvalidHyperparameter(f"dilation must be >= 1, got {dilation}")
    if stride < 1 or pad < 0:
        raise InvalidHyperparameter(f"invalid stride={stride} / pad={pad}")
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects C x H x W input and 4-D weights, got {x.shape}, {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"weights expect {w.shape[1]} input channels, input has {x.shape[0]}")
    k = w.shape[2]
    if w.shape[3] != k or k % 2 == 0:
        raise ShapeMismatch(f"kernel must be square with odd size, got {w.shape[2:]}")
    out_h = conv_output_size(x.shape[1], k, stride, pad, dilation)
    out_w = conv_output_size(x.shape[2], k, stride, pad, dilation)
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"input {x.shape[1:]} too small for kernel {k} at dilation {dilation}")
    return Conv2d.apply(x, w, stride=stride, pad=pad, dilation=dilation)


class MaxPool2d(Function):
    def forward(self, x, size=2):
        channels, height, width = x.shape
        blocks = x.reshape(channels, height // size, size, width // size, size)
        blocks = blocks.transpose(0, 1, 3, 2, 4).reshape(channels, height // size, width // size, size * size)
        winner = blocks.argmax(axis=-1)
        self.mask = np.zeros_like(blocks)
        np.put_along_axis(self.mask, winner[..., None], 1.0, axis=-1)
        self.geometry = (x.shape, size)
        return np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        (channels, height, width), size = self.geometry
        spread = self.mask * grad[..., None]
        spread = spread.reshape(channels, height // size, width // size, size, size).transpose(0, 1, 3, 2, 4)
        return (spread.reshape(channels, height, width),)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    if x.ndim != 3:
        raise ShapeMismatch(f"max_pool2d expects C x H x W, got {x.shape}")
    if x.shape[1] % size or x.shape[2] % size:
        raise IndivisibleShape(f"spatial size {x.shape[1:]} not divisible by pool size {size}")
    return MaxPool2d.apply(x, size=size)


# -- activations ---------------------------------------------------------------


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Softplus(Function):
    def forward(self, x):
        self.x = x
        return np.logaddexp(0.0, x)

    def backward(self, grad):
        return (grad * expit(self.x),)


class Softmax(Function):
    def forward(self, x, axis=-1):
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.y = e / e.sum(axis=axis, keepdims=True)
        self.axis = axis
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def softplus(x: Tensor) -> Tensor:
    return Softplus.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeMismatch(f"axis {axis} out of range for shape {x.shape}")
    return Softmax.apply(x, axis=axis)


# -- reductions and shape ------------------------------------------------------


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, x, shape=()):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = axes if axes is not None else tuple(reversed(range(x.ndim)))
        return x.transpose(self.axes)

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.axes)),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=self.axis))


class ColumnNorm(Function):
    def forward(self, x, axis=0, eps=1e-12):
        norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
        self.x, self.norm, self.eps = x, norm, eps
        return np.maximum(norm, eps)

    def backward(self, grad):
        live = self.norm > self.eps
        safe = np.where(live, self.norm, 1.0)
        return (np.where(live, grad / safe, 0.0) * self.x,)


def sum(x: Tensor, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    if isinstance(axis, list):
        axis = tuple(axis)
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor) -> Tensor:
    return Sum.apply(x) / float(x.size)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size or any(s < 0 for s in shape):
        raise ShapeMismatch(f"cannot reshape {x.shape} to {shape}")
    return Reshape.apply(x, shape=shape)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is not None and sorted(axes) != list(range(x.ndim)):
        raise ShapeMismatch(f"invalid permutation {axes} for {x.ndim}-D tensor")
    return Transpose.apply(x, axes=tuple(axes) if axes is not None else None)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(first) or any(a != b for i, (a, b) in enumerate(zip(t.shape, first)) if i != axis % len(first)):
            raise ShapeMismatch(f"cannot concatenate {t.shape} with {first} along axis {axis}")
    return Concat.apply(*tensors, axis=axis)


def column_norm(x: Tensor, axis: int = 0, eps: float = 1e-12) -> Tensor:
    """L2 norm along ``axis`` (kept as size 1), clamped below at ``eps``."""
    return ColumnNorm.apply(x, axis=axis, eps=eps)
