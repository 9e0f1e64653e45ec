"""
Differentiable kernels on `Tensor`.

Convolution works through im2col / col2im on strided views; everything else is an
elementwise or reduction map with its exact derivative. Broadcasting is limited to
what the network needs: a size-1 axis (a mask channel, a bias) against a full one.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from components.errors import ConfigError, ShapeError
from components.tensor.tensor import Function, Tensor

logger = logging.getLogger(__name__)

ACTIVATIONS = ("elu", "relu", "leaky_relu", "sigmoid", "tanh", "identity")
RESAMPLE_MODES = ("nearest_up2", "avg_down2")
LEAKY_SLOPE = 0.2


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to `shape` after size-1 axes were broadcast."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int, dilation: int) -> np.ndarray:
    """(n, c, h, w) -> (n, c*kh*kw, ho*wo) with zero padding."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    x = np.ascontiguousarray(x)
    sn, sc, sh, sw = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, dilation * sh, dilation * sw, stride * sh, stride * sw),
        writeable=False,
    )
    return patches.reshape(n, c * kh * kw, ho * wo)


def col2im(cols: np.ndarray, x_shape: Tuple[int, ...], kh: int, kw: int,
           stride: int, padding: int, dilation: int) -> np.ndarray:
    """Scatter-add columns back to an image; adjoint of `im2col`."""
    n, c, h, w = x_shape
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        top = i * dilation
        for j in range(kw):
            left = j * dilation
            padded[:, :, top:top + stride * (ho - 1) + 1:stride,
                   left:left + stride * (wo - 1) + 1:stride] += cols[:, :, i, j]
    if padding > 0:
        return padded[:, :, padding:padding + h, padding:padding + w]
    return padded


class Conv2d(Function):
    name = "conv2d"

    def forward(self, x, weight, bias, stride=1, padding=0, dilation=1):
        if x.ndim != 4 or weight.ndim != 4:
            raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
        out_c, in_c, kh, kw = weight.shape
        if x.shape[1] != in_c:
            raise ShapeError(f"conv2d input has {x.shape[1]} channels, weight expects {in_c}")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
        if stride < 1 or dilation < 1:
            raise ShapeError(f"conv2d stride and dilation must be positive, got {stride}, {dilation}")
        if padding < 0:
            raise ShapeError(f"conv2d padding must be non-negative, got {padding}")
        if bias.shape != (out_c,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match {out_c} filters")
        n, _, h, w = x.shape
        ho = conv_output_size(h, kh, stride, padding, dilation)
        wo = conv_output_size(w, kw, stride, padding, dilation)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d output would be empty for input {h}x{w}")

        cols = im2col(x, kh, kw, stride, padding, dilation)
        w2 = weight.reshape(out_c, -1)
        out = np.matmul(w2, cols) + bias[None, :, None]
        self.cols, self.w2 = cols, w2
        self.x_shape, self.w_shape = x.shape, weight.shape
        self.geometry = (kh, kw, stride, padding, dilation)
        return out.reshape(n, out_c, ho, wo)

    def backward(self, grad):
        n, out_c = grad.shape[:2]
        g2 = grad.reshape(n, out_c, -1)
        grad_w = np.einsum("nol,nkl->ok", g2, self.cols).reshape(self.w_shape)
        grad_b = g2.sum(axis=(0, 2))
        dcols = np.matmul(self.w2.T, g2)
        grad_x = col2im(dcols, self.x_shape, *self.geometry)
        return grad_x, grad_w, grad_b


class Activation(Function):
    name = "activation"

    def forward(self, x, kind="identity"):
        self.kind = kind
        if kind == "elu":
            neg = np.expm1(np.minimum(x, 0.0))
            self.deriv = np.where(x > 0, 1.0, neg + 1.0)
            return np.where(x > 0, x, neg)
        if kind == "relu":
            self.deriv = (x > 0).astype(np.float64)
            return np.maximum(x, 0.0)
        if kind == "leaky_relu":
            self.deriv = np.where(x > 0, 1.0, LEAKY_SLOPE)
            return np.where(x > 0, x, LEAKY_SLOPE * x)
        if kind == "sigmoid":
            out = 0.5 * (1.0 + np.tanh(0.5 * x))
            self.deriv = out * (1.0 - out)
            return out
        if kind == "tanh":
            out = np.tanh(x)
            self.deriv = 1.0 - out * out
            return out
        if kind == "identity":
            self.deriv = None
            return x.copy()
        raise ConfigError(f"unknown activation kind {kind!r}; expected one of {ACTIVATIONS}")

    def backward(self, grad):
        if self.deriv is None:
            return (grad,)
        return (grad * self.deriv,)


class Resample(Function):
    name = "resample"

    def forward(self, x, mode="nearest_up2"):
        self.mode = mode
        n, c, h, w = x.shape
        if mode == "nearest_up2":
            return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)
        if mode == "avg_down2":
            if h % 2 or w % 2:
                raise ShapeError(f"avg_down2 needs even extents, got {h}x{w}")
            return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        raise ConfigError(f"unknown resample mode {mode!r}; expected one of {RESAMPLE_MODES}")

    def backward(self, grad):
        n, c, h, w = grad.shape
        if self.mode == "nearest_up2":
            return (grad.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)
        return (np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3) / 4.0,)


class Add(Function):
    name = "add"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), -_unbroadcast(grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class Scale(Function):
    name = "scale"

    def forward(self, x, factor=1.0):
        self.factor = factor
        return x * factor

    def backward(self, grad):
        return (grad * self.factor,)


class Shift(Function):
    name = "shift"

    def forward(self, x, offset=0.0):
        return x + offset

    def backward(self, grad):
        return (grad,)


class Abs(Function):
    name = "abs"

    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Sum(Function):
    name = "sum"

    def forward(self, x, axis=None, keepdims=False):
        self.x_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.x_shape).copy(),)


class Mean(Function):
    name = "mean"

    def forward(self, x):
        if x.size == 0:
            raise ShapeError("mean of an empty tensor")
        self.x_shape = x.shape
        return np.mean(x)

    def backward(self, grad):
        return (np.full(self.x_shape, float(grad) / np.prod(self.x_shape)),)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays, axis=1):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class SelectBatch(Function):
    name = "select_batch"

    def forward(self, x, index=0):
        self.x_shape, self.index = x.shape, index
        return x[index:index + 1].copy()

    def backward(self, grad):
        full = np.zeros(self.x_shape)
        full[self.index:self.index + 1] = grad
        return (full,)


class Where(Function):
    """out = a where `condition` holds, b elsewhere; `condition` broadcasts over channels."""

    name = "where"

    def forward(self, a, b, condition=None):
        if a.shape != b.shape:
            raise ShapeError(f"where needs equal shapes, got {a.shape} and {b.shape}")
        self.condition = np.broadcast_to(condition, a.shape)
        return np.where(self.condition, a, b)

    def backward(self, grad):
        return np.where(self.condition, grad, 0.0), np.where(self.condition, 0.0, grad)


class Reshape(Function):
    name = "reshape"

    def forward(self, x, shape=()):
        self.x_shape = x.shape
        return x.reshape(shape).copy()

    def backward(self, grad):
        return (grad.reshape(self.x_shape),)


class Gram(Function):
    name = "gram"

    def forward(self, x):
        if x.ndim != 4 or x.shape[0] != 1:
            raise ShapeError(f"gram expects a single sample (1, c, h, w), got {x.shape}")
        _, c, h, w = x.shape
        self.features = x.reshape(c, h * w)
        self.norm = float(c * h * w)
        self.x_shape = x.shape
        return self.features @ self.features.T / self.norm

    def backward(self, grad):
        grad_f = (grad + grad.T) @ self.features / self.norm
        return (grad_f.reshape(self.x_shape),)


class Unfold(Function):
    """Stride-1 'same' patches: (n, c, h, w) -> (n, c*k*k, h*w)."""

    name = "unfold"

    def forward(self, x, kernel=3):
        self.x_shape, self.kernel = x.shape, kernel
        return im2col(x, kernel, kernel, 1, kernel // 2, 1).copy()

    def backward(self, grad):
        k = self.kernel
        return (col2im(grad, self.x_shape, k, k, 1, k // 2, 1),)


class Fold(Function):
    """Overlap-add of stride-1 'same' patches; adjoint of `Unfold`."""

    name = "fold"

    def forward(self, cols, out_shape=(), kernel=3):
        self.out_shape, self.kernel = tuple(out_shape), kernel
        return col2im(cols, self.out_shape, kernel, kernel, 1, kernel // 2, 1)

    def backward(self, grad):
        k = self.kernel
        return (im2col(grad, k, k, 1, k // 2, 1).copy(),)


class L2Normalize(Function):
    name = "l2_normalize"

    def forward(self, x, axis=1, eps=1e-9):
        self.axis = axis
        self.x = x
        self.norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True) + eps)
        return x / self.norm

    def backward(self, grad):
        dot = np.sum(grad * self.x, axis=self.axis, keepdims=True)
        return (grad / self.norm - self.x * dot / self.norm ** 3,)


class BatchMatMul(Function):
    name = "bmm"

    def forward(self, a, b, transpose_a=False):
        self.a, self.b, self.transpose_a = a, b, transpose_a
        left = np.swapaxes(a, -1, -2) if transpose_a else a
        if left.shape[-1] != b.shape[-2]:
            raise ShapeError(f"bmm inner extents differ: {left.shape} @ {b.shape}")
        return np.matmul(left, b)

    def backward(self, grad):
        if self.transpose_a:
            grad_a = np.matmul(self.b, np.swapaxes(grad, -1, -2))
            grad_b = np.matmul(self.a, grad)
        else:
            grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
            grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return grad_a, grad_b


class MaskedSoftmax(Function):
    """Softmax over axis 1 of (n, L, P) scores; rows where `valid` is False get weight 0."""

    name = "masked_softmax"

    def forward(self, scores, valid=None, scale=1.0):
        valid = np.asarray(valid, dtype=bool)[:, :, None]
        if not np.all(valid.any(axis=1)):
            raise ShapeError("masked softmax needs at least one valid entry per sample")
        z = np.where(valid, scale * scores, -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        e = np.where(valid, np.exp(z), 0.0)
        out = e / e.sum(axis=1, keepdims=True)
        self.out, self.scale = out, scale
        return out

    def backward(self, grad):
        inner = np.sum(grad * self.out, axis=1, keepdims=True)
        return (self.scale * self.out * (grad - inner),)


def conv2d(input: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, dilation: int = 1) -> Tensor:
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[0]))
    return Conv2d.apply(input, weight, bias, stride=stride, padding=padding, dilation=dilation)


def activation(kind: str, input: Tensor) -> Tensor:
    return Activation.apply(input, kind=kind)


def resample(input: Tensor, mode: str) -> Tensor:
    return Resample.apply(input, mode=mode)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def shift(x: Tensor, offset: float) -> Tensor:
    return Shift.apply(x, offset=float(offset))


def abs_(x: Tensor) -> Tensor:
    return Abs.apply(x)


def sum_(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor) -> Tensor:
    return Mean.apply(x)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def select_batch(x: Tensor, index: int) -> Tensor:
    return SelectBatch.apply(x, index=index)


def where(condition: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    return Where.apply(a, b, condition=np.asarray(condition, dtype=bool))


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def gram(features: Tensor) -> Tensor:
    return Gram.apply(features)


def unfold(x: Tensor, kernel: int = 3) -> Tensor:
    return Unfold.apply(x, kernel=kernel)


def fold(cols: Tensor, out_shape: Tuple[int, ...], kernel: int = 3) -> Tensor:
    return Fold.apply(cols, out_shape=tuple(out_shape), kernel=kernel)


def l2_normalize(x: Tensor, axis: int = 1) -> Tensor:
    return L2Normalize.apply(x, axis=axis)


def bmm(a: Tensor, b: Tensor, transpose_a: bool = False) -> Tensor:
    return BatchMatMul.apply(a, b, transpose_a=transpose_a)


def masked_softmax(scores: Tensor, valid: np.ndarray, scale: float = 1.0) -> Tensor:
    return MaskedSoftmax.apply(scores, valid=valid, scale=float(scale))
