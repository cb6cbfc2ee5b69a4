"""Forward/backward primitives for a small float64 convnet.

Activations are laid out ``(batch, height, width, channels)``. Convolutions
are stride 1 with same padding, so the spatial size is unchanged. Odd filter
sizes only.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..artifacts import TexfuseError

# upper bound on im2col elements materialised at once (~128 MB of float64)
_COLS_BUDGET = 16_000_000


class ShapeError(TexfuseError):
    code = "shape-mismatch"


class DivergenceError(TexfuseError):
    code = "divergence"


def _check_finite(a: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise DivergenceError(f"non-finite activation in {where}")
    return a


class Layer:
    kind = "layer"
    learnable = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray | None:
        raise NotImplementedError


class Conv2D(Layer):
    kind = "conv"
    learnable = True

    def __init__(self, in_channels: int, filters: int, size: int, rng=None, scale: float = 0.01,
                 input_grad: bool = True):
        super().__init__()
        if size % 2 != 1:
            raise ValueError("filter size must be odd for same padding")
        self.in_channels, self.filters, self.size = in_channels, filters, size
        self.input_grad = input_grad
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = rng.standard_normal((filters, in_channels, size, size)) * scale
        self.params["b"] = np.zeros(filters)
        self._xp = None

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} channels, got {c}")
        return (h, w, self.filters)

    def _cols(self, xp: np.ndarray, h: int, w: int) -> np.ndarray:
        k = self.size
        win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (n, h, w, c, k, k)
        return win.reshape(xp.shape[0] * h * w, self.in_channels * k * k)

    def _chunks(self, n: int, h: int, w: int):
        per = max(1, _COLS_BUDGET // max(1, h * w * self.in_channels * self.size**2))
        for s in range(0, n, per):
            yield slice(s, min(n, s + per))

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"conv expects (n, h, w, {self.in_channels}), got {x.shape}")
        n, h, w, _ = x.shape
        p = self.size // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        wmat = self.params["W"].reshape(self.filters, -1)
        out = np.empty((n, h, w, self.filters))
        for sl in self._chunks(n, h, w):
            cols = self._cols(xp[sl], h, w)
            out[sl] = (cols @ wmat.T).reshape(-1, h, w, self.filters)
        out += self.params["b"]
        self._xp = xp if train else None
        return _check_finite(out, "conv")

    def backward(self, dout):
        xp = self._xp
        n, h, w, f = dout.shape
        k, c = self.size, self.in_channels
        wmat = self.params["W"].reshape(f, -1)
        dW = np.zeros_like(wmat)
        dxp = np.zeros_like(xp) if self.input_grad else None
        for sl in self._chunks(n, h, w):
            d = dout[sl].reshape(-1, f)
            dW += d.T @ self._cols(xp[sl], h, w)
            if dxp is not None:
                dcols = (d @ wmat).reshape(-1, h, w, c, k, k)
                part = dxp[sl]
                for i in range(k):
                    for j in range(k):
                        part[:, i : i + h, j : j + w, :] += dcols[..., i, j]
        self.grads["W"] = dW.reshape(self.params["W"].shape)
        self.grads["b"] = dout.sum(axis=(0, 1, 2))
        if dxp is None:
            return None
        p = k // 2
        return dxp[:, p : p + h, p : p + w, :]


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=True):
        out = np.maximum(x, 0.0)
        self._out = out if train else None
        return out

    def backward(self, dout):
        return np.where(self._out > 0, dout, 0.0)


class MaxPool2D(Layer):
    """Non-overlapping ``size x size`` max pooling (stride = size).

    The gradient of each window goes to its argmax, taking the first
    position in row-major window order when values tie.
    """

    kind = "maxpool"

    def __init__(self, size: int = 2):
        super().__init__()
        self.size = size

    def output_shape(self, shape):
        h, w, c = shape
        s = self.size
        if h % s or w % s:
            raise ShapeError(f"maxpool {s}x{s} needs spatial dims divisible by {s}, got {h}x{w}")
        return (h // s, w // s, c)

    def _blocks(self, x):
        n, h, w, c = x.shape
        s = self.size
        self.output_shape((h, w, c))
        return x.reshape(n, h // s, s, w // s, s, c)

    def forward(self, x, train=True):
        out = self._blocks(x).max(axis=(2, 4))
        if train:
            self._x, self._out = x, out
        return out

    def _first_argmax_mask(self, xb):
        n, ho, s, wo, _, c = xb.shape
        win = xb.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, s * s)
        onehot = np.zeros(win.shape, dtype=bool)
        np.put_along_axis(onehot, win.argmax(axis=-1)[..., None], True, axis=-1)
        return onehot.reshape(n, ho, wo, c, s, s).transpose(0, 1, 4, 2, 5, 3)

    def backward(self, dout):
        xb = self._blocks(self._x)
        mask = xb == self._out[:, :, None, :, None, :]
        if (mask.sum(axis=(2, 4)) > 1).any():
            mask = self._first_argmax_mask(xb)
        grad = np.where(mask, dout[:, :, None, :, None, :], 0.0)
        return grad.reshape(self._x.shape)


class Dense(Layer):
    """Fully connected layer; flattens its input."""

    kind = "fc"
    learnable = True

    def __init__(self, in_units: int, units: int, rng=None, scale: float = 0.01):
        super().__init__()
        self.in_units, self.units = in_units, units
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = rng.standard_normal((in_units, units)) * scale
        self.params["b"] = np.zeros(units)

    def output_shape(self, shape):
        if int(np.prod(shape)) != self.in_units:
            raise ShapeError(f"fc expects {self.in_units} inputs, got shape {shape}")
        return (self.units,)

    def forward(self, x, train=True):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_units:
            raise ShapeError(f"fc expects {self.in_units} inputs, got {flat.shape[1]}")
        if train:
            self._x, self._in_shape = flat, x.shape
        return _check_finite(flat @ self.params["W"] + self.params["b"], "fc")

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return (dout @ self.params["W"].T).reshape(self._in_shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
