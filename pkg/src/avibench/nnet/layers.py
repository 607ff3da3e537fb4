"""Layer specs with their forward and backward passes.

Activations are laid out NHWC inside the network and (N, D) after
Flatten; shapes reported by ``output_shape`` use the (C, H, W) convention.  ``forward`` returns ``(output, cache)``; ``backward`` takes the
upstream gradient and that cache and returns ``(dx, {param: grad})``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


class Layer:
    kind = "layer"

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def param_shapes(self, in_shape):
        return {}

    def fans(self, in_shape):
        return None

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, dy, cache, params):
        raise NotImplementedError

    def to_dict(self) -> dict:
        d = {"type": self.kind}
        d.update(self.__dict__)
        return d


@dataclass
class Conv2D(Layer):
    filters: int
    kernel: int = 3
    stride: int = 1
    kind = "conv2d"

    def __post_init__(self):
        if self.filters < 1:
            raise ShapeError("Conv2D needs filters >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ShapeError(f"Conv2D kernel must be odd, got {self.kernel}")
        if self.stride < 1:
            raise ShapeError("Conv2D stride must be >= 1")

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"Conv2D expects (C, H, W) input, got {in_shape}")
        _, h, w = in_shape
        s = self.stride
        # "same" zero padding
        return self.filters, (h - 1) // s + 1, (w - 1) // s + 1

    def param_shapes(self, in_shape):
        c = in_shape[0]
        return {"W": (self.kernel, self.kernel, c, self.filters), "b": (self.filters,)}

    def fans(self, in_shape):
        k2 = self.kernel * self.kernel
        return in_shape[0] * k2, self.filters * k2

    def forward(self, x, params):
        W, b = params["W"], params["b"]
        n = x.shape[0]
        cols, ho, wo = _im2col(x, self.kernel, self.stride)
        out = cols @ W.reshape(-1, self.filters) + b
        return out.reshape(n, ho, wo, self.filters), (x.shape, cols)

    def backward(self, dy, cache, params):
        (n, h, w, c), cols = cache
        W = params["W"]
        k, s, p = self.kernel, self.stride, self.kernel // 2
        ho, wo, f = dy.shape[1:]
        d2 = dy.reshape(-1, f)
        grads = {"W": (cols.T @ d2).reshape(W.shape), "b": d2.sum(axis=0)}
        if s == 1:
            # input gradient = same-padded conv of dy with the flipped, transposed kernel
            flipped = W[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, c)
            dcols, _, _ = _im2col(dy, k, 1)
            return (dcols @ flipped).reshape(n, h, w, c), grads
        dcols = (d2 @ W.reshape(-1, f).T).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dcols[:, :, :, i, j, :]
        return dxp[:, p:p + h, p:p + w, :], grads


def _im2col(x, k, s):
    """Same-padded patches of NHWC ``x``: rows (n, row, col), columns (ki, kj, c)."""
    n, h, w, c = x.shape
    p = k // 2
    ho, wo = (h - 1) // s + 1, (w - 1) // s + 1
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s][:, :ho, :wo]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c), ho, wo


@dataclass
class ReLU(Layer):
    kind = "relu"

    def forward(self, x, params):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache, params):
        return dy * cache, {}


@dataclass
class MaxPool(Layer):
    size: int = 2
    kind = "maxpool"

    def __post_init__(self):
        if self.size < 1:
            raise ShapeError("MaxPool size must be >= 1")

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"MaxPool expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        if h < self.size or w < self.size:
            raise ShapeError(f"MaxPool({self.size}) would shrink {in_shape} below 1")
        return c, h // self.size, w // self.size

    def forward(self, x, params):
        n, h, w, c = x.shape
        s = self.size
        ho, wo = h // s, w // s
        blocks = x[:, :ho * s, :wo * s].reshape(n, ho, s, wo, s, c)
        blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, s * s)
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    def backward(self, dy, cache, params):
        (n, h, w, c), idx = cache
        s = self.size
        ho, wo = dy.shape[1:3]
        d = np.zeros((n, ho, wo, c, s * s), dtype=dy.dtype)
        np.put_along_axis(d, idx[..., None], dy[..., None], axis=-1)
        d = d.reshape(n, ho, wo, c, s, s).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * s, wo * s, c)
        dx = np.zeros((n, h, w, c), dtype=dy.dtype)
        dx[:, :ho * s, :wo * s] = d
        return dx, {}


@dataclass
class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, params):
        return dy.reshape(cache), {}


@dataclass
class Dense(Layer):
    units: int
    kind = "dense"

    def __post_init__(self):
        if self.units < 1:
            raise ShapeError("Dense needs units >= 1")

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"Dense expects flat input, got {in_shape}; add Flatten")
        return (self.units,)

    def param_shapes(self, in_shape):
        return {"W": (in_shape[0], self.units), "b": (self.units,)}

    def fans(self, in_shape):
        return in_shape[0], self.units

    def forward(self, x, params):
        return x @ params["W"] + params["b"], x

    def backward(self, dy, cache, params):
        return dy @ params["W"].T, {"W": cache.T @ dy, "b": dy.sum(axis=0)}


@dataclass
class Softmax(Layer):
    kind = "softmax"

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"Softmax expects flat input, got {in_shape}")
        return in_shape

    def forward(self, x, params):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        return p, p

    def backward(self, dy, cache, params):
        p = cache
        return p * (dy - (dy * p).sum(axis=1, keepdims=True)), {}


LAYER_TYPES = {cls.kind: cls for cls in (Conv2D, ReLU, MaxPool, Flatten, Dense, Softmax)}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    kind = d.pop("type")
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise ShapeError(f"unknown layer type {kind!r}") from None
    return cls(**d)
