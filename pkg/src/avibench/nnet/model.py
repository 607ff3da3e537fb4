from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ShapeError
from .layers import Dense, Layer, Softmax, layer_from_dict

Params = dict[str, np.ndarray]


def glorot_init(fan_in: int, fan_out: int, seed, shape: Sequence[int] | None = None,
                dtype=np.float64) -> np.ndarray:
    """Uniform Glorot/Xavier draw on [-L, L], L = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = tuple(shape) if shape is not None else (fan_in, fan_out)
    return np.random.default_rng(seed).uniform(-limit, limit, size=shape).astype(dtype)


@dataclass(frozen=True)
class AdamSpec:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    name = "adam"


@dataclass(frozen=True)
class SGDSpec:
    lr: float = 1e-2
    momentum: float = 0.9
    name = "sgd"


def optimizer_from_dict(d: dict):
    d = dict(d)
    name = d.pop("name", "adam")
    if name == "adam":
        return AdamSpec(**d)
    if name == "sgd":
        return SGDSpec(**d)
    raise ShapeError(f"unknown optimizer {name!r}")


def optimizer_to_dict(opt) -> dict:
    d = {"name": opt.name}
    d.update(opt.__dict__)
    return d


@dataclass
class ModelConfig:
    layers: list[Layer]
    optimizer: AdamSpec | SGDSpec = field(default_factory=AdamSpec)
    init_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "layers": [layer.to_dict() for layer in self.layers],
            "optimizer": optimizer_to_dict(self.optimizer),
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            [layer_from_dict(x) for x in d["layers"]],
            optimizer_from_dict(d.get("optimizer", {})),
            int(d.get("init_seed", 0)),
        )


class Model:
    """A sequential network bound to a fixed per-sample input shape."""

    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int]):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        if len(self.layers) < 2 or not isinstance(self.layers[-1], Softmax) \
                or not isinstance(self.layers[-2], Dense):
            raise ShapeError("network must end with Dense(K) -> Softmax")
        self.n_classes = self.layers[-2].units

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, shape in layer.param_shapes(self.shapes[i]).items():
                out[f"{i}.{name}"] = tuple(shape)
        return out

    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def init_params(self, seed: int, dtype=np.float64) -> Params:
        params: Params = {}
        for i, layer in enumerate(self.layers):
            shapes = layer.param_shapes(self.shapes[i])
            if not shapes:
                continue
            fan_in, fan_out = layer.fans(self.shapes[i])
            params[f"{i}.W"] = glorot_init(fan_in, fan_out, (seed, i), shapes["W"], dtype)
            params[f"{i}.b"] = np.zeros(shapes["b"], dtype=dtype)
        return params

    def _layer_params(self, params: Params, i: int) -> dict[str, np.ndarray]:
        prefix = f"{i}."
        return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}

    def check_batch(self, x: np.ndarray) -> None:
        if x.ndim != len(self.input_shape) + 1 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"layer 0 ({self.layers[0].kind}): batch shape {x.shape[1:]} does not match "
                f"model input {self.input_shape}")

    def forward(self, params: Params, x: np.ndarray, keep_cache: bool = False):
        self.check_batch(x)
        if x.ndim == 4:
            x = x.transpose(0, 2, 3, 1)
        caches = []
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(x, self._layer_params(params, i))
            if keep_cache:
                caches.append(cache)
        return (x, caches) if keep_cache else x

    def backward(self, params: Params, caches, dprobs: np.ndarray) -> Params:
        grads: Params = {}
        d = dprobs
        for i in range(len(self.layers) - 1, -1, -1):
            d, g = self.layers[i].backward(d, caches[i], self._layer_params(params, i))
            for name, value in g.items():
                grads[f"{i}.{name}"] = value
        return grads

    def predict(self, params: Params, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(params, x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)


def as_index_labels(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape[1] != k:
            raise ShapeError(f"one-hot labels have {labels.shape[1]} columns, expected {k}")
        return labels.argmax(axis=1)
    return labels.astype(np.int64)


def weighted_cross_entropy(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Mean over the batch of ``w[y] * -log(max(p[y], 1e-12))``."""
    y = as_index_labels(labels, probs.shape[1])
    py = np.maximum(probs[np.arange(len(y)), y], 1e-12)
    return float(np.sum(np.asarray(weights, dtype=np.float64)[y] * -np.log(py)) / len(y))


def cross_entropy_grad(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient of ``weighted_cross_entropy`` with respect to ``probs``."""
    y = as_index_labels(labels, probs.shape[1])
    rows = np.arange(len(y))
    py = probs[rows, y]
    d = np.zeros_like(probs)
    w = np.asarray(weights, dtype=probs.dtype)[y]
    d[rows, y] = np.where(py > 1e-12, -w / (len(y) * np.maximum(py, 1e-12)), 0.0)
    return d


def loss_and_grads(model: Model, params: Params, x: np.ndarray, labels: np.ndarray,
                   weights: np.ndarray) -> tuple[float, Params]:
    probs, caches = model.forward(params, x, keep_cache=True)
    loss = weighted_cross_entropy(probs, labels, weights)
    grads = model.backward(params, caches, cross_entropy_grad(probs, labels, weights))
    return loss, grads


def forward(model: Model, params: Params, batch: np.ndarray) -> np.ndarray:
    return model.forward(params, batch)


def backward(model: Model, params: Params, batch: np.ndarray, labels: np.ndarray,
             weights: np.ndarray) -> Params:
    return loss_and_grads(model, params, batch, labels, weights)[1]
