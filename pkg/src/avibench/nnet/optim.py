from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import AdamSpec, SGDSpec


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    steps: dict[str, int] = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, in place.  Returns ``(params, state)``."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        state.steps[k] = state.steps.get(k, 0) + 1
    return params, state


class Adam:
    def __init__(self, spec: AdamSpec):
        self.spec = spec
        self.state = AdamState()

    @property
    def steps(self) -> dict[str, int]:
        return self.state.steps

    def step(self, params, grads) -> None:
        s = self.spec
        adam_step(params, grads, self.state, s.lr, s.beta1, s.beta2, s.eps)


class SGD:
    """Heavy-ball momentum: ``v = mu * v - lr * g; p += v``."""

    def __init__(self, spec: SGDSpec):
        self.spec = spec
        self.velocity: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def step(self, params, grads) -> None:
        for k, g in grads.items():
            v = self.velocity.get(k)
            if v is None:
                v = self.velocity[k] = np.zeros_like(params[k])
            v *= self.spec.momentum
            v -= self.spec.lr * g
            params[k] += v
            self.steps[k] = self.steps.get(k, 0) + 1


def make_optimizer(spec):
    if isinstance(spec, AdamSpec):
        return Adam(spec)
    if isinstance(spec, SGDSpec):
        return SGD(spec)
    raise TypeError(f"unsupported optimizer spec {spec!r}")
