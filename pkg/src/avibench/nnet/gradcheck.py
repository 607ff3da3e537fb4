from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import MaxPool, ReLU
from .model import Model, Params, loss_and_grads, weighted_cross_entropy


def relative_error(analytic, numeric, floor: float = 1e-8):
    return np.abs(analytic - numeric) / np.maximum(floor, np.abs(analytic) + np.abs(numeric))


def _pattern(model: Model, params: Params, x) -> tuple[float, list[np.ndarray]]:
    probs, caches = model.forward(params, x, keep_cache=True)
    masks = [c if isinstance(layer, ReLU) else c[1]
             for layer, c in zip(model.layers, caches) if isinstance(layer, (ReLU, MaxPool))]
    return probs, masks


def numerical_gradient(model: Model, params: Params, x, y, weights, name: str, index,
                       eps: float = 1e-4) -> tuple[float, bool]:
    """Central difference for one coordinate.

    Also reports whether the +/- eps evaluations fall on different sides of a
    ReLU or max-pool kink, in which case the difference is not a derivative.
    """
    p = params[name]
    old = p[index]
    p[index] = old + eps
    probs_up, pat_up = _pattern(model, params, x)
    p[index] = old - eps
    probs_down, pat_down = _pattern(model, params, x)
    p[index] = old
    crossed = any(not np.array_equal(a, b) for a, b in zip(pat_up, pat_down))
    up = weighted_cross_entropy(probs_up, y, weights)
    down = weighted_cross_entropy(probs_down, y, weights)
    return (up - down) / (2 * eps), crossed


@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    skipped_kinks: int


def gradient_check(model: Model, params: Params, x, y, weights, eps: float = 1e-4,
                   max_coords: int | None = None, rng: np.random.Generator | None = None) -> GradCheck:
    """Compare backprop against central differences (parameters must be float64).

    Checks every coordinate, or ``max_coords`` random coordinates per tensor.
    Coordinates whose perturbation crosses a kink are skipped and counted.
    """
    _, grads = loss_and_grads(model, params, x, y, weights)
    rng = rng or np.random.default_rng(0)
    worst, checked, skipped = 0.0, 0, 0
    for name, p in params.items():
        flat = np.arange(p.size)
        if max_coords is not None and p.size > max_coords:
            flat = rng.choice(p.size, size=max_coords, replace=False)
        for f in flat:
            idx = np.unravel_index(f, p.shape)
            num, crossed = numerical_gradient(model, params, x, y, weights, name, idx, eps)
            if crossed:
                skipped += 1
                continue
            checked += 1
            worst = max(worst, float(relative_error(grads[name][idx], num)))
    return GradCheck(worst, checked, skipped)
