"""MSE objective and the Adam optimizer over a flat parameter store."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """(mean squared error, gradient w.r.t. pred)."""
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: dims differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = diff * np.asarray(2.0 / diff.size, dtype=diff.dtype)
    return loss, grad


@dataclass
class AdamState:
    """First/second moment estimates mirroring the parameter store."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   step=0)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, in place on params and state."""
    if set(params) != set(grads) or set(params) != set(state.m):
        missing = set(params) ^ set(grads) | set(params) ^ set(state.m)
        raise ValueError(f"adam_step: key sets differ (e.g. {sorted(missing)[:3]})")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for key in params:
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        params[key] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
