"""Adam with bias correction, on plain arrays."""

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))


def adam_update(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    momentum: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One Adam step; returns the new parameter value and mutates state."""
    state.step += 1
    state.m = momentum * state.m + (1.0 - momentum) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - momentum**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)
