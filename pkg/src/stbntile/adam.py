"""Adam optimizer state for dense coordinate fields.

Update rule per step t with gradient g:
    m = b1*m + (1-b1)*g          v = b2*v + (1-b2)*g^2
    mh = m/(1-b1^t)              vh = v/(1-b2^t)
    x -= lr * mh / (sqrt(vh) + eps)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape))


def adam_update(state: AdamState, grad: np.ndarray, lr: float,
                beta1: float, beta2: float, eps: float) -> np.ndarray:
    """Advance the state one step and return the additive parameter delta."""
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mh = state.m / (1.0 - beta1 ** state.step)
    vh = state.v / (1.0 - beta2 ** state.step)
    return -lr * mh / (np.sqrt(vh) + eps)
