"""Adam with decoupled weight decay."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 5e-4
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, state):
    """Update ``params`` in place from their gradients, then zero the gradients.

    Weight decay is applied to the parameter directly (``theta -= lr * wd *
    theta``) before the bias-corrected moment update.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name or p.shape}")
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    elif len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    state.step += 1
    lr, b1, b2 = state.learning_rate, state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        if state.weight_decay:
            p.value -= lr * state.weight_decay * p.value
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.zero_grad()
    return params, state
