"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import DiffArray


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def adam_step(state: AdamState, params: Sequence[DiffArray], grads: Sequence[np.ndarray] | None = None,
              lr: float | None = None) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``grads`` defaults to each parameter's ``.grad``. ``lr`` overrides the
    state's learning rate for this step only (used by schedules).
    """
    if grads is None:
        grads = [p.grad for p in params]
    for i, g in enumerate(grads):
        if g is None:
            raise ValueError(f"adam_step: parameter {i} has no gradient")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.values) for p in params]
        state.second_moment = [np.zeros_like(p.values) for p in params]
    if len(state.first_moment) != len(params):
        raise ValueError("adam_step: parameter list changed since the state was created")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    alpha = state.learning_rate if lr is None else lr
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if m.shape != p.values.shape:
            raise ValueError(f"adam_step: moment shape {m.shape} != parameter shape {p.values.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.values -= alpha * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return state


def clip_grad_norm(params: Sequence[DiffArray], max_norm: float = 5.0) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total
