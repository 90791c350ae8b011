"""RMSprop with L2 weight decay and the dev-driven halving schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    learning_rate: float = 8e-4
    rho: float = 0.99
    epsilon: float = 1e-8
    step: int = 0
    accumulators: dict = field(default_factory=dict)


def rmsprop_step(state: OptimizerState, params: dict, grads: dict, l2: float = 0.0, decay=lambda name: True):
    """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> array).

    ``acc <- rho acc + (1 - rho) g^2`` then ``p <- p - lr g / (sqrt(acc) + eps)``,
    where ``g`` already includes the L2 term for decayed parameters.
    """
    for name, p in params.items():
        g = grads[name]
        if l2 and decay(name):
            g = g + l2 * p.data
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros_like(p.data)
        acc *= state.rho
        acc += (1.0 - state.rho) * g * g
        p.data -= state.learning_rate * g / (np.sqrt(acc) + state.epsilon)
    state.step += 1
    return state


def halvings(history, patience: int = 1) -> int:
    """Number of halvings triggered by a lower-is-better dev metric history."""
    count, stall = 0, 0
    best = None
    for value in history:
        if best is None or value < best:
            best, stall = value, 0
            continue
        stall += 1
        if stall >= patience:
            count, stall = count + 1, 0
    return count


def lr_schedule_update(schedule, history) -> float:
    """Learning rate implied by ``history``; halves on every stalled ``patience`` window."""
    if not len(history):
        raise ValueError("dev metric history is empty")
    k = halvings(history, schedule.patience)
    return schedule.learning_rate * schedule.halving_factor ** k
