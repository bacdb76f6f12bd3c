"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ShapeMismatch, Tensor


@dataclass
class OptimizerState:
    lr: float = 5e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(state: OptimizerState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None]) -> None:
    """Update ``params`` in place.

    Each parameter first shrinks by ``1 - lr * weight_decay``, then moves by
    the bias-corrected Adam direction. A ``None`` gradient counts as zero.

    Raises:
        ShapeMismatch: If a gradient or stored moment disagrees with its
            parameter's shape.
    """
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeMismatch("optimizer state was built for a different parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape or (g is not None and g.shape != p.shape):
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {None if g is None else g.shape} vs moment {m.shape}")
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        if g is None:
            g = np.zeros_like(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class AdamW:
    """Convenience wrapper binding an :class:`OptimizerState` to tensors."""

    def __init__(self, params: Sequence[Tensor], state: OptimizerState | None = None, **kwargs) -> None:
        self.params = list(params)
        self.state = state if state is not None else OptimizerState(**kwargs)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adamw_step(self.state, [p.data for p in self.params], [p.grad for p in self.params])
