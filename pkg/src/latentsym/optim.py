"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState) -> None:
    """In-place Adam update of ``params``; ``None`` gradients count as zero."""
    if state.lr <= 0:
        raise ValueError(f"learning rate must be positive, got {state.lr}")
    if len(params) != len(grads):
        raise ValueError("one gradient per parameter expected")
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    grads = [np.zeros(p.shape) if g is None else g for p, g in zip(params, grads)]
    for p, g, m in zip(params, grads, state.m):
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise FloatingPointError(
                f"non-finite gradient for parameter {p.name or p.shape}: {bad} bad entries at step {state.step + 1}"
            )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)
