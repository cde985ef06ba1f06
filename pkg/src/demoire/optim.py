"""AdamW with decoupled weight decay and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["OptimizerState", "LrSchedule", "adamw_step", "cosine_lr", "AdamW"]


@dataclass
class OptimizerState:
    """Moment buffers and hyperparameters for AdamW.

    ``m`` and ``v`` align index-for-index with the parameter list that the
    state was created for; ``step`` counts completed updates.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


@dataclass
class LrSchedule:
    lr_init: float
    lr_min: float
    total_steps: int

    def __post_init__(self):
        if not self.lr_min < self.lr_init:
            raise ValueError("LrSchedule requires lr_min < lr_init")


def cosine_lr(step, sched):
    """Cosine annealing from lr_init at step 0 to lr_min at total_steps.

    Steps outside [0, total_steps] clamp to the nearest endpoint.
    """
    s = min(max(int(step), 0), sched.total_steps)
    frac = s / sched.total_steps if sched.total_steps > 0 else 1.0
    return sched.lr_min + 0.5 * (sched.lr_init - sched.lr_min) * (
        1.0 + math.cos(math.pi * frac))


def adamw_step(params, grads, state, lr):
    """One AdamW update over aligned parameter and gradient lists.

    Weight decay is decoupled: params shrink by lr*weight_decay before the
    bias-corrected moment update. Parameters with a None gradient are
    treated as zero-gradient (moments still decay).
    """
    if len(params) != len(grads):
        raise ValueError("params and grads must align")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if state.m[i].shape != p.data.shape:
            raise ValueError(
                f"moment shape {state.m[i].shape} does not match "
                f"parameter shape {p.data.shape}")
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError("gradient shape does not match parameter")
        state.m[i] *= state.beta1
        state.m[i] += (1.0 - state.beta1) * g
        state.v[i] *= state.beta2
        state.v[i] += (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


class AdamW:
    """Stateful wrapper binding an OptimizerState to a parameter list."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.state = OptimizerState(beta1=beta1, beta2=beta2, eps=eps,
                                    weight_decay=weight_decay)

    def step(self, lr):
        grads = [p.grad for p in self.params]
        adamw_step(self.params, grads, self.state, lr)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def grad_norm(self):
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return math.sqrt(total)
