"""Adam with decoupled weight decay, tracked per named parameter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    """Non-finite gradients or otherwise unusable optimizer input."""


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update over exactly the parameters named in ``grads``.

    Parameters absent from ``grads`` are left bitwise untouched and their
    moment buffers do not advance. Weight decay is decoupled (applied
    directly to the parameter, not mixed into the moments).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}")
        if g.shape != params[name].shape:
            raise TrainingError(
                f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}"
            )
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
        v = state.v.get(name)
        if v is None:
            v = np.zeros_like(p)
            state.v[name] = v
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        update = state.lr * mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay:
            update = update + state.lr * state.weight_decay * p
        params[name] = (p - update).astype(p.dtype, copy=False)
    return params, state
