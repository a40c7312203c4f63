"""Adam optimizer and a central-difference gradient checker."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError, TrainingError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """One in-place Adam update of ``params`` (name -> Tensor) from ``grads`` (name -> array).

    Parameters missing from ``grads`` are left untouched (frozen). Returns the state.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def grad_check(loss_fn, params, epsilon=1e-6, samples_per_param=6, rng=None):
    """Max relative error between backprop and central differences.

    ``loss_fn(params)`` must return a scalar Tensor built from ``params``.
    A few random entries of each parameter are perturbed by +-epsilon; the error
    for each is |analytic - fd| / (|analytic| + |fd| + 1e-12).
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ConfigError("epsilon must lie in [1e-7, 1e-4]")
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params.values():
        p.grad = None
    loss_fn(params).backward()
    worst = 0.0
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        picks = rng.choice(p.data.size, size=min(samples_per_param, p.data.size), replace=False)
        for flat_i in picks:
            i = np.unravel_index(flat_i, p.data.shape)
            old = p.data[i]
            p.data[i] = old + epsilon
            up = loss_fn(params).item()
            p.data[i] = old - epsilon
            down = loss_fn(params).item()
            p.data[i] = old
            fd = (up - down) / (2 * epsilon)
            a = analytic[i]
            worst = max(worst, abs(a - fd) / (abs(a) + abs(fd) + 1e-12))
    for p in params.values():
        p.grad = None
    return worst
