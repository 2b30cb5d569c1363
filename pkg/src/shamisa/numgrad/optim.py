"""SGD with momentum, weight decay and cosine annealing warm restarts."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SGDConfig:
    lr: float = 1.5e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    min_lr_factor: float = 0.01
    period: int = 1000
    period_mult: int = 2


def cosine_lr(step, cfg):
    """Learning rate at an integer step under warm restarts.

    Each period anneals from the base lr (first step) to the minimum lr
    (last step) along a cosine, then restarts with the period scaled by
    `period_mult`.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    span = cfg.period
    s = step
    while s >= span:
        s -= span
        span *= cfg.period_mult
    lo = cfg.lr * cfg.min_lr_factor
    if span == 1:
        return cfg.lr
    return lo + 0.5 * (cfg.lr - lo) * (1.0 + math.cos(math.pi * s / (span - 1)))


def init_state(params):
    return {
        "velocity": {k: np.zeros_like(v) for k, v in params.items()},
        "step": 0,
    }


def sgd_step(params, grads, state, cfg):
    """One update: v <- mu*v + g + wd*p ; p <- p - lr*v.

    Returns fresh (params, state) maps; inputs are left untouched.
    """
    lr = cosine_lr(state["step"], cfg)
    new_params = {}
    new_vel = {}
    for name, p in params.items():
        if name not in grads:
            raise KeyError(f"missing gradient for parameter {name!r}")
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise ArithmeticError(f"non-finite gradient for parameter {name!r}")
        v = cfg.momentum * state["velocity"][name] + g + cfg.weight_decay * p
        new_params[name] = p - lr * v
        new_vel[name] = v
    return new_params, {"velocity": new_vel, "step": state["step"] + 1}
