"""Adam updates and the one-cycle learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    """Per-parameter first/second moment accumulators plus a step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params, state: OptimState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One Adam update with bias correction, in place on the parameter data.

    `params` is any name -> Tensor mapping (a ParamStore or a subset view).
    Parameters whose grad is None are treated as zero-gradient and left alone.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (lr / corr1) * m / (np.sqrt(v / corr2) + eps)


def one_cycle_lr(step: int, total_steps: int, max_lr: float, warmup_frac: float = 0.3) -> float:
    """Linear ramp 0 -> max_lr over warmup_frac of the run, then linear decay to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_frac * total_steps
    if warm <= 0:
        return max_lr * (total_steps - step) / max(total_steps, 1)
    if step <= warm:
        return max_lr * step / warm
    return max_lr * (total_steps - step) / (total_steps - warm)
