"""From-scratch Adam with a multi-step learning-rate schedule.

Two parameter groups (grid, atmosphere) each own an AdamState; the schedule
drops both rates by a fixed factor at fractional milestones of the run.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

DEFAULT_MILESTONES = (1.0 / 3.0, 3.0 / 5.0, 4.0 / 5.0, 9.0 / 10.0)


@dataclass
class AdamState:
    """First/second-moment accumulators congruent to one parameter group."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: List[np.ndarray], **kwargs):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kwargs)


def adam_step(params: List[np.ndarray], grads: List[np.ndarray],
              state: AdamState, lr: float):
    """Standard bias-corrected Adam update, applied in place."""
    if lr < 0:
        raise ValueError("lr must be nonnegative")
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient/state count mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise RuntimeError("diverged")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("parameter/gradient shape mismatch")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g ** 2
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class LrSchedule:
    """Per-group base rates decayed at fractional milestones of the run."""

    lr_grid: float = 1e-2
    lr_atmo: float = 3e-3
    milestones: Tuple[float, ...] = DEFAULT_MILESTONES
    decay: float = 0.33

    def validate(self):
        if self.lr_grid <= 0 or self.lr_atmo <= 0:
            raise ValueError("base learning rates must be positive")
        if not (0.0 < self.decay < 1.0):
            raise ValueError("decay must be in (0, 1)")
        ms = list(self.milestones)
        if ms != sorted(ms) or len(set(ms)) != len(ms) or \
                any(not 0.0 < f < 1.0 for f in ms):
            raise ValueError("milestones must be strictly increasing in (0, 1)")


def lr_at(schedule: LrSchedule, iteration: int, total_iterations: int):
    """(grid lr, atmosphere lr) at an iteration: base * decay^passed."""
    if not 0 <= iteration < total_iterations:
        raise ValueError("iteration out of range")
    milestone_iters = [int(round(f * total_iterations)) for f in schedule.milestones]
    passed = sum(1 for mi in milestone_iters if iteration >= mi)
    factor = schedule.decay ** passed
    return schedule.lr_grid * factor, schedule.lr_atmo * factor
