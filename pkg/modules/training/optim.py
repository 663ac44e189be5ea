"""SGD with momentum and weight decay, and the multistep / cosine-with-warmup schedules."""
import math
from typing import AbstractSet, Dict, Optional

import numpy as np

from core.config import CosineSchedule, MultiStepSchedule, TrainConfig
from core.errors import ShapeError
from core.models import OptimizerState


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimizerState,
             cfg: TrainConfig, lr: Optional[float] = None, no_decay: AbstractSet[str] = frozenset(),
             frozen: AbstractSet[str] = frozenset()) -> OptimizerState:
    """One in-place update: v = momentum * v + g + wd * p, then p -= lr * v.

    Names in ``no_decay`` skip weight decay; names in ``frozen`` are not touched.
    """
    lr = cfg.lr if lr is None else lr
    for name, param in params.items():
        if name in frozen:
            continue
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"{name}: gradient shape {grad.shape} != parameter shape {param.shape}")
        step = grad + cfg.weight_decay * param if cfg.weight_decay and name not in no_decay else grad
        buf = state.buffers.get(name)
        if buf is None:
            buf = state.buffers[name] = np.zeros_like(param)
        buf *= cfg.momentum
        buf += step
        param -= (lr * buf).astype(param.dtype, copy=False)
    state.step += 1
    return state


def lr_at(schedule, step: int, total_steps: int, base_lr: float = 1.0) -> float:
    if isinstance(schedule, MultiStepSchedule):
        passed = sum(1 for m in schedule.milestones if step >= m)
        return base_lr * schedule.gamma ** passed
    if isinstance(schedule, CosineSchedule):
        warmup = schedule.warmup_steps
        if warmup and step < warmup:
            return base_lr * step / warmup
        span = max(total_steps - warmup, 1)
        progress = min(max(step - warmup, 0) / span, 1.0)
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
    raise TypeError(f"unknown schedule {type(schedule).__name__}")
