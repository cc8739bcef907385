"""
Adafactor optimizer and learning-rate schedules.

Second moments are factored into row/column statistics for matrices and kept
in full for vectors; updates are RMS-clipped before the optional first-moment
smoothing.
"""
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..autograd import GradientMap
from .modules import Parameter


def cosine_decay(base_lr: float, step: int, total_steps: int, warmup_steps: int = 0, final_ratio: float = 0.0) -> float:
    if warmup_steps and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return base_lr * (final_ratio + (1.0 - final_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress)))


def linear_decay(base_lr: float, step: int, total_steps: int, warmup_steps: int = 0, final_ratio: float = 0.0) -> float:
    if warmup_steps and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return base_lr * (1.0 - (1.0 - final_ratio) * progress)


def global_grad_norm(grads: GradientMap) -> float:
    return float(math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for _, g in grads.items())))


class Adafactor:
    def __init__(
        self,
        params: Sequence[Parameter],
        beta1: Optional[float] = 0.9,
        decay_rate: float = -0.8,
        eps: float = 1e-30,
        clip_threshold: float = 1.0,
        weight_decay: float = 0.0,
        max_grad_norm: Optional[float] = 1.0,
    ):
        self.params: List[Parameter] = [p for p in params if p.requires_grad]
        self.beta1 = beta1
        self.decay_rate = decay_rate
        self.eps = eps
        self.clip_threshold = clip_threshold
        self.weight_decay = weight_decay
        self.max_grad_norm = max_grad_norm
        self.step_count = 0
        self.state: Dict[int, Dict[str, np.ndarray]] = {}

    def _state_for(self, param: Parameter) -> Dict[str, np.ndarray]:
        key = id(param)
        if key not in self.state:
            data = param.data
            entry: Dict[str, np.ndarray] = {}
            if data.ndim >= 2:
                entry["row"] = np.zeros(data.shape[:-1], dtype=np.float64)
                entry["col"] = np.zeros(data.shape[:-2] + data.shape[-1:], dtype=np.float64)
            else:
                entry["full"] = np.zeros(data.shape, dtype=np.float64)
            if self.beta1 is not None:
                entry["momentum"] = np.zeros(data.shape, dtype=np.float64)
            self.state[key] = entry
        return self.state[key]

    def step(self, grads: GradientMap, lr: float) -> None:
        self.step_count += 1
        beta2 = 1.0 - self.step_count ** self.decay_rate
        scale = 1.0
        if self.max_grad_norm is not None:
            norm = global_grad_norm(grads)
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / (norm + 1e-12)

        for param in self.params:
            if param not in grads:
                continue
            grad = grads[param].astype(np.float64) * scale
            state = self._state_for(param)
            squared = grad * grad + self.eps
            if "full" in state:
                state["full"] = beta2 * state["full"] + (1.0 - beta2) * squared
                update = grad / np.sqrt(state["full"])
            else:
                state["row"] = beta2 * state["row"] + (1.0 - beta2) * squared.mean(axis=-1)
                state["col"] = beta2 * state["col"] + (1.0 - beta2) * squared.mean(axis=-2)
                row_factor = state["row"] / state["row"].mean(axis=-1, keepdims=True)
                update = grad / np.sqrt(row_factor[..., :, None] * state["col"][..., None, :])
            rms = math.sqrt(float((update * update).mean())) if update.size else 0.0
            update = update / max(1.0, rms / self.clip_threshold)
            if "momentum" in state:
                state["momentum"] = self.beta1 * state["momentum"] + (1.0 - self.beta1) * update
                update = state["momentum"]
            new_value = param.data.astype(np.float64)
            if self.weight_decay:
                new_value = new_value * (1.0 - self.weight_decay * lr)
            param.assign(new_value - lr * update)
