from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParamTensor:
    """A trainable tensor with its accumulated gradient and momentum buffer."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)
    momentum_buffer: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float32)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum_buffer is None:
            self.momentum_buffer = np.zeros_like(self.value)
        if not (self.value.shape == self.grad.shape == self.momentum_buffer.shape):
            raise ValueError("value, grad and momentum_buffer must share one shape")

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        self.grad += g.astype(self.grad.dtype, copy=False)

    def zero_grad(self) -> None:
        self.grad.fill(0)


def sgd_step(params, lr: float, momentum: float = 0.9, weight_decay: float = 1e-4) -> None:
    """In-place SGD with momentum and L2 weight decay; zeroes the gradients."""
    for p in params:
        v = p.momentum_buffer
        v *= momentum
        v += p.grad
        if weight_decay:
            v += np.float32(weight_decay) * p.value
        p.value -= np.float32(lr) * v
        p.zero_grad()
