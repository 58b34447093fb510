"""Optimizers and the training-rate schedule.

Adam (beta1=0.5, the adversarial-training convention) drives the translation
networks; SGD with momentum drives the re-identification backbone.  Both keep
per-parameter state keyed by the stable parameter names so checkpoints can
save and restore moments exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class LrSchedule:
    """Constant for ``constant_epochs``, then linear to exactly 0.

    lr(e) = base_lr                      for e < constant_epochs
    lr(e) = base_lr * (1 - (e - constant_epochs) / decay_epochs)  afterwards,
    clamped at 0; lr(constant_epochs + decay_epochs) == 0 exactly.
    """

    base_lr: float
    constant_epochs: int
    decay_epochs: int

    def __post_init__(self):
        if self.base_lr <= 0 or self.constant_epochs < 0 or self.decay_epochs < 1:
            raise ValueError("invalid schedule parameters")

    def lr(self, epoch: int) -> float:
        if epoch < self.constant_epochs:
            return self.base_lr
        t = (epoch - self.constant_epochs) / self.decay_epochs
        return max(self.base_lr * (1.0 - t), 0.0)


class Optimizer:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = dict(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        raise NotImplementedError

    def state(self) -> tuple[dict[str, np.ndarray], dict]:
        """(arrays to persist, JSON-able metadata)."""
        raise NotImplementedError

    def load_state(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        raise NotImplementedError


class Adam(Optimizer):
    def __init__(self, params, lr, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.values) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in self.params.items()}
        self.steps = {k: 0 for k in self.params}

    def step(self) -> None:
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.steps[name] += 1
            t = self.steps[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1**t)
            v_hat = self.v[name] / (1.0 - self.beta2**t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self):
        arrays = {}
        for name in self.params:
            arrays[f"{name}.m"] = self.m[name]
            arrays[f"{name}.v"] = self.v[name]
        meta = {"kind": "adam", "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "steps": dict(self.steps)}
        return arrays, meta

    def load_state(self, arrays, meta):
        self.beta1, self.beta2, self.eps = meta["beta1"], meta["beta2"], meta["eps"]
        self.steps = {k: int(v) for k, v in meta["steps"].items()}
        for name in self.params:
            self.m[name] = np.asarray(arrays[f"{name}.m"], dtype=np.float64)
            self.v[name] = np.asarray(arrays[f"{name}.v"], dtype=np.float64)


class SGD(Optimizer):
    def __init__(self, params, lr, momentum: float = 0.9):
        super().__init__(params, lr)
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(p.values) for k, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.velocity[name] = self.momentum * self.velocity[name] + g
            p.values -= self.lr * self.velocity[name]

    def state(self):
        arrays = {f"{name}.velocity": v for name, v in self.velocity.items()}
        return arrays, {"kind": "sgd", "momentum": self.momentum}

    def load_state(self, arrays, meta):
        self.momentum = meta["momentum"]
        for name in self.params:
            self.velocity[name] = np.asarray(arrays[f"{name}.velocity"], dtype=np.float64)
