from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from snds.autodiff.tensor import Parameter
from snds.errors import ConfigError


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay.

    Velocity follows ``v <- momentum * v + (grad + weight_decay * w)`` and the
    update is ``w <- w - lr * v``.  Gradients are left in place; call
    :meth:`zero_grad` explicitly.
    """

    def __init__(self, params: Iterable[Parameter], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        if lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {lr}", key="lr")
        if momentum < 0 or weight_decay < 0:
            raise ConfigError("momentum and weight_decay must be non-negative")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: dict[int, np.ndarray] = {}

    def add_params(self, params: Iterable[Parameter]) -> None:
        known = {p.uid for p in self.params}
        self.params.extend(p for p in params if p.uid not in known)

    def step(self, subset: Iterable[Parameter] | None = None) -> None:
        """Update every parameter, or only ``subset`` (others keep their velocity)."""
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}", key="lr")
        for p in self.params if subset is None else subset:
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            if self.momentum:
                v = self._velocity.get(p.uid)
                v = g.copy() if v is None else self.momentum * v + g
                self._velocity[p.uid] = v
            else:
                v = g
            p.data = p.data - self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def sgd_step(params: Iterable[Parameter], learning_rate: float, momentum: float = 0.0, weight_decay: float = 0.0,
             state: SGD | None = None) -> SGD:
    """Functional form of one SGD update; pass the returned state back in to keep momentum."""
    if state is None:
        state = SGD(params, learning_rate, momentum, weight_decay)
    else:
        state.lr, state.momentum, state.weight_decay = learning_rate, momentum, weight_decay
    state.step()
    return state


def cosine_rampdown(epoch: float, total_epochs: int, base_lr: float) -> float:
    if total_epochs <= 0:
        raise ConfigError("total_epochs must be positive", key="total_epochs")
    if not 0 <= epoch <= total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs}]", key="epoch")
    return base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0
