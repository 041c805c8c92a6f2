"""First-order optimizers over a ParamRegistry.

Both optimizers keep their state in the registry's slot store so that a
single registry can be driven by either, and state persists across steps.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .registry import ParamRegistry


class SgdNesterov:
    """SGD with Nesterov momentum.

    Update: buf = mu * buf + g; param -= lr * (g + mu * buf).
    With mu = 0 this reduces to a plain -lr * g step.
    """

    def __init__(self, registry: ParamRegistry, lr: float, momentum: float = 0.0):
        if lr < 0:
            raise ConfigError(f"negative learning rate {lr}")
        if momentum < 0:
            raise ConfigError(f"negative momentum {momentum}")
        self.registry = registry
        self.lr = float(lr)
        self.momentum = float(momentum)

    def step(self) -> None:
        mu = self.momentum
        for name, p in self.registry.trainable_items():
            if p.grad is None:
                continue
            g = p.grad
            if mu != 0.0:
                buf = self.registry.slot("sgd_nesterov", name, lambda: np.zeros_like(p.data))
                buf *= mu
                buf += g
                p.data -= self.lr * (g + mu * buf)
            else:
                p.data -= self.lr * g


class Adagrad:
    """AdaGrad with a configurable initial accumulator.

    Update: acc += g^2; param -= lr * g / sqrt(acc). A zero gradient leaves
    both the parameter and the accumulator unchanged.
    """

    def __init__(self, registry: ParamRegistry, lr: float,
                 initial_accumulator: float = 0.1):
        if lr < 0:
            raise ConfigError(f"negative learning rate {lr}")
        if initial_accumulator <= 0:
            raise ConfigError(
                f"initial accumulator must be positive, got {initial_accumulator}")
        self.registry = registry
        self.lr = float(lr)
        self.initial_accumulator = float(initial_accumulator)

    def step(self) -> None:
        for name, p in self.registry.trainable_items():
            if p.grad is None:
                continue
            g = p.grad
            acc = self.registry.slot(
                "adagrad", name,
                lambda: np.full_like(p.data, self.initial_accumulator))
            # in-place updates; g doubles as scratch space afterwards
            scratch = g * g
            acc += scratch
            np.sqrt(acc, out=scratch)
            np.divide(g, scratch, out=scratch)
            scratch *= self.lr
            p.data -= scratch


def optimizer_step(kind: str, registry: ParamRegistry, **hyperparams) -> None:
    """One-shot functional form; prefer holding an optimizer object in loops."""
    if kind == "sgd_nesterov":
        SgdNesterov(registry, **hyperparams).step()
    elif kind == "adagrad":
        Adagrad(registry, **hyperparams).step()
    else:
        raise ConfigError(f"unknown optimizer kind {kind!r}")
