from __future__ import annotations

import dataclasses
import math

import numpy as np

__all__ = [
    "Adam",
    "AdamState",
    "adam_step",
    "cosine_lr",
]


def cosine_lr(step, total, lr_init=8e-4, lr_final=1e-6):
    """Cosine annealing from ``lr_init`` at step 0 to ``lr_final`` at ``total``, flat afterwards"""
    if total <= 0 or step >= total:
        return lr_final
    step = max(step, 0)
    return lr_final + 0.5 * (lr_init - lr_final) * (1 + math.cos(math.pi * step / total))


@dataclasses.dataclass
class AdamState:
    step: int = 0
    m: dict = dataclasses.field(default_factory=dict)
    v: dict = dataclasses.field(default_factory=dict)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One bias-corrected Adam update in place.

    ``params`` maps names to parameters, ``grads`` names to gradient arrays;
    parameters without a gradient keep their value and moments.
    """
    state.step += 1
    correction1 = 1 - beta1**state.step
    correction2 = 1 - beta2**state.step
    for name, parameter in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        grad = np.asarray(grad, dtype=parameter.dtype)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(parameter.data)
            v = np.zeros_like(parameter.data)
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        parameter.assign(parameter.data - update)
    return state


class Adam:
    def __init__(self, named_parameters, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_parameters)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, grads, lr):
        adam_step(self.params, grads, self.state, lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def named_grads(self, leaf_grads):
        """Translate a tape's ``{tensor: grad}`` map into ``{name: grad}``"""
        return {name: leaf_grads[parameter] for name, parameter in self.params.items() if parameter in leaf_grads}
