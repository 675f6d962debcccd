"""AdamW with named parameter groups and a linear warmup/decay schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def linear_schedule(step: int, total: int, warmup_ratio: float) -> float:
    """Multiplier for 0-based ``step``: ramps up over the warmup, then decays linearly.

    Every step in ``[0, total)`` gets a positive factor; the peak is 1.
    """
    warmup = int(math.ceil(warmup_ratio * total))
    if step < warmup:
        return (step + 1) / warmup
    return (total - step) / max(1, total - warmup)


@dataclass
class ParamGroup:
    names: list[str]
    lr: float
    weight_decay: float = 0.0


class AdamW:
    """Decoupled weight decay (``p -= lr * wd * p``) followed by the Adam step.

    Moments are kept in float64; updated values are written back into the
    live arrays in their own dtype.
    """

    def __init__(self, params: dict[str, np.ndarray], groups: list[ParamGroup],
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.groups = groups
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        seen = [n for g in groups for n in g.names]
        if len(seen) != len(set(seen)) or set(seen) - set(params):
            raise ValueError("parameter groups must partition known parameters")
        self.m = {n: np.zeros(params[n].shape) for n in seen}
        self.v = {n: np.zeros(params[n].shape) for n in seen}

    def step(self, grads: dict[str, np.ndarray], lr_scale: float = 1.0) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for group in self.groups:
            lr = group.lr * lr_scale
            for name in group.names:
                g = np.asarray(grads[name], dtype=np.float64)
                m = self.m[name]
                v = self.v[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p = self.params[name]
                value = p.astype(np.float64)
                if group.weight_decay:
                    value = value - lr * group.weight_decay * value
                value = value - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                p[...] = value
