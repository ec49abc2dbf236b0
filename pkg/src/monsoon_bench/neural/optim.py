"""Adam with bias correction, written functionally over ModelParams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .layers import ModelParams


@dataclass(frozen=True)
class AdamConfig:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7


@dataclass(frozen=True, eq=False)
class AdamState:
    t: int
    m: tuple
    v: tuple

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        m = tuple({k: np.zeros_like(a) for k, a in w.items()} for w in params.weights)
        v = tuple({k: np.zeros_like(a) for k, a in w.items()} for w in params.weights)
        return cls(0, m, v)


def adam_step(params: ModelParams, grads, state: AdamState,
              config: AdamConfig = AdamConfig()) -> tuple[ModelParams, AdamState]:
    """One Adam update. Inputs are left untouched."""
    if len(grads) != len(params.weights):
        raise ShapeError("gradient list does not match the layer count")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_w, new_m, new_v = [], [], []
    for w, g, m, v in zip(params.weights, grads, state.m, state.v):
        lw, lm, lv = {}, {}, {}
        for k, a in w.items():
            gk = g[k]
            if gk.shape != a.shape:
                raise ShapeError(f"gradient {k} shape {gk.shape} != parameter shape {a.shape}")
            mk = b1 * m[k]
            mk += (1.0 - b1) * gk
            vk = gk * gk
            vk *= 1.0 - b2
            vk += b2 * v[k]
            denom = np.sqrt(vk / bc2)
            denom += config.epsilon
            upd = mk * (config.step_size / bc1)
            upd /= denom
            lw[k] = a - upd
            lm[k], lv[k] = mk, vk
        new_w.append(lw)
        new_m.append(lm)
        new_v.append(lv)
    return params.replace(new_w), AdamState(t, tuple(new_m), tuple(new_v))
