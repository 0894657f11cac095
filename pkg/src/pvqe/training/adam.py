from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import ParamStore, Tensor
from ..errors import InvalidInputError, TrainingDivergedError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 6e-5
    weight_decay: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: ParamStore, grads: dict, state: AdamState, cfg) -> None:
    """Bias-corrected Adam with decoupled weight decay, applied in place.

    ``cfg`` needs ``lr`` and ``weight_decay`` (beta1/beta2/eps default to
    0.9/0.999/1e-8). Every parameter is replaced by a new Tensor; names
    without a gradient only decay.
    """
    b1 = getattr(cfg, "beta1", 0.9)
    b2 = getattr(cfg, "beta2", 0.999)
    eps = getattr(cfg, "eps", 1e-8)
    lr, wd = cfg.lr, cfg.weight_decay
    for name, g in grads.items():
        if name not in params:
            raise InvalidInputError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise InvalidInputError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for {name} at step {state.t + 1}")
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name in params:
        p = params[name]
        new = p.data - lr * wd * p.data
        g = grads.get(name)
        if g is not None:
            m = state.m.get(name)
            v = state.v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            state.m[name], state.v[name] = m, v
            new = new - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        params[name] = Tensor(new.astype(p.dtype), requires_grad=p.requires_grad)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients together so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if total > max_norm > 0:
        s = max_norm / total
        for k in grads:
            grads[k] = grads[k] * s
    return total
