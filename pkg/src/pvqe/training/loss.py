"""Complex compressed MSE between a target and an estimated spectrogram."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, as_tensor, record
from ..errors import InvalidConfigError, InvalidInputError


@dataclass(frozen=True)
class LossConfig:
    c: float = 0.3      # magnitude compression exponent
    beta: float = 0.7   # weight of the complex (phase-aware) term

    def __post_init__(self):
        if not 0.0 < self.c <= 1.0:
            raise InvalidConfigError("loss exponent c must lie in (0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidConfigError("beta must lie in [0, 1]")


def _as_reim(x) -> np.ndarray:
    """Complex (..., T, F) -> real (..., 2, T, F)."""
    x = np.asarray(x)
    return np.stack([x.real, x.imag], axis=-3)


def compressed_mse_loss(target, estimate, cfg: LossConfig = LossConfig()) -> Tensor:
    """L = (1 - beta) * mean(( |S|^c - |S'|^c )^2) + beta * mean(| S_c - S'_c |^2)

    where X_c = |X|^c * exp(j * angle X) and zero bins compress to zero.

    ``target`` is a complex array (..., T, F). ``estimate`` is either a
    complex array of the same shape or a real Tensor (..., 2, T, F) holding
    (re, im); gradients flow into the latter.
    """
    s = _as_reim(target) if np.iscomplexobj(target) else np.asarray(target)
    est = as_tensor(_as_reim(estimate)) if np.iscomplexobj(estimate) else as_tensor(estimate)
    if s.shape != est.shape:
        raise InvalidInputError(f"target {s.shape} and estimate {est.shape} differ in shape")
    c, beta = cfg.c, cfg.beta
    s = s.astype(np.float64)
    e = est.data.astype(np.float64)

    def comp(x):
        m = np.sqrt(x[..., 0, :, :] ** 2 + x[..., 1, :, :] ** 2)
        nz = m > 0
        scale = np.zeros_like(m)
        scale[nz] = m[nz] ** (c - 1.0)
        return m, nz, scale

    ms, _, ss = comp(s)
    me, nze, se = comp(e)
    sc = s * ss[..., None, :, :]
    ec = e * se[..., None, :, :]
    msc = ms ** c
    mec = np.where(nze, me, 0.0) ** c
    n = ms.size
    diff_mag = msc - mec
    diff_c = ec - sc
    loss = (1.0 - beta) * np.sum(diff_mag ** 2) / n + beta * np.sum(diff_c ** 2) / n

    def vjp(g):
        gc = 2.0 * beta / n * diff_c                  # d/d(estimate compressed)
        gm = -2.0 * (1.0 - beta) / n * diff_mag       # d/d(|estimate|^c)
        safe = np.where(nze, me, 1.0)
        u = e / safe[..., None, :, :]
        udotg = (u * gc).sum(axis=-3, keepdims=True)
        grad = se[..., None, :, :] * (gc + (c - 1.0) * u * udotg + c * gm[..., None, :, :] * u)
        grad = np.where(nze[..., None, :, :], grad, 0.0)
        return (float(g) * grad.astype(est.dtype),)
    return record(np.asarray(loss, dtype=est.dtype), (est,), vjp)
