"""Differentiable primitives.

Every op takes Tensors (or array-likes) and returns a new Tensor. Layout
convention for feature maps is (batch, channels, time, freq); the batch axis
is optional wherever a single stream is natural.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidInputError
from .tensor import Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    return record(a.data * s, (a,), lambda g: (g * s,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return record(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def elu(x) -> Tensor:
    x = as_tensor(x)
    neg = x.data <= 0
    em1 = np.expm1(np.minimum(x.data, 0))
    y = np.where(neg, em1, x.data)
    return record(y, (x,), lambda g: (np.where(neg, g * (em1 + 1.0), g),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return record(y, (x,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return record(y, (x,), lambda g: (g * (1.0 - y * y),))


# ---------------------------------------------------------------- reductions

def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    y = x.data.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return record(np.asarray(y), (x,), vjp)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis), 1.0 / float(n))


# ---------------------------------------------------------------- structure

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return record(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                  lambda g: (g.transpose(inv),))


def index(x, idx) -> Tensor:
    x = as_tensor(x)

    def vjp(g):
        full = np.zeros_like(x.data)
        if _fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)
    return record(x.data[idx], (x,), vjp)


def _fancy(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(tensors, axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return record(np.concatenate([t.data for t in ts], axis=axis), ts,
                  lambda g: tuple(np.split(g, sizes, axis=axis)))


def pad_axis(x, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad one axis."""
    x = as_tensor(x)
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(before, before + x.shape[axis])
    sl = tuple(sl)
    return record(np.pad(x.data, widths), (x,), lambda g: (g[sl],))


def crop_axis(x, axis: int, length: int) -> Tensor:
    """Keep the first ``length`` entries along ``axis``."""
    sl = [slice(None)] * as_tensor(x).ndim
    sl[axis] = slice(0, length)
    return index(x, tuple(sl))


# ---------------------------------------------------------------- layers

def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise InvalidInputError(f"linear: input dim {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    y = x.data @ weight.data.T
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise InvalidInputError("linear: bias shape mismatch")
        y = y + bias.data
        inputs.append(bias)

    def vjp(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)
    return record(y, inputs, vjp)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance), then scale/shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gamma.data + beta.data

    def vjp(g):
        gh = g * gamma.data
        gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                     - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)
    return record(y, (x, gamma, beta), vjp)


def softmax(x) -> Tensor:
    x = as_tensor(x)
    y = _softmax(x.data)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
    return record(y, (x,), vjp)


def _softmax(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def conv2d_causal(x, weight, bias=None, stride_f: int = 1) -> Tensor:
    """2-D convolution, causal along time and 'same' along frequency.

    x: (C_in, T, F) or (B, C_in, T, F); weight: (C_out, C_in, k_t, k_f).
    Time is padded by k_t - 1 past frames, frequency by k_f // 2 each side;
    output frequency size is ceil(F / stride_f).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4 or xd.shape[1] != weight.shape[1]:
        raise InvalidInputError(f"conv2d_causal: input {x.shape} incompatible with weight {weight.shape}")
    c_out, c_in, kt, kf = weight.shape
    if kf % 2 == 0:
        raise InvalidInputError("conv2d_causal: frequency kernel must be odd")
    b, _, t, f = xd.shape
    inputs = [x, weight] + ([as_tensor(bias)] if bias is not None else [])
    if kt == 1 and kf == 1 and stride_f == 1:
        return _pointwise(x, xd, weight, inputs, squeeze)
    pf = kf // 2
    fo = -(-f // stride_f)
    xp = np.pad(xd, ((0, 0), (0, 0), (kt - 1, 0), (pf, pf)))
    win = sliding_window_view(xp, (kt, kf), axis=(2, 3))[:, :, :, ::stride_f]
    # (B, T, F', C_in, k_t, k_f)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * t * fo, c_in * kt * kf)
    wmat = weight.data.reshape(c_out, -1)
    y = cols @ wmat.T
    if bias is not None:
        y = y + inputs[2].data
    y = y.reshape(b, t, fo, c_out).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y[0] if squeeze else y)

    def vjp(g):
        g4 = g[None] if squeeze else g
        gm = g4.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (gm.T @ cols).reshape(weight.shape)
        dcols = (gm @ wmat).reshape(b, t, fo, c_in, kt, kf)
        # scatter back channels-last, then one transpose
        dxp = np.zeros((b, t + kt - 1, f + 2 * pf, c_in), dtype=dcols.dtype)
        for i in range(kt):
            for j in range(kf):
                dxp[:, i:i + t, j:j + stride_f * (fo - 1) + 1:stride_f] += dcols[..., i, j]
        gx = np.ascontiguousarray(dxp[:, kt - 1:, pf:pf + f].transpose(0, 3, 1, 2))
        gx = gx[0] if squeeze else gx
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0)
    return record(y, inputs, vjp)


def _pointwise(x, xd, weight, inputs, squeeze) -> Tensor:
    b, c_in, t, f = xd.shape
    c_out = weight.shape[0]
    w = weight.data.reshape(c_out, c_in)
    xm = xd.reshape(b, c_in, t * f)
    y = w @ xm
    if len(inputs) == 3:
        y = y + inputs[2].data[:, None]
    y = y.reshape(b, c_out, t, f)
    y = y[0] if squeeze else y

    def vjp(g):
        gm = (g[None] if squeeze else g).reshape(b, c_out, t * f)
        gw = np.einsum("bot,bct->oc", gm, xm, optimize=True).reshape(weight.shape)
        gx = (w.T @ gm).reshape(b, c_in, t, f)
        gx = gx[0] if squeeze else gx
        if len(inputs) == 2:
            return gx, gw
        return gx, gw, gm.sum(axis=(0, 2))
    return record(y, inputs, vjp)


def pixel_shuffle_freq(x, r: int) -> Tensor:
    """Move channel groups into frequency: out[c, t, f*r + j] = in[c*r + j, t, f]."""
    x = as_tensor(x)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    b, cr, t, f = xd.shape
    if cr % r:
        raise InvalidInputError(f"pixel_shuffle_freq: {cr} channels not divisible by r={r}")
    c = cr // r
    y = xd.reshape(b, c, r, t, f).transpose(0, 1, 3, 4, 2).reshape(b, c, t, f * r)
    y = np.ascontiguousarray(y[0] if squeeze else y)

    def vjp(g):
        g4 = g[None] if squeeze else g
        gx = g4.reshape(b, c, t, f, r).transpose(0, 1, 4, 2, 3).reshape(b, cr, t, f)
        return (gx[0] if squeeze else gx,)
    return record(y, (x,), vjp)


def pixel_unshuffle_freq(x: np.ndarray, r: int) -> np.ndarray:
    """Inverse of :func:`pixel_shuffle_freq` on plain arrays."""
    squeeze = x.ndim == 3
    xd = x[None] if squeeze else x
    b, c, t, fr = xd.shape
    y = xd.reshape(b, c, t, fr // r, r).transpose(0, 1, 4, 2, 3).reshape(b, c * r, t, fr // r)
    return y[0] if squeeze else y


def gru_sequence(x, h0, w_ih, w_hh, b_ih, b_hh, truncate: int | None = None) -> Tensor:
    """Run a GRU over time. x: (B, T, I), h0: (B, H) -> (B, T, H).

    Gate layout in the stacked weights is (reset, update, new). ``truncate``
    stops gradients flowing across every ``truncate``-th step boundary.
    """
    x, h0, w_ih, w_hh, b_ih, b_hh = map(as_tensor, (x, h0, w_ih, w_hh, b_ih, b_hh))
    b, t, _ = x.shape
    hid = w_hh.shape[1]
    if w_ih.shape[0] != 3 * hid or h0.shape != (b, hid):
        raise InvalidInputError("gru_sequence: parameter shapes inconsistent with hidden size")
    gx = x.data @ w_ih.data.T + b_ih.data
    dt = gx.dtype
    hs = np.empty((b, t, hid), dtype=dt)
    rs, zs, ns, ghn = (np.empty((b, t, hid), dtype=dt) for _ in range(4))
    h = h0.data.astype(dt)
    wt = w_hh.data.T
    for k in range(t):
        gh = h @ wt + b_hh.data
        r = _sigmoid(gx[:, k, :hid] + gh[:, :hid])
        z = _sigmoid(gx[:, k, hid:2 * hid] + gh[:, hid:2 * hid])
        n = np.tanh(gx[:, k, 2 * hid:] + r * gh[:, 2 * hid:])
        h = n + z * (h - n)
        rs[:, k], zs[:, k], ns[:, k], ghn[:, k], hs[:, k] = r, z, n, gh[:, 2 * hid:], h

    def vjp(g):
        dgx = np.empty_like(gx)
        dw_hh = np.zeros_like(w_hh.data)
        db_hh = np.zeros_like(b_hh.data)
        dh_next = np.zeros((b, hid), dtype=dt)
        for k in range(t - 1, -1, -1):
            if truncate and (k + 1) % truncate == 0:
                dh_next = np.zeros_like(dh_next)
            hp = hs[:, k - 1] if k > 0 else h0.data
            r, z, n = rs[:, k], zs[:, k], ns[:, k]
            dh = g[:, k] + dh_next
            dn = dh * (1.0 - z)
            dz = dh * (hp - n)
            dhp = dh * z
            da_n = dn * (1.0 - n * n)
            dr = da_n * ghn[:, k]
            da_r = dr * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
            dw_hh += dgh.T @ hp
            db_hh += dgh.sum(axis=0)
            dhp = dhp + dgh @ w_hh.data
            dgx[:, k] = np.concatenate([da_r, da_z, da_n], axis=1)
            dh_next = dhp
        flat = dgx.reshape(-1, 3 * hid)
        dx = dgx @ w_ih.data
        dw_ih = flat.T @ x.data.reshape(-1, x.shape[-1])
        return dx, dh_next, dw_ih, dw_hh, flat.sum(axis=0), db_hh
    return record(hs, (x, h0, w_ih, w_hh, b_ih, b_hh), vjp)


def attention_align(q, k, v, history: int) -> Tensor:
    """Causal soft alignment over the last ``history`` frames.

    q, k: (B, T, d); v: (B, T, D). For frame t the scores are
    q_t . k_{t-d} / sqrt(d) for delays d < min(history, t + 1); the output
    is the softmax-weighted sum of v_{t-d}.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    b, t, dim = q.shape
    nd = min(history, t)
    sc = 1.0 / np.sqrt(dim)
    scores = np.full((b, t, nd), -np.inf, dtype=q.dtype)
    for d in range(nd):
        scores[:, d:, d] = (q.data[:, d:] * k.data[:, :t - d]).sum(axis=-1) * sc
    w = _softmax(scores)
    out = np.zeros(v.shape, dtype=np.result_type(w, v.data))
    for d in range(nd):
        out[:, d:] += w[:, d:, d, None] * v.data[:, :t - d]

    def vjp(g):
        gw = np.zeros_like(w)
        gv = np.zeros_like(v.data)
        for d in range(nd):
            gw[:, d:, d] = (g[:, d:] * v.data[:, :t - d]).sum(axis=-1)
            gv[:, :t - d] += w[:, d:, d, None] * g[:, d:]
        gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True)) * sc
        gq = np.zeros_like(q.data)
        gk = np.zeros_like(k.data)
        for d in range(nd):
            gq[:, d:] += gs[:, d:, d, None] * k.data[:, :t - d]
            gk[:, :t - d] += gs[:, d:, d, None] * q.data[:, d:]
        return gq, gk, gv
    return record(out, (q, k, v), vjp)


def complex_conv_mask(coeffs, x_re: np.ndarray, x_im: np.ndarray, taps_t: int = 2, taps_f: int = 3) -> Tensor:
    """Apply per-bin complex filters over a causal time-frequency neighbourhood.

    coeffs: (B, 2 * taps_t * taps_f, T, F), real parts first then imaginary
    parts, tap index ``dt * taps_f + (df + taps_f // 2)``. x_re / x_im:
    (B, T, F) constant input spectrum. Returns (B, 2, T, F) = (re, im) of

        out[t, f] = sum_{dt, df} M[dt, df, t, f] * X[t - dt, f + df]

    with X zero outside the valid range.
    """
    coeffs = as_tensor(coeffs)
    b, ch, t, f = coeffs.shape
    ntap = taps_t * taps_f
    if ch != 2 * ntap or x_re.shape != (b, t, f):
        raise InvalidInputError("complex_conv_mask: coefficient / spectrum shapes disagree")
    half = taps_f // 2
    xr = np.pad(x_re, ((0, 0), (taps_t - 1, 0), (half, half)))
    xi = np.pad(x_im, ((0, 0), (taps_t - 1, 0), (half, half)))
    shifted = []
    for dt in range(taps_t):
        for j in range(taps_f):
            ts = slice(taps_t - 1 - dt, taps_t - 1 - dt + t)
            shifted.append((xr[:, ts, j:j + f], xi[:, ts, j:j + f]))
    mr, mi = coeffs.data[:, :ntap], coeffs.data[:, ntap:]
    out = np.zeros((b, 2, t, f), dtype=coeffs.dtype)
    for n, (sr, si) in enumerate(shifted):
        out[:, 0] += mr[:, n] * sr - mi[:, n] * si
        out[:, 1] += mr[:, n] * si + mi[:, n] * sr

    def vjp(g):
        gc = np.empty_like(coeffs.data)
        for n, (sr, si) in enumerate(shifted):
            gc[:, n] = g[:, 0] * sr + g[:, 1] * si
            gc[:, ntap + n] = -g[:, 0] * si + g[:, 1] * sr
        return (gc,)
    return record(out, (coeffs,), vjp)


def gru_step(x, h, w_ih, w_hh, b_ih, b_hh) -> Tensor:
    """One GRU update, composed from primitives (reset, update, new gates).

    h' = (1 - z) * n + z * h, with the reset gate applied to the recurrent
    part of the candidate: n = tanh(W_n x + b_n + r * (U_n h + b_hn)).
    """
    x, h = as_tensor(x), as_tensor(h)
    hid = as_tensor(w_hh).shape[1]
    if as_tensor(w_ih).shape != (3 * hid, x.shape[-1]) or h.shape[-1] != hid:
        raise InvalidInputError("gru_step: parameter shapes inconsistent with input/hidden size")
    gx = linear(x, w_ih, b_ih)
    gh = linear(h, w_hh, b_hh)
    r = sigmoid(gx[..., :hid] + gh[..., :hid])
    z = sigmoid(gx[..., hid:2 * hid] + gh[..., hid:2 * hid])
    n = tanh(gx[..., 2 * hid:] + r * gh[..., 2 * hid:])
    return n + z * (h - n)
