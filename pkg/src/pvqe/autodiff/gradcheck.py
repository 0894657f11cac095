"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float | None = None,
                      bits: int = 64) -> float:
    """Worst relative error between ``backward`` and central differences.

    Uses the fourth-order five-point stencil, so a fairly large ``eps``
    (1e-3 for 32-bit, 1e-4 for 64-bit) keeps truncation error negligible
    while staying clear of float64 cancellation.

    ``f`` maps a Tensor to a scalar Tensor. The analytic gradient is
    computed at ``bits`` precision (32 or 64). The finite differences are
    always evaluated on a float64 copy of ``x`` so the oracle's own rounding
    does not swamp a 32-bit comparison. Relative error per entry uses the
    denominator max(|a|, |b|, 1e-8).
    """
    dtype = np.float32 if bits == 32 else np.float64
    if eps is None:
        eps = 1e-3 if bits == 32 else 1e-4
    x = np.asarray(x, dtype=dtype)
    xt = Tensor(x.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(xt)
    backward(tape, out)
    analytic = np.asarray(xt.grad, dtype=np.float64)

    x64 = x.astype(np.float64)
    numeric = np.empty(x64.size)
    flat = x64.reshape(-1)

    def at(i, v):
        flat[i] = v
        return float(np.asarray(f(Tensor(x64.copy())).data))

    for i in range(flat.size):
        orig = flat[i]
        f2p, fp, fm, f2m = (at(i, orig + 2 * eps), at(i, orig + eps), at(i, orig - eps), at(i, orig - 2 * eps))
        flat[i] = orig
        numeric[i] = (8.0 * (fp - fm) - (f2p - f2m)) / (12.0 * eps)
    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom))


def _readout(rng, out):
    r = rng.standard_normal(out.shape)
    from . import ops
    return ops.sum(ops.mul(out, r.astype(out.dtype)))


def primitive_checks(seed: int = 0) -> dict[str, Callable[[int], float]]:
    """One gradient check per (primitive, differentiable input).

    Each entry maps ``bits`` to the worst relative error. The scalar used is
    a fixed random projection of the op's output. Inputs to ELU are kept
    away from its kink at zero.
    """
    from . import ops
    from ..training.loss import LossConfig, compressed_mse_loss

    rng = np.random.default_rng(seed)
    n = rng.standard_normal
    away = lambda *s: np.sign(n(s)) * (0.1 + np.abs(n(s)))  # noqa: E731
    checks: dict[str, Callable[[int], float]] = {}

    def add(name, op, inputs, which):
        proj = np.random.default_rng([seed, len(checks)])

        def run(bits, op=op, inputs=inputs, which=which, proj=proj):
            r_state = proj.bit_generator.state

            def f(x):
                # the other inputs follow x: float32 for the analytic pass,
                # float64 for the finite-difference oracle
                args = [np.asarray(a, dtype=x.dtype) if isinstance(a, np.ndarray) else a for a in inputs]
                args[which] = x
                out = op(*args)
                g = np.random.default_rng(0)
                g.bit_generator.state = r_state
                return _readout(g, out)
            return finite_diff_check(f, inputs[which], bits=bits)
        checks[name] = run

    a, b = n((3, 4)), n((3, 4))
    # inputs are float64 masters; each check casts them to the probed precision
    add("add.a", ops.add, [a, n((4,))], 0)
    add("add.b", ops.add, [a, n((4,))], 1)
    add("sub.b", ops.sub, [a, b], 1)
    add("mul.a", ops.mul, [a, n((1, 4))], 0)
    add("mul.b", ops.mul, [a, n((1, 4))], 1)
    add("scale", lambda x: ops.scale(x, 0.7), [a], 0)
    add("square", ops.square, [a], 0)
    add("elu", ops.elu, [away(3, 4)], 0)
    add("sigmoid", ops.sigmoid, [a], 0)
    add("tanh", ops.tanh, [a], 0)
    add("sum", lambda x: ops.sum(x, axis=1), [a], 0)
    add("mean", lambda x: ops.mean(x, axis=0), [a], 0)
    add("reshape", lambda x: ops.reshape(x, (2, 6)), [a], 0)
    add("transpose", lambda x: ops.transpose(x, (1, 0)), [a], 0)
    add("index", lambda x: ops.index(x, (slice(1, 3), [0, 2, 2])), [a], 0)
    add("concat", lambda x, y: ops.concat([x, y], axis=1), [a, b], 0)
    add("pad_axis", lambda x: ops.pad_axis(x, 1, 1, 2), [a], 0)
    add("crop_axis", lambda x: ops.crop_axis(x, 1, 3), [a], 0)
    x3, w, bias = n((2, 3, 5)), n((4, 5)), n((4,))
    add("linear.x", ops.linear, [x3, w, bias], 0)
    add("linear.w", ops.linear, [x3, w, bias], 1)
    add("linear.b", ops.linear, [x3, w, bias], 2)
    g, beta = 1 + 0.3 * n((5,)), n((5,))
    add("layer_norm.x", ops.layer_norm, [x3, g, beta], 0)
    add("layer_norm.g", ops.layer_norm, [x3, g, beta], 1)
    add("layer_norm.b", ops.layer_norm, [x3, g, beta], 2)
    add("softmax", ops.softmax, [x3], 0)
    xc, wc, bc = n((2, 3, 4, 9)), 0.5 * n((4, 3, 2, 3)), n((4,))
    for s in (1, 2):
        op = lambda x, w, b, s=s: ops.conv2d_causal(x, w, b, stride_f=s)  # noqa: E731
        add(f"conv2d_causal.s{s}.x", op, [xc, wc, bc], 0)
        add(f"conv2d_causal.s{s}.w", op, [xc, wc, bc], 1)
        add(f"conv2d_causal.s{s}.b", op, [xc, wc, bc], 2)
    add("conv2d_causal.1x1.x", ops.conv2d_causal, [xc, 0.5 * n((4, 3, 1, 1)), bc], 0)
    add("conv2d_causal.1x1.w", ops.conv2d_causal, [xc, 0.5 * n((4, 3, 1, 1)), bc], 1)
    add("pixel_shuffle_freq", lambda x: ops.pixel_shuffle_freq(x, 2), [n((2, 4, 3, 5))], 0)
    hid, inp = 4, 3
    gru = [n((2, 6, inp)), 0.5 * n((2, hid)), 0.5 * n((3 * hid, inp)), 0.5 * n((3 * hid, hid)),
           0.5 * n((3 * hid,)), 0.5 * n((3 * hid,))]
    for i, nm in enumerate(("x", "h0", "w_ih", "w_hh", "b_ih", "b_hh")):
        add(f"gru_sequence.{nm}", ops.gru_sequence, gru, i)
        add(f"gru_step.{nm}", lambda x, h, *p: ops.gru_step(ops.index(x, (slice(None), 2)), h, *p), gru, i)
    qkv = [n((2, 7, 3)), n((2, 7, 3)), n((2, 7, 5))]
    for i, nm in enumerate("qkv"):
        add(f"attention_align.{nm}", lambda q, k, v: ops.attention_align(q, k, v, history=4), qkv, i)
    xr, xi = n((2, 4, 6)), n((2, 4, 6))
    add("complex_conv_mask", lambda c: ops.complex_conv_mask(c, xr, xi, 2, 3), [n((2, 12, 4, 6))], 0)
    tgt = n((3, 8, 8)) + 1j * n((3, 8, 8))
    checks["compressed_mse_loss"] = lambda bits: finite_diff_check(
        lambda e: compressed_mse_loss(tgt, e, LossConfig()), n((3, 2, 8, 8)), bits=bits)
    return checks


TOLERANCE = {32: 1e-3, 64: 1e-5}
