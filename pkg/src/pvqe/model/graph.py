"""Parameter layout and the whole-utterance (offline, differentiable) forward pass.

Signal flow per frame:

    mic/far spectra -> compress -> branch encoders (2 blocks each)
      -> soft alignment of far-end features -> concat -> combined encoder
      -> flatten -> speaker fusion -> temporal block (LN, GRU x2, LN, linear)
      -> decoder with skips + sub-pixel upsampling -> complex convolving mask
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import dsp
from ..autodiff import ParamStore, Tensor, ops, uniform_init
from ..errors import InvalidConfigError, InvalidInputError
from .config import ModelConfig

DTYPE = np.float32


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Every parameter name and shape the config implies (the weight-file contract)."""
    kt, kf = cfg.kernel
    shapes: dict[str, tuple] = {}

    def conv(name, c_in, c_out, k=(kt, kf)):
        shapes[f"{name}.w"] = (c_out, c_in, *k)
        shapes[f"{name}.b"] = (c_out,)

    def res(name, c):
        e = cfg.res_hidden(c)
        conv(f"{name}.pw1", c, e, (1, 1))
        conv(f"{name}.conv", e, e)
        conv(f"{name}.pw2", e, c, (1, 1))

    def lin(name, n_in, n_out):
        shapes[f"{name}.w"] = (n_out, n_in)
        shapes[f"{name}.b"] = (n_out,)

    def ln(name, d):
        shapes[f"{name}.g"] = (d,)
        shapes[f"{name}.b"] = (d,)

    freqs = cfg.enc_freqs()
    for branch, filters in (("far", cfg.far_filters), ("mic", cfg.mic_filters)):
        c = 2
        for i, co in enumerate(filters):
            conv(f"enc.{branch}.{i}.conv", c, co)
            if cfg.branch_residual:
                res(f"enc.{branch}.{i}.res", co)
            c = co

    r = cfg.align_reduce
    lin("align.mic_reduce", cfg.mic_filters[-1], r)
    lin("align.far_reduce", cfg.far_filters[-1], r)
    lin("align.query", r * freqs[2], cfg.align_dim)
    lin("align.key", r * freqs[2], cfg.align_dim)

    c = cfg.mic_filters[-1] + cfg.far_filters[-1]
    for i, co in enumerate(cfg.comb_filters):
        conv(f"enc.comb.{i}.conv", c, co)
        res(f"enc.comb.{i}.res", co)
        c = co

    df, p = cfg.flat_dim, cfg.fusion_size
    lin("fuse.emb", cfg.emb_dim, p)
    ln("fuse.emb_ln", p)
    lin("fuse.proj", df + p, df)
    ln("fuse.ln", df)

    h = cfg.gru_hidden
    ln("tb.ln_in", df)
    for i, n_in in enumerate((df, h)):
        shapes[f"tb.gru.{i}.w_ih"] = (3 * h, n_in)
        shapes[f"tb.gru.{i}.w_hh"] = (3 * h, h)
        shapes[f"tb.gru.{i}.b_ih"] = (3 * h,)
        shapes[f"tb.gru.{i}.b_hh"] = (3 * h,)
    ln("tb.ln_out", h)
    lin("tb.proj", h, df)

    c = cfg.comb_filters[-1]
    for i, (co, skip) in enumerate(zip(cfg.dec_filters, _skip_channels(cfg))):
        conv(f"dec.{i}.conv", c + skip, co * cfg.stride_f)
        if i < 2:
            res(f"dec.{i}.res", co)
        c = co
    conv("ccm.head", cfg.dec_filters[-1], 2 * cfg.ccm_taps_t * cfg.ccm_taps_f, (1, 1))
    return dict(sorted(shapes.items()))


def _skip_channels(cfg: ModelConfig) -> tuple:
    # decoder block i takes a skip from: combined enc 2, combined enc 1, mic enc 2, none
    return (cfg.comb_filters[1], cfg.comb_filters[0], cfg.mic_filters[1], 0)


def _fan_in(name: str, shape: tuple, shapes: dict) -> int:
    if name.endswith(".w") or ".w_" in name:
        return int(np.prod(shape[1:]))
    # biases share the fan-in of their weight
    stem = name.rsplit(".", 1)[0]
    if name.endswith(".b_ih"):
        return shapes[stem + ".w_ih"][1]
    if name.endswith(".b_hh"):
        return shapes[stem + ".w_hh"][1]
    return int(np.prod(shapes[stem + ".w"][1:]))


@dataclass
class Model:
    config: ModelConfig
    params: ParamStore
    seed: int | None = None
    _win: np.ndarray = field(default=None, repr=False)

    @property
    def param_count(self) -> int:
        return self.params.count()

    @property
    def dtype(self):
        return self.params["ccm.head.w"].dtype

    @property
    def window(self) -> np.ndarray:
        if self._win is None:
            self._win = dsp.make_sqrt_hann(2 * (self.config.bins - 1))
        return self._win

    @property
    def hop(self) -> int:
        return self.config.bins - 1

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]


def build_model(cfg: ModelConfig, seed: int = 0, dtype=DTYPE) -> Model:
    """Allocate and initialize every parameter: weights and biases
    uniform(-a, a) with a = sqrt(1 / fan_in), layer-norm gains 1, shifts 0."""
    if not isinstance(cfg, ModelConfig):
        raise InvalidConfigError("build_model expects a ModelConfig")
    cfg.validate()
    shapes = param_shapes(cfg)
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for name, shape in shapes.items():
        if name.endswith(".g"):
            params[name] = np.ones(shape, dtype=dtype)
        elif _is_ln_shift(name, shapes):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = uniform_init(rng, shape, _fan_in(name, shape, shapes), dtype)
    return Model(cfg, params, seed)


def _is_ln_shift(name: str, shapes: dict) -> bool:
    return name.endswith(".b") and name[:-2] + ".g" in shapes


def check_params(cfg: ModelConfig, arrays: dict) -> None:
    expected = param_shapes(cfg)
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise InvalidConfigError(f"parameter names differ from config: missing {missing[:5]}, extra {extra[:5]}")
    for name, shape in expected.items():
        if tuple(arrays[name].shape) != shape:
            raise InvalidConfigError(f"{name}: shape {arrays[name].shape} != expected {shape}")


# ---------------------------------------------------------------- offline forward

@dataclass
class ForwardResult:
    estimate: Tensor          # (B, 2, T, bins) uncompressed re/im
    internal: Tensor          # (B, T, H) LN output after the last GRU
    trace: dict               # intermediate tensors by name


def spectra(model: Model, mic: np.ndarray, far: np.ndarray | None = None):
    """STFT both signals. Returns (mic_spec, far_spec) complex (B, T, bins)."""
    mic = np.atleast_2d(np.asarray(mic, dtype=np.float64))
    far = np.zeros_like(mic) if far is None else np.atleast_2d(np.asarray(far, dtype=np.float64))
    if far.shape != mic.shape:
        raise InvalidInputError("mic and far-end signals must have equal length")
    win = model.window
    return (np.stack([dsp.stft(m, win) for m in mic]),
            np.stack([dsp.stft(f, win) for f in far]))


def compressed_input(spec: np.ndarray, c: float, dtype) -> np.ndarray:
    """Complex (B, T, F) -> real (B, 2, T, F) power-law compressed features."""
    x = dsp.compress(spec, c)
    return np.stack([x.real, x.imag], axis=1).astype(dtype)


def _conv(p, name, x, stride=1):
    return ops.conv2d_causal(x, p[f"{name}.w"], p[f"{name}.b"], stride_f=stride)


def _res(p, name, x):
    y = ops.elu(_conv(p, f"{name}.pw1", x))
    y = ops.elu(_conv(p, f"{name}.conv", y))
    return x + _conv(p, f"{name}.pw2", y)


def _channel_linear(p, name, x):
    # x: (B, C, T, F) -> (B, T, F, C') via a linear map over channels
    xt = ops.transpose(x, (0, 2, 3, 1))
    return ops.linear(xt, p[f"{name}.w"], p[f"{name}.b"])


def _flatten_frames(x):
    # (B, C, T, F) -> (B, T, C * F), channel-major
    b, c, t, f = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, t, c * f))


def _unflatten_frames(x, c, f):
    b, t, _ = x.shape
    return ops.transpose(ops.reshape(x, (b, t, c, f)), (0, 2, 1, 3))


def encode(model: Model, mic_feat, far_feat, trace: dict | None = None):
    """Encoder half: returns (flat bottleneck (B, T, Df), skip tensors)."""
    cfg, p = model.config, model.params
    trace = {} if trace is None else trace
    x = mic_feat
    mic_out = []
    for i in range(2):
        x = ops.elu(_conv(p, f"enc.mic.{i}.conv", x, cfg.stride_f))
        if cfg.branch_residual:
            x = _res(p, f"enc.mic.{i}.res", x)
        mic_out.append(x)
        trace[f"enc.mic.{i}"] = x
    y = far_feat
    for i in range(2):
        y = ops.elu(_conv(p, f"enc.far.{i}.conv", y, cfg.stride_f))
        if cfg.branch_residual:
            y = _res(p, f"enc.far.{i}.res", y)
        trace[f"enc.far.{i}"] = y

    m2, f2 = mic_out[1], y
    b, cf, t, fr = f2.shape
    qm = ops.reshape(ops.transpose(_channel_linear(p, "align.mic_reduce", m2), (0, 1, 3, 2)), (b, t, -1))
    kf = ops.reshape(ops.transpose(_channel_linear(p, "align.far_reduce", f2), (0, 1, 3, 2)), (b, t, -1))
    q = ops.linear(qm, p["align.query.w"], p["align.query.b"])
    k = ops.linear(kf, p["align.key.w"], p["align.key.b"])
    aligned = ops.attention_align(q, k, _flatten_frames(f2), cfg.align_history)
    aligned = _unflatten_frames(aligned, cf, fr)
    trace["align"] = aligned

    x = ops.concat([m2, aligned], axis=1)
    comb = []
    for i in range(2):
        x = ops.elu(_conv(p, f"enc.comb.{i}.conv", x, cfg.stride_f))
        x = _res(p, f"enc.comb.{i}.res", x)
        comb.append(x)
        trace[f"enc.comb.{i}"] = x
    skips = (comb[1], comb[0], m2, None)
    return _flatten_frames(x), skips


def fuse_speaker(model: Model, flat, emb):
    """Condition flattened encoder features (B, T, Df) on embeddings (B, K)."""
    p, cfg = model.params, model.config
    emb = emb if isinstance(emb, Tensor) else Tensor(np.asarray(emb, dtype=model.dtype))
    if emb.ndim == 1:
        emb = ops.reshape(emb, (1, -1))
    if emb.shape[-1] != cfg.emb_dim:
        raise InvalidInputError(f"embedding length {emb.shape[-1]} != model emb_dim {cfg.emb_dim}")
    e = ops.linear(emb, p["fuse.emb.w"], p["fuse.emb.b"])
    e = ops.layer_norm(ops.elu(e), p["fuse.emb_ln.g"], p["fuse.emb_ln.b"], cfg.ln_eps)
    b, t, _ = flat.shape
    e = ops.add(ops.reshape(e, (e.shape[0], 1, -1)), np.zeros((b, t, 1), dtype=e.dtype))
    y = ops.linear(ops.concat([flat, e], axis=-1), p["fuse.proj.w"], p["fuse.proj.b"])
    return ops.layer_norm(ops.elu(y), p["fuse.ln.g"], p["fuse.ln.b"], cfg.ln_eps)


def temporal(model: Model, fused, truncate: int | None = None):
    """LN -> GRU -> GRU -> LN (internal embedding) -> linear. Returns (out, internal)."""
    p, cfg = model.params, model.config
    b = fused.shape[0]
    h = cfg.gru_hidden
    x = ops.layer_norm(fused, p["tb.ln_in.g"], p["tb.ln_in.b"], cfg.ln_eps)
    for i in range(2):
        x = ops.gru_sequence(x, np.zeros((b, h), dtype=x.dtype), p[f"tb.gru.{i}.w_ih"], p[f"tb.gru.{i}.w_hh"],
                             p[f"tb.gru.{i}.b_ih"], p[f"tb.gru.{i}.b_hh"], truncate=truncate)
    internal = ops.layer_norm(x, p["tb.ln_out.g"], p["tb.ln_out.b"], cfg.ln_eps)
    return ops.linear(internal, p["tb.proj.w"], p["tb.proj.b"]), internal


def decode(model: Model, x, skips, trace: dict | None = None):
    """Decoder blocks with sub-pixel upsampling; returns CCM coefficients (B, 12, T, bins)."""
    p, cfg = model.params, model.config
    trace = {} if trace is None else trace
    for i, skip in enumerate(skips):
        if skip is not None:
            gap = x.shape[3] - skip.shape[3]
            if gap:
                skip = ops.pad_axis(skip, 3, 0, gap)
            x = ops.concat([x, skip], axis=1)
        x = _conv(p, f"dec.{i}.conv", x)
        x = ops.elu(ops.pixel_shuffle_freq(x, cfg.stride_f))
        if i < 2:
            x = _res(p, f"dec.{i}.res", x)
        trace[f"dec.{i}"] = x
    x = ops.crop_axis(x, 3, cfg.bins)
    return _conv(p, "ccm.head", x)


def forward(model: Model, mic_spec: np.ndarray, far_spec: np.ndarray, emb,
            truncate: int | None = None, until_embedding: bool = False) -> ForwardResult:
    """Whole-utterance forward over complex spectra (B, T, bins).

    ``emb`` is (B, K) or (K,) and is broadcast over time. With
    ``until_embedding`` the decoder is skipped and ``estimate`` is None.
    """
    cfg = model.config
    mic_spec = np.asarray(mic_spec)
    if mic_spec.ndim == 2:
        mic_spec, far_spec = mic_spec[None], np.asarray(far_spec)[None]
    if mic_spec.shape[-1] != cfg.bins or far_spec.shape != mic_spec.shape:
        raise InvalidInputError(f"expected (B, T, {cfg.bins}) spectra for mic and far end")
    dtype = model.dtype
    trace: dict = {}
    mic_feat = Tensor(compressed_input(mic_spec, cfg.compress_exp, dtype))
    far_feat = Tensor(compressed_input(far_spec, cfg.compress_exp, dtype))
    flat, skips = encode(model, mic_feat, far_feat, trace)
    trace["flat"] = flat
    fused = fuse_speaker(model, flat, emb)
    trace["fused"] = fused
    out, internal = temporal(model, fused, truncate)
    if until_embedding:
        return ForwardResult(None, internal, trace)
    x = _unflatten_frames(out, cfg.comb_filters[-1], cfg.enc_freqs()[-1])
    coeffs = decode(model, x, skips, trace)
    trace["ccm"] = coeffs
    est = ops.complex_conv_mask(coeffs, mic_spec.real.astype(dtype), mic_spec.imag.astype(dtype),
                                cfg.ccm_taps_t, cfg.ccm_taps_f)
    return ForwardResult(est, internal, trace)


def enhance_offline(model: Model, mic: np.ndarray, far: np.ndarray | None, emb) -> np.ndarray:
    """Run a whole 1-D signal through the network at once (no tape)."""
    mic = np.asarray(mic, dtype=np.float64)
    ms, fs = spectra(model, mic, far)
    res = forward(model, ms, fs, emb)
    est = res.estimate.data[0].astype(np.float64)
    spec = est[0] + 1j * est[1]
    return dsp.istft(spec, model.window)[:mic.shape[0]]
