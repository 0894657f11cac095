"""Frame-synchronous inference: one hop of audio in, one hop out.

This path is plain numpy (no tape) and is deliberately written separately
from the offline graph in :mod:`pvqe.model.graph`; the two are checked
against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import dsp
from ..errors import InvalidConfigError, InvalidInputError, InvalidStateError
from .config import ModelConfig
from .graph import Model


def _elu(x):
    return np.expm1(np.minimum(x, 0)) + np.maximum(x, 0)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _ln(x, g, b, eps):
    n = x.shape[-1]
    xc = x - x.sum() / n
    return xc / np.sqrt(np.dot(xc, xc) / n + eps) * g + b


class _Conv:
    """Causal conv for a single frame with a (C_in, k_t - 1, F) input cache."""

    def __init__(self, w: np.ndarray, b: np.ndarray, f_in: int, stride: int):
        self.c_out, self.c_in, self.kt, self.kf = w.shape
        self.wmat = np.ascontiguousarray(w.reshape(self.c_out, -1))
        self.b = b[:, None]
        self.stride = stride
        self.f_in = f_in
        self.f_out = -(-f_in // stride)
        self.pf = self.kf // 2
        # gather (C_in * k_t * k_f, F') out of the padded (C_in, k_t, F + 2p) block
        fp = f_in + 2 * self.pf
        c, i, j, fo = np.meshgrid(np.arange(self.c_in), np.arange(self.kt), np.arange(self.kf),
                                  np.arange(self.f_out), indexing="ij")
        self.gather = (c * self.kt * fp + i * fp + fo * stride + j).reshape(self.c_in * self.kt * self.kf, self.f_out)

    def new_cache(self, dtype):
        # frequency-padded (C_in, k_t, F + 2p) block; the last time row is the current frame
        return np.zeros((self.c_in, self.kt, self.f_in + 2 * self.pf), dtype=dtype)

    def __call__(self, x: np.ndarray, cache: np.ndarray | None):
        if cache is None:
            return self.wmat @ x + self.b, None
        if self.kt > 1:
            cache[:, :-1] = cache[:, 1:]
        cache[:, -1, self.pf:self.pf + self.f_in] = x
        return self.wmat @ cache.reshape(-1)[self.gather] + self.b, cache


class _Compiled:
    """Weights rearranged for per-frame execution, tied to specific arrays."""

    def __init__(self, model: Model):
        cfg, p = model.config, {k: model.params[k].data for k in model.params}
        self.source = [model.params[k].data for k in model.params]
        self.cfg = cfg
        self.dtype = model.dtype
        fe = cfg.enc_freqs()
        fd = cfg.dec_freqs()
        s = cfg.stride_f
        self.convs: dict[str, _Conv] = {}

        def conv(name, f_in, stride=1):
            self.convs[name] = _Conv(p[f"{name}.w"], p[f"{name}.b"], f_in, stride)

        def res(name, f):
            for part in ("pw1", "conv", "pw2"):
                conv(f"{name}.{part}", f)

        for br in ("mic", "far"):
            for i in range(2):
                conv(f"enc.{br}.{i}.conv", fe[i], s)
                if cfg.branch_residual:
                    res(f"enc.{br}.{i}.res", fe[i + 1])
        for i in range(2):
            conv(f"enc.comb.{i}.conv", fe[2 + i], s)
            res(f"enc.comb.{i}.res", fe[3 + i])
        for i in range(4):
            conv(f"dec.{i}.conv", fd[i])
            if i < 2:
                res(f"dec.{i}.res", fd[i + 1])
        conv("ccm.head", cfg.bins)
        self.p = p
        self.fe, self.fd = fe, fd

    def matches(self, model: Model) -> bool:
        cur = [model.params[k].data for k in model.params]
        return len(cur) == len(self.source) and all(a is b for a, b in zip(cur, self.source))


def compiled(model: Model) -> _Compiled:
    c = getattr(model, "_compiled", None)
    if c is None or not c.matches(model):
        c = _Compiled(model)
        model._compiled = c
    return c


@dataclass
class StreamState:
    """All recurrent state of one stream. Create with :func:`new_stream`."""

    config: ModelConfig | None = None
    embedding: np.ndarray | None = None
    provenance: str = "zero"
    fused_emb: np.ndarray | None = field(default=None, repr=False)
    mic_framer: dsp.Framer | None = field(default=None, repr=False)
    far_framer: dsp.Framer | None = field(default=None, repr=False)
    ola: dsp.OverlapAdd | None = field(default=None, repr=False)
    caches: dict = field(default_factory=dict, repr=False)
    ring_keys: np.ndarray | None = field(default=None, repr=False)
    ring_vals: np.ndarray | None = field(default=None, repr=False)
    ring_head: int = -1
    ring_count: int = 0
    hidden: list = field(default_factory=list, repr=False)
    mic_history: np.ndarray | None = field(default=None, repr=False)
    frames: int = 0
    last_internal: np.ndarray | None = field(default=None, repr=False)

    @property
    def initialized(self) -> bool:
        return self.config is not None and self.mic_framer is not None


def new_stream(model: Model, embedding=None) -> StreamState:
    """Fresh state for ``model``; pins ``embedding`` (zero vector if None)."""
    st = StreamState(config=model.config)
    _allocate(model, st)
    pin_embedding(model, st, embedding)
    return st


def _allocate(model: Model, st: StreamState) -> None:
    cfg = model.config
    comp = compiled(model)
    dt = model.dtype
    n = 2 * (cfg.bins - 1)
    st.mic_framer = dsp.Framer(n, n // 2)
    st.far_framer = dsp.Framer(n, n // 2)
    st.ola = dsp.OverlapAdd(model.window)
    st.caches = {name: c.new_cache(dt) for name, c in comp.convs.items() if c.kt > 1 or c.kf > 1}
    h = cfg.align_history
    st.ring_keys = np.zeros((h, cfg.align_dim), dtype=dt)
    st.ring_vals = np.zeros((h, cfg.far_filters[-1] * comp.fe[2]), dtype=dt)
    st.ring_head, st.ring_count = -1, 0
    st.hidden = [np.zeros(cfg.gru_hidden, dtype=dt) for _ in range(2)]
    # (taps_t, bins + 2 * (taps_f // 2)) padded spectra, row d holds X[t - d]
    st.mic_history = np.zeros((cfg.ccm_taps_t, cfg.bins + 2 * (cfg.ccm_taps_f // 2)), dtype=np.complex128)
    st.frames = 0
    st.last_internal = None


def pin_embedding(model: Model, st: StreamState, embedding=None) -> None:
    cfg, p = model.config, compiled(model).p
    vec = getattr(embedding, "v", embedding)
    prov = getattr(embedding, "provenance", "zero" if embedding is None else "external")
    vec = np.zeros(cfg.emb_dim) if vec is None else np.asarray(vec, dtype=np.float64).reshape(-1)
    if vec.shape[0] != cfg.emb_dim:
        raise InvalidConfigError(f"embedding of length {vec.shape[0]} does not fit a model built for {cfg.emb_dim}")
    if not np.all(np.isfinite(vec)):
        raise InvalidInputError("embedding contains non-finite values")
    dt = model.dtype
    st.embedding = vec.astype(dt)
    st.provenance = str(prov)
    e = p["fuse.emb.w"] @ st.embedding + p["fuse.emb.b"]
    st.fused_emb = _ln(_elu(e), p["fuse.emb_ln.g"], p["fuse.emb_ln.b"], cfg.ln_eps)


def reset_state(model: Model, st: StreamState, keep_embedding: bool = True) -> None:
    """Zero every cache, ring and hidden state; keep the pinned embedding if asked."""
    emb, prov = st.embedding, st.provenance
    _allocate(model, st)
    if keep_embedding and emb is not None:
        pin_embedding(model, st, emb)
        st.provenance = prov
    else:
        pin_embedding(model, st, None)


def _res(comp, st, name, x):
    cv = comp.convs
    y = _elu(cv[f"{name}.pw1"](x, None)[0])
    y, st.caches[f"{name}.conv"] = cv[f"{name}.conv"](y, st.caches[f"{name}.conv"])
    return x + cv[f"{name}.pw2"](_elu(y), None)[0]


def _block(comp, st, name, x, residual):
    y, st.caches[f"{name}.conv"] = comp.convs[f"{name}.conv"](x, st.caches[f"{name}.conv"])
    y = _elu(y)
    return _res(comp, st, f"{name}.res", y) if residual else y


def process_frame(model: Model, st: StreamState, mic: np.ndarray, farend: np.ndarray | None = None) -> np.ndarray:
    """Consume one hop of mic (and optional far-end) samples, emit one hop.

    A missing far end is treated as silence. Output lags input by one hop.
    """
    if not st.initialized:
        raise InvalidStateError("stream state was not created with new_stream()")
    if st.config != model.config:
        raise InvalidStateError("stream state belongs to a model with a different config")
    comp = compiled(model)
    cfg = model.config
    hop = cfg.bins - 1
    far_chunk = np.zeros(hop) if farend is None else farend
    win = st.ola.win
    X = dsp.stft_frame(st.mic_framer.push(mic), win)
    Fx = dsp.stft_frame(st.far_framer.push(far_chunk), win)
    internal, coeffs = _frame_core(comp, st, X, Fx)
    st.last_internal = internal
    spec = _apply_ccm(cfg, coeffs, X, st)
    st.frames += 1
    return st.ola.push(spec)


def _frame_core(comp: _Compiled, st: StreamState, X: np.ndarray, Fx: np.ndarray):
    cfg, p, dt = comp.cfg, comp.p, comp.dtype
    c = cfg.compress_exp
    xm = dsp.compress(X, c)
    xf = dsp.compress(Fx, c)
    m = np.stack([xm.real, xm.imag]).astype(dt)
    f = np.stack([xf.real, xf.imag]).astype(dt)

    br = cfg.branch_residual
    m1 = _block(comp, st, "enc.mic.0", m, br)
    m2 = _block(comp, st, "enc.mic.1", m1, br)
    f1 = _block(comp, st, "enc.far.0", f, br)
    f2 = _block(comp, st, "enc.far.1", f1, br)

    # soft alignment over the far-end history ring
    q = p["align.query.w"] @ (p["align.mic_reduce.w"] @ m2 + p["align.mic_reduce.b"][:, None]).reshape(-1) \
        + p["align.query.b"]
    k = p["align.key.w"] @ (p["align.far_reduce.w"] @ f2 + p["align.far_reduce.b"][:, None]).reshape(-1) \
        + p["align.key.b"]
    h = cfg.align_history
    st.ring_head = (st.ring_head + 1) % h
    st.ring_keys[st.ring_head] = k
    st.ring_vals[st.ring_head] = f2.reshape(-1)
    st.ring_count = min(st.ring_count + 1, h)
    aligned = align_step(q, st.ring_keys, st.ring_vals, st.ring_head, st.ring_count).reshape(f2.shape)

    x = np.concatenate([m2, aligned], axis=0)
    c1 = _block(comp, st, "enc.comb.0", x, True)
    c2 = _block(comp, st, "enc.comb.1", c1, True)

    flat = c2.reshape(-1)
    y = p["fuse.proj.w"] @ np.concatenate([flat, st.fused_emb]) + p["fuse.proj.b"]
    y = _ln(_elu(y), p["fuse.ln.g"], p["fuse.ln.b"], cfg.ln_eps)

    x = _ln(y, p["tb.ln_in.g"], p["tb.ln_in.b"], cfg.ln_eps)
    hid = cfg.gru_hidden
    for i in range(2):
        gx = p[f"tb.gru.{i}.w_ih"] @ x + p[f"tb.gru.{i}.b_ih"]
        hp = st.hidden[i]
        gh = p[f"tb.gru.{i}.w_hh"] @ hp + p[f"tb.gru.{i}.b_hh"]
        r = _sigmoid(gx[:hid] + gh[:hid])
        z = _sigmoid(gx[hid:2 * hid] + gh[hid:2 * hid])
        n = np.tanh(gx[2 * hid:] + r * gh[2 * hid:])
        x = n + z * (hp - n)
        st.hidden[i] = x
    internal = _ln(x, p["tb.ln_out.g"], p["tb.ln_out.b"], cfg.ln_eps)
    out = (p["tb.proj.w"] @ internal + p["tb.proj.b"]).reshape(cfg.comb_filters[-1], comp.fe[-1])

    s = cfg.stride_f
    skips = (c2, c1, m2, None)
    x = out
    for i, skip in enumerate(skips):
        if skip is not None:
            gap = x.shape[1] - skip.shape[1]
            if gap:
                skip = np.concatenate([skip, np.zeros((skip.shape[0], gap), dtype=skip.dtype)], axis=1)
            x = np.concatenate([x, skip], axis=0)
        y, st.caches[f"dec.{i}.conv"] = comp.convs[f"dec.{i}.conv"](x, st.caches[f"dec.{i}.conv"])
        # sub-pixel: channel c*s + j -> frequency f*s + j
        co = y.shape[0] // s
        x = _elu(y.reshape(co, s, -1).transpose(0, 2, 1).reshape(co, -1))
        if i < 2:
            x = _res(comp, st, f"dec.{i}.res", x)
    coeffs = comp.convs["ccm.head"](x[:, :cfg.bins], None)[0]
    return internal, coeffs


def align_step(q: np.ndarray, keys: np.ndarray, vals: np.ndarray, head: int, count: int) -> np.ndarray:
    """Attend from query ``q`` over the ``count`` most recent ring entries.

    Row ``head`` of ``keys``/``vals`` is the current frame, ``head - d`` (mod
    ring size) the frame ``d`` hops back. Returns the softmax-weighted sum of
    those value rows.
    """
    if count < 1:
        raise InvalidStateError("alignment ring is empty")
    h = keys.shape[0]
    order = (head - np.arange(count)) % h
    scores = keys[order] @ q / np.sqrt(q.shape[0])
    w = np.exp(scores - scores.max())
    w /= w.sum()
    wfull = np.zeros(h, dtype=vals.dtype)
    wfull[order] = w
    return wfull @ vals


def _apply_ccm(cfg: ModelConfig, coeffs: np.ndarray, X: np.ndarray, st: StreamState) -> np.ndarray:
    nt, nf = cfg.ccm_taps_t, cfg.ccm_taps_f
    ntap = nt * nf
    half = nf // 2
    dt = coeffs.dtype
    # same rounding as the offline path: the spectrum enters at model precision
    cur = X.real.astype(dt) + 1j * X.imag.astype(dt)
    hist = st.mic_history
    hist[1:] = hist[:-1]
    hist[0, half:half + cfg.bins] = cur
    taps = hist.reshape(-1)[_ccm_gather(nt, nf, cfg.bins)]
    return ((coeffs[:ntap] + 1j * coeffs[ntap:]) * taps).sum(axis=0)


_GATHER_CACHE: dict = {}


def _ccm_gather(nt: int, nf: int, bins: int) -> np.ndarray:
    key = (nt, nf, bins)
    if key not in _GATHER_CACHE:
        fp = bins + 2 * (nf // 2)
        d, j, f = np.meshgrid(np.arange(nt), np.arange(nf), np.arange(bins), indexing="ij")
        _GATHER_CACHE[key] = (d * fp + j + f).reshape(nt * nf, bins)
    return _GATHER_CACHE[key]


def apply_ccm(coeffs: np.ndarray, mic_history: list, taps_t: int = 2, taps_f: int = 3) -> np.ndarray:
    """Stateless CCM on explicit frames: ``mic_history[d]`` is X[t - d].

    coeffs: (2 * taps_t * taps_f, F), real parts then imaginary parts.
    """
    ntap = taps_t * taps_f
    if coeffs.shape[0] != 2 * ntap or len(mic_history) < taps_t:
        raise InvalidInputError("apply_ccm: coefficient / history shapes disagree")
    f = coeffs.shape[1]
    half = taps_f // 2
    M = coeffs[:ntap] + 1j * coeffs[ntap:]
    out = np.zeros(f, dtype=np.complex128)
    for d in range(taps_t):
        xp = np.pad(np.asarray(mic_history[d], dtype=np.complex128), (half, half))
        for j in range(taps_f):
            out += M[d * taps_f + j] * xp[j:j + f]
    return out


def run_stream(model: Model, mic: np.ndarray, farend: np.ndarray | None = None, embedding=None,
               state: StreamState | None = None) -> np.ndarray:
    """Feed a whole signal hop by hop; the output is trimmed to ``len(mic)``."""
    mic = np.asarray(mic, dtype=np.float64)
    hop = model.hop
    n = -(-mic.shape[0] // hop)
    mp = np.zeros(n * hop)
    mp[:mic.shape[0]] = mic
    fp = None
    if farend is not None:
        fp = np.zeros(n * hop)
        fp[:len(farend)] = farend
    st = state if state is not None else new_stream(model, embedding)
    out = np.empty(n * hop)
    for k in range(n):
        out[k * hop:(k + 1) * hop] = process_frame(model, st, mp[k * hop:(k + 1) * hop],
                                                   None if fp is None else fp[k * hop:(k + 1) * hop])
    return out[:mic.shape[0]]
