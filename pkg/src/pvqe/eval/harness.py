"""Streaming-equivalence check, real-time benchmark and the toy
personalization evaluation."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from ..enrollment import extract_internal_embedding, zero_embedding
from ..errors import InvalidInputError
from ..model.graph import Model, enhance_offline
from ..model.streaming import new_stream, process_frame
from .metrics import bak_suppr, si_sdr, tsos


def streaming_vs_offline(model: Model, clip: np.ndarray, farend: np.ndarray | None = None, embedding=None,
                         fault_frame: int | None = None, fault_size: float = 1.0) -> float:
    """Max abs sample difference between frame-by-frame and whole-clip processing.

    ``fault_frame`` adds ``fault_size`` to the first GRU's hidden state just
    before that frame, to confirm the comparison notices a broken stream.
    """
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim != 1 or clip.shape[0] == 0:
        raise InvalidInputError("clip must be a non-empty 1-D signal")
    emb = np.zeros(model.config.emb_dim) if embedding is None else getattr(embedding, "v", embedding)
    hop = model.hop
    n = -(-clip.shape[0] // hop)
    mic = np.zeros(n * hop)
    mic[:clip.shape[0]] = clip
    far = np.zeros(n * hop)
    if farend is not None:
        far[:len(farend)] = farend
    st = new_stream(model, emb)
    stream = np.empty(n * hop)
    for k in range(n):
        if fault_frame is not None and k == fault_frame:
            st.hidden[0] = st.hidden[0] + np.asarray(fault_size, dtype=st.hidden[0].dtype)
        stream[k * hop:(k + 1) * hop] = process_frame(model, st, mic[k * hop:(k + 1) * hop], far[k * hop:(k + 1) * hop])
    offline = enhance_offline(model, mic, far, emb)
    return float(np.max(np.abs(stream - offline)))


def rtf_benchmark(model: Model, n_frames: int = 2000, warmup: int = 100, seed: int = 0) -> tuple[float, float]:
    """Mean wall-clock ms per ``process_frame`` call on one thread, and the
    real-time factor (ms per frame / hop duration in ms)."""
    if n_frames < 1:
        raise InvalidInputError("n_frames must be positive")
    warmup = max(int(warmup), 100)
    hop = model.hop
    hop_ms = 1000.0 * hop / 16000
    rng = np.random.default_rng(seed)
    total = n_frames + warmup
    mic = 0.1 * rng.standard_normal((total, hop))
    far = 0.1 * rng.standard_normal((total, hop))
    st = new_stream(model, rng.standard_normal(model.config.emb_dim) * 0.1)
    with threadpool_limits(limits=1):
        for k in range(warmup):
            process_frame(model, st, mic[k], far[k])
        t0 = time.perf_counter()
        for k in range(warmup, total):
            process_frame(model, st, mic[k], far[k])
        dt = time.perf_counter() - t0
    ms = 1000.0 * dt / n_frames
    return ms, ms / hop_ms


def align_output(out: np.ndarray, ref: np.ndarray, hop: int) -> tuple[np.ndarray, np.ndarray]:
    """Undo the one-hop output latency: pair ``ref[:-hop]`` with ``out[hop:]``."""
    n = min(out.shape[0], ref.shape[0])
    return out[hop:n], ref[:n - hop]


@dataclass
class PersonalizationResult:
    bak_suppr_target: float     # interferer-only input, target speaker's embedding
    bak_suppr_zero: float       # same input, zero embedding
    sisdr_matched: float        # voice A from A+B with A's enrollment
    sisdr_swapped: float        # ... with B's enrollment
    tsos_matched: float         # over-suppression of A alone with A's enrollment

    @property
    def swap_gain(self) -> float:
        return self.sisdr_matched - self.sisdr_swapped

    def to_dict(self) -> dict:
        return {**asdict(self), "swap_gain": self.swap_gain}


def personalization_eval(model: Model, voice_a, voice_b, n_clips: int = 4, seed: int = 0,
                         clip_s: float = 2.0, enroll_s: float = 4.0, sir_db: float = 0.0,
                         level: float = 0.5) -> PersonalizationResult:
    """Score how well an embedding selects its speaker.

    Every clip uses fresh utterances of the two voices. Enrollments are
    extracted with the model itself. Metrics are averaged over clips
    (dB values as plain means).
    """
    from ..training.synth import synth_voice_utterance

    hop = model.hop
    rng = np.random.default_rng([seed, 31337])
    seeds = rng.integers(0, 2**31, size=(n_clips, 4))
    emb_a = extract_internal_embedding(model, synth_voice_utterance(voice_a, enroll_s, 10_000_019), "offline")
    emb_b = extract_internal_embedding(model, synth_voice_utterance(voice_b, enroll_s, 10_000_079), "offline")
    zero = zero_embedding(model.config.emb_dim)
    bt, bz, sm, ss, ts = [], [], [], [], []
    for s in seeds:
        a = level * synth_voice_utterance(voice_a, clip_s, int(s[0]))
        b = level * synth_voice_utterance(voice_b, clip_s, int(s[1]))
        # interferer-only clip
        out_t, ref = align_output(enhance_offline(model, b, None, emb_a.v), b, hop)
        out_z, _ = align_output(enhance_offline(model, b, None, zero.v), b, hop)
        bt.append(bak_suppr(ref, out_t))
        bz.append(bak_suppr(ref, out_z))
        ea, eb = float(a @ a), float(b @ b)
        mix = a + b * np.sqrt(ea / eb * 10.0 ** (-sir_db / 10.0))
        out_a, ref_a = align_output(enhance_offline(model, mix, None, emb_a.v), a, hop)
        out_b, _ = align_output(enhance_offline(model, mix, None, emb_b.v), a, hop)
        sm.append(si_sdr(ref_a, out_a))
        ss.append(si_sdr(ref_a, out_b))
        # over-suppression is scored on the target talking alone
        out_s, ref_s = align_output(enhance_offline(model, a, None, emb_a.v), a, hop)
        ts.append(tsos(ref_s, out_s))
    return PersonalizationResult(float(np.mean(bt)), float(np.mean(bz)), float(np.mean(sm)),
                                 float(np.mean(ss)), float(np.mean(ts)))


__all__ = ["PersonalizationResult", "align_output", "personalization_eval",
           "rtf_benchmark", "streaming_vs_offline"]
