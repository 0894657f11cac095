"""Speaker embeddings from enrollment audio.

Four strategies: the network's own averaged post-GRU state ("internal"),
log-mel statistics ("fbank"), an all-zero vector ("zero", no
personalization) and vectors produced elsewhere ("external").
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import dsp
from .autodiff import no_tape
from .errors import InvalidConfigError, InvalidInputError
from .model.graph import Model, forward, spectra
from .model.streaming import new_stream, process_frame

FBANK_DIM = 160


class Provenance(enum.IntEnum):
    INTERNAL = 0
    FBANK = 1
    ZERO = 2
    EXTERNAL = 3

    def __str__(self):
        return self.name.lower()


@dataclass(frozen=True, eq=False)
class SpeakerEmbedding:
    v: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        v = np.asarray(self.v)
        if v.ndim != 1 or v.size == 0:
            raise InvalidInputError("embedding must be a non-empty vector")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("embedding contains non-finite values")
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def dim(self) -> int:
        return int(self.v.shape[0])

    def __eq__(self, other):
        return (isinstance(other, SpeakerEmbedding) and self.provenance == other.provenance
                and np.array_equal(self.v, other.v))

    def __repr__(self):
        return f"SpeakerEmbedding(dim={self.dim}, provenance={self.provenance})"


def _check_internal(model: Model):
    cfg = model.config
    if cfg.emb_dim != cfg.gru_hidden:
        raise InvalidConfigError(
            f"internal embeddings have length {cfg.gru_hidden} but the model fuses {cfg.emb_dim}-dim embeddings")


def energy_gate(audio: np.ndarray, hop: int, floor_db: float = 40.0) -> np.ndarray:
    """Boolean mask over enrollment frames: True where the frame's energy is
    within ``floor_db`` of the loudest frame."""
    frames = dsp.frame_signal(audio, 2 * hop, hop)
    e = (frames ** 2).sum(axis=1)
    peak = e.max()
    if peak <= 0:
        return np.ones(e.shape[0], dtype=bool)
    return e >= peak * 10.0 ** (-floor_db / 10.0)


def frame_embeddings(model: Model, audio: np.ndarray, engine: str = "stream") -> np.ndarray:
    """Per-frame internal embeddings (T, H) with a zero speaker embedding and
    a silent far end. ``engine="offline"`` runs the whole clip at once and
    stops after the temporal block; both give the same values to float
    rounding."""
    _check_internal(model)
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.shape[0] < 2 * model.hop:
        raise InvalidInputError("enrollment audio must hold at least one full frame")
    zero = np.zeros(model.config.emb_dim)
    if engine == "offline":
        ms, fs = spectra(model, audio, None)
        with no_tape():
            return forward(model, ms, fs, zero, until_embedding=True).internal.data[0]
    if engine != "stream":
        raise InvalidInputError(f"unknown engine {engine!r}")
    st = new_stream(model, zero)
    hop = model.hop
    n = -(-audio.shape[0] // hop)
    padded = np.zeros(n * hop)
    padded[:audio.shape[0]] = audio
    out = np.empty((n, model.config.gru_hidden), dtype=model.dtype)
    for k in range(n):
        process_frame(model, st, padded[k * hop:(k + 1) * hop], None)
        out[k] = st.last_internal
    return out


def average_frames(frames: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    frames = np.asarray(frames)
    if mask is not None:
        frames = frames[mask]
    if frames.shape[0] == 0:
        raise InvalidInputError("no enrollment frames to average")
    return frames.mean(axis=0, dtype=np.float64)


def extract_internal_embedding(model: Model, enroll_audio: np.ndarray, engine: str = "stream",
                               gate_db: float | None = None) -> SpeakerEmbedding:
    """Average of the post-GRU layer-norm output over every enrollment frame.

    The pass uses a private stream state, a zero initial speaker embedding
    and a silent far end. ``gate_db`` optionally drops frames more than that
    many dB below the loudest one.
    """
    frames = frame_embeddings(model, enroll_audio, engine)
    mask = energy_gate(np.asarray(enroll_audio, dtype=np.float64), model.hop, gate_db) \
        if gate_db is not None else None
    return SpeakerEmbedding(average_frames(frames, mask), Provenance.INTERNAL)


def fbank_embedding(enroll_audio: np.ndarray, cfg: dsp.FeatureConfig = dsp.FeatureConfig()) -> SpeakerEmbedding:
    """Temporal mean and population std of 80 log-mel bands (160 values)."""
    audio = np.asarray(enroll_audio, dtype=np.float64)
    if audio.ndim != 1 or audio.shape[0] < cfg.win_len + cfg.hop:
        raise InvalidInputError("fbank embedding needs at least two full frames")
    feats = dsp.logmel_80(audio, cfg)
    return SpeakerEmbedding(np.concatenate([feats.mean(axis=0), feats.std(axis=0)]), Provenance.FBANK)


def zero_embedding(dim: int) -> SpeakerEmbedding:
    if dim <= 0:
        raise InvalidInputError("embedding dimension must be positive")
    return SpeakerEmbedding(np.zeros(dim), Provenance.ZERO)


def load_external_embedding(path) -> SpeakerEmbedding:
    """Read a vector produced by some other model; the values are used as-is."""
    from .io.embfile import read_embedding
    emb = read_embedding(path)
    return SpeakerEmbedding(emb.v, Provenance.EXTERNAL)


def check_fits(model: Model, emb: SpeakerEmbedding) -> None:
    if emb.dim != model.config.emb_dim:
        raise InvalidConfigError(
            f"{emb.provenance} embedding of length {emb.dim} does not fit a model built for {model.config.emb_dim}")
