"""Streaming STFT front-end: sqrt-Hann analysis/synthesis, power-law
compression and log-mel features.

A spectrum frame is a 1-D complex numpy array of ``bins`` values. Framing
is causal: the frame produced after chunk ``k`` covers input samples
``[(k - 1) * hop, (k + 1) * hop)``, with zeros before the stream start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    win_len: int = 320
    hop: int = 160
    dft_len: int = 320
    compress_exp: float = 0.3

    def __post_init__(self):
        if self.win_len != self.dft_len:
            raise InvalidConfigError("win_len must equal dft_len")
        if self.win_len < 2 or self.win_len % 2:
            raise InvalidConfigError("win_len must be even and >= 2")
        if self.hop * 2 != self.win_len:
            raise InvalidConfigError("hop must be half the window length")
        if not 0.0 < self.compress_exp <= 1.0:
            raise InvalidConfigError("compress_exp must lie in (0, 1]")

    @property
    def bins(self) -> int:
        return self.dft_len // 2 + 1


def make_sqrt_hann(n: int) -> np.ndarray:
    """Periodic square-root Hann window of length ``n``.

    Used for both analysis and synthesis; the squared window is COLA at hop n/2.
    """
    if n < 2 or n % 2:
        raise InvalidConfigError(f"window length must be even and >= 2, got {n}")
    k = np.arange(n)
    w = np.sqrt(0.5 * (1.0 - np.cos(2.0 * np.pi * k / n)))
    # sqrt of a rounding-level negative at k=0
    w[0] = 0.0
    return w


def stft_frame(samples: np.ndarray, win: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples)
    if samples.ndim != 1 or samples.shape[0] != win.shape[0]:
        raise InvalidInputError(
            f"expected {win.shape[0]} samples, got shape {samples.shape}")
    return np.fft.rfft(samples * win)


class OverlapAdd:
    """Synthesis state for one stream: holds the previous frame's tail."""

    def __init__(self, win: np.ndarray):
        self.win = win
        self.hop = win.shape[0] // 2
        self.tail = np.zeros(self.hop)

    def reset(self):
        self.tail[:] = 0.0

    def push(self, frame: np.ndarray) -> np.ndarray:
        return istft_overlap_add(frame, self.win, self)


def istft_overlap_add(frame: np.ndarray, win: np.ndarray, state: OverlapAdd) -> np.ndarray:
    n = win.shape[0]
    frame = np.asarray(frame)
    if frame.shape != (n // 2 + 1,):
        raise InvalidInputError(f"expected {n // 2 + 1} bins, got {frame.shape}")
    y = np.fft.irfft(frame, n=n) * win
    hop = n // 2
    out = state.tail + y[:hop]
    state.tail = y[hop:].copy()
    return out


class Framer:
    """Sliding analysis buffer: each ``push`` of ``hop`` samples yields one frame."""

    def __init__(self, win_len: int, hop: int):
        self.buf = np.zeros(win_len)
        self.hop = hop

    def reset(self):
        self.buf[:] = 0.0

    def push(self, chunk: np.ndarray) -> np.ndarray:
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.shape != (self.hop,):
            raise InvalidInputError(f"expected a chunk of {self.hop} samples, got {chunk.shape}")
        self.buf[:-self.hop] = self.buf[self.hop:]
        self.buf[-self.hop:] = chunk
        return self.buf


def frame_signal(audio: np.ndarray, win_len: int, hop: int) -> np.ndarray:
    """Offline equivalent of feeding ``audio`` through a :class:`Framer`.

    ``len(audio)`` is zero-padded up to a multiple of ``hop``.
    """
    audio = np.asarray(audio, dtype=np.float64)
    n = -(-audio.shape[0] // hop) * hop
    padded = np.zeros(win_len - hop + n)
    padded[win_len - hop:win_len - hop + audio.shape[0]] = audio
    n_frames = n // hop
    idx = np.arange(n_frames)[:, None] * hop + np.arange(win_len)[None, :]
    return padded[idx]


def stft(audio: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Causal STFT of a whole signal, shape (frames, bins)."""
    n = win.shape[0]
    return np.fft.rfft(frame_signal(audio, n, n // 2) * win, axis=-1)


def istft(spec: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Overlap-add of every frame in ``spec``; output sample ``k * hop + j``
    equals what a streaming :class:`OverlapAdd` emits on frame ``k``.
    """
    n = win.shape[0]
    hop = n // 2
    frames = np.fft.irfft(spec, n=n, axis=-1) * win
    out = frames[:, :hop].copy()
    out[1:] += frames[:-1, hop:]
    return out.reshape(-1)


def compress(x: np.ndarray, c: float) -> np.ndarray:
    """Power-law magnitude compression ``|x|**c`` with the phase kept.

    Zero bins stay zero (their phase is taken as 0).
    """
    if not 0.0 < c <= 1.0:
        raise InvalidConfigError("compression exponent must lie in (0, 1]")
    x = np.asarray(x)
    mag = np.abs(x)
    nz = mag > 0
    scale = np.zeros(mag.shape, dtype=mag.dtype)
    scale[nz] = mag[nz] ** (c - 1.0)
    return x * scale


def decompress(x: np.ndarray, c: float) -> np.ndarray:
    if not 0.0 < c <= 1.0:
        raise InvalidConfigError("compression exponent must lie in (0, 1]")
    x = np.asarray(x)
    mag = np.abs(x)
    nz = mag > 0
    scale = np.zeros(mag.shape, dtype=mag.dtype)
    scale[nz] = mag[nz] ** (1.0 / c - 1.0)
    return x * scale


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(n_mels: int = 80, fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


def mel_filterbank(cfg: FeatureConfig = FeatureConfig(), n_mels: int = 80,
                   fmin: float = 0.0, fmax: float = 8000.0, oversample: int = 32) -> np.ndarray:
    """HTK-mel triangles, shape (n_mels, bins).

    Each weight is the triangle averaged over the bin's frequency cell rather
    than sampled at the bin centre; the lowest bands are narrower than one
    bin and would otherwise come out empty.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    df = cfg.sample_rate / cfg.dft_len
    offs = (np.arange(oversample) + 0.5) / oversample - 0.5
    f = (np.arange(cfg.bins)[:, None] + offs[None, :]) * df
    lo, mid, hi = edges[:-2, None, None], edges[1:-1, None, None], edges[2:, None, None]
    up = (f[None] - lo) / (mid - lo)
    down = (hi - f[None]) / (hi - mid)
    tri = np.clip(np.minimum(up, down), 0.0, None)
    return tri.mean(axis=-1)


def logmel_80(audio: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Log mel-band energies, shape (frames, 80).

    Frames are the full ``win_len`` windows that fit in ``audio`` (no padding).
    """
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.shape[0] < cfg.win_len:
        raise InvalidInputError("audio must hold at least one full frame")
    n_frames = 1 + (audio.shape[0] - cfg.win_len) // cfg.hop
    idx = np.arange(n_frames)[:, None] * cfg.hop + np.arange(cfg.win_len)[None, :]
    win = make_sqrt_hann(cfg.win_len)
    power = np.abs(np.fft.rfft(audio[idx] * win, axis=-1)) ** 2
    energies = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(energies, LOG_FLOOR))
