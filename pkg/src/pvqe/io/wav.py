"""16 kHz mono 16-bit PCM WAV only; anything else is rejected, never resampled."""

from __future__ import annotations

import wave

import numpy as np

from ..errors import UnsupportedFormatError

SAMPLE_RATE = 16000


def read_wav(path) -> np.ndarray:
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise UnsupportedFormatError(f"{path}: compression {w.getcomptype()!r} (need PCM)")
            if w.getnchannels() != 1:
                raise UnsupportedFormatError(f"{path}: channels={w.getnchannels()} (need 1)")
            if w.getsampwidth() != 2:
                raise UnsupportedFormatError(f"{path}: sample width={8 * w.getsampwidth()} bit (need 16)")
            if w.getframerate() != SAMPLE_RATE:
                raise UnsupportedFormatError(f"{path}: sample rate={w.getframerate()} Hz (need {SAMPLE_RATE})")
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as e:
        raise UnsupportedFormatError(f"{path}: not a PCM RIFF/WAVE file ({e})") from e
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples: np.ndarray) -> None:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0 - 1.0 / 32768.0)
    pcm = np.rint(x * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())
