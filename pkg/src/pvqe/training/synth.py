"""Toy speech: source-filter voices and noisy, echoey two-voice mixtures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfigError, InvalidInputError

SR = 16000


@dataclass(frozen=True)
class SyntheticVoice:
    """A speaker: pitch, spectral envelope and speaking rate.

    ``formants`` holds two (centre Hz, bandwidth Hz, gain dB) peaks on top of
    a ``tilt_db`` per-octave slope.
    """

    f0: float
    tilt_db: float = -6.0
    formants: tuple = ((500.0, 120.0, 12.0), (1500.0, 200.0, 8.0))
    am_rate: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not 80.0 <= self.f0 <= 400.0:
            raise InvalidConfigError(f"f0 must lie in [80, 400] Hz, got {self.f0}")
        if self.am_rate <= 0:
            raise InvalidConfigError("am_rate must be positive")

    def envelope(self, freqs: np.ndarray) -> np.ndarray:
        """Linear amplitude response at ``freqs`` (Hz)."""
        f = np.maximum(np.asarray(freqs, dtype=np.float64), 50.0)
        db = self.tilt_db * np.log2(f / 100.0)
        for fc, bw, g in self.formants:
            db = db + g * np.exp(-0.5 * ((f - fc) / bw) ** 2)
        return 10.0 ** (db / 20.0)


def flat_voice(f0: float, seed: int = 0) -> SyntheticVoice:
    return SyntheticVoice(f0=f0, tilt_db=0.0, formants=(), seed=seed)


def random_voice(rng: np.random.Generator, seed: int = 0) -> SyntheticVoice:
    f0 = float(np.exp(rng.uniform(np.log(85.0), np.log(380.0))))
    f1 = rng.uniform(300.0, 900.0)
    f2 = rng.uniform(max(f1 + 400.0, 1000.0), 2800.0)
    return SyntheticVoice(
        f0=f0,
        tilt_db=float(rng.uniform(-9.0, -3.0)),
        formants=((float(f1), float(rng.uniform(80, 200)), float(rng.uniform(6, 15))),
                  (float(f2), float(rng.uniform(120, 300)), float(rng.uniform(4, 12)))),
        am_rate=float(rng.uniform(3.0, 6.0)),
        seed=seed,
    )


def voice_pool(n: int, seed: int = 0) -> list[SyntheticVoice]:
    """``n`` voices spread over the pitch range (log-spaced f0 with jitter)."""
    if n < 2:
        raise InvalidConfigError("a voice pool needs at least two voices")
    rng = np.random.default_rng([seed, 7919])
    f0s = np.exp(np.linspace(np.log(90.0), np.log(360.0), n))
    rng.shuffle(f0s)
    voices = []
    for i, f0 in enumerate(f0s):
        v = random_voice(rng, seed=i)
        f0 = float(np.clip(f0 * np.exp(rng.uniform(-0.04, 0.04)), 80.0, 400.0))
        voices.append(SyntheticVoice(f0, v.tilt_db, v.formants, v.am_rate, i))
    return voices


def _syllable_envelope(n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    env = np.zeros(n)
    period = SR / rate
    pos = rng.uniform(0, 0.5) * period
    while pos < n:
        length = int(period * rng.uniform(0.6, 0.95))
        if rng.random() > 0.15:
            a, b = int(pos), min(int(pos) + length, n)
            if b > a:
                t = np.linspace(0.0, np.pi, b - a, endpoint=False)
                env[a:b] = rng.uniform(0.5, 1.0) * np.sin(t) ** 0.7
        pos += period * rng.uniform(0.8, 1.3)
        if rng.random() < 0.08:
            pos += period * rng.uniform(1.0, 3.0)   # pause
    if not env.any():
        # short clips can fall entirely into a pause; keep one syllable
        b = max(1, min(n, int(0.8 * period)))
        env[:b] = np.sin(np.linspace(0.0, np.pi, b, endpoint=False)) ** 0.7 if b > 1 else 1.0
    return env


def synth_voice_utterance(voice: SyntheticVoice, duration: float, seed: int) -> np.ndarray:
    """One utterance: a glottal-like harmonic source shaped by the voice's
    envelope, with intonation drift, syllable bursts and a little breath
    noise. Peak-normalized to 0.5."""
    if duration <= 0:
        raise InvalidInputError("duration must be positive")
    rng = np.random.default_rng([voice.seed, int(seed), 104729])
    n = max(1, int(round(duration * SR)))
    t = np.arange(n) / SR
    drift = 0.06 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
    walk = np.cumsum(rng.standard_normal(n)) / np.sqrt(SR) * 0.02
    f0 = voice.f0 * np.exp(drift + walk - walk.mean())
    phase = 2 * np.pi * np.cumsum(f0) / SR
    k_max = int(7600 // f0.max())
    src = np.zeros(n)
    for k in range(1, k_max + 1):
        src += np.sin(k * phase) / k
    src += 0.03 * rng.standard_normal(n) * np.sqrt(k_max)
    spec = np.fft.rfft(src)
    spec *= voice.envelope(np.fft.rfftfreq(n, 1.0 / SR))
    x = np.fft.irfft(spec, n=n) * _syllable_envelope(n, voice.am_rate, rng)
    peak = np.max(np.abs(x))
    return x * (0.5 / peak) if peak > 0 else x


@dataclass(frozen=True)
class DataConfig:
    clip_s: float = 2.0
    enroll_s: float = 3.0
    p_interferer: float = 0.3
    sir_db: tuple = (0.0, 20.0)
    snr_db: tuple = (0.0, 40.0)
    p_pink: float = 0.5
    p_echo: float = 0.5
    echo_delay_ms: tuple = (10.0, 500.0)
    ser_db: tuple = (-10.0, 10.0)
    echo_cutoff_hz: tuple = (3000.0, 7000.0)
    p_noisy_enroll: float = 0.5
    # toy-scale extras; both 0 reproduce the plain recipe
    p_target_silent: float = 0.0
    p_unconditioned: float = 0.0
    level_db: tuple = (-10.0, 0.0)
    n_voices: int = 0          # 0: a fresh random voice for every example
    voice_seed: int = 0
    paired: bool = False       # odd examples replay the previous mixture with the voices' roles swapped

    def __post_init__(self):
        for name in ("p_interferer", "p_pink", "p_echo", "p_noisy_enroll", "p_target_silent", "p_unconditioned"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfigError(f"{name} must be a probability")
        if self.clip_s <= 0 or self.enroll_s <= 0:
            raise InvalidConfigError("clip and enrollment lengths must be positive")
        for name in ("sir_db", "snr_db", "echo_delay_ms", "ser_db", "echo_cutoff_hz", "level_db"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidConfigError(f"{name} range is reversed")
        if self.n_voices == 1 or self.n_voices < 0:
            raise InvalidConfigError("n_voices must be 0 or at least 2")

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class TrainingExample:
    mic: np.ndarray
    farend: np.ndarray
    target: np.ndarray
    enroll: np.ndarray
    metadata: dict = field(default_factory=dict)
    components: dict = field(default_factory=dict)


def _energy(x):
    return float(np.dot(x, x))


def _scale_to(x: np.ndarray, ref_energy: float, ratio_db: float) -> np.ndarray:
    """Scale ``x`` so that 10*log10(ref_energy / E(x)) == ratio_db."""
    e = _energy(x)
    if e == 0 or ref_energy == 0:
        return np.zeros_like(x)
    return x * np.sqrt(ref_energy / e * 10.0 ** (-ratio_db / 10.0))


def _noise(n: int, pink: bool, rng) -> np.ndarray:
    w = rng.standard_normal(n)
    if not pink:
        return w
    spec = np.fft.rfft(w)
    f = np.fft.rfftfreq(n, 1.0 / SR)
    spec[1:] /= np.sqrt(f[1:] / f[1])
    spec[0] = 0.0
    return np.fft.irfft(spec, n=n)


def lowpass_fir(cutoff_hz: float, taps: int = 63) -> np.ndarray:
    """Hamming-windowed sinc low-pass with unit DC gain."""
    m = np.arange(taps) - (taps - 1) / 2
    h = np.sinc(2 * cutoff_hz / SR * m) * np.hamming(taps)
    return h / h.sum()


def _echo(far: np.ndarray, delay: int, cutoff: float) -> np.ndarray:
    h = lowpass_fir(cutoff)
    y = np.convolve(far, h)[:far.shape[0]]
    out = np.zeros_like(far)
    if delay < far.shape[0]:
        out[delay:] = y[:far.shape[0] - delay]
    return out


def synth_mixture(voice_a: SyntheticVoice, voice_b: SyntheticVoice, cfg: DataConfig,
                  rng: np.random.Generator, far_voice: SyntheticVoice | None = None) -> TrainingExample:
    """Target from ``voice_a`` plus optional ``voice_b`` interference, noise and echo.

    ``components`` keeps each additive part of ``mic`` (target, interferer,
    noise, echo), so ``mic`` is exactly their sum. An "unconditioned"
    example keeps every talker in ``target`` and is meant to be trained with
    a zero embedding.
    """
    if voice_a == voice_b:
        raise InvalidInputError("target and interferer voices must differ")
    n = int(round(cfg.clip_s * SR))
    u = lambda r: float(rng.uniform(*r))  # noqa: E731
    seeds = rng.integers(0, 2**31, size=5)
    speech = synth_voice_utterance(voice_a, cfg.clip_s, int(seeds[0]))
    ref_e = _energy(speech)
    meta: dict = {"target_voice": voice_a.seed, "interferer_voice": None, "sir_db": None,
                  "snr_db": None, "echo_gain": 0.0, "echo_delay_ms": None, "target_silent": False,
                  "unconditioned": False}
    target = speech
    if rng.random() < cfg.p_target_silent:
        target = np.zeros(n)
        meta["target_silent"] = True
    interferer = np.zeros(n)
    if rng.random() < cfg.p_interferer or meta["target_silent"]:
        sir = u(cfg.sir_db)
        interferer = _scale_to(synth_voice_utterance(voice_b, cfg.clip_s, int(seeds[1])), ref_e, sir)
        meta.update(interferer_voice=voice_b.seed, sir_db=sir)
    snr = u(cfg.snr_db)
    noise = _scale_to(_noise(n, rng.random() < cfg.p_pink, rng), ref_e, snr)
    meta["snr_db"] = snr
    far = np.zeros(n)
    echo = np.zeros(n)
    if rng.random() < cfg.p_echo:
        fv = far_voice or random_voice(rng, seed=int(seeds[2]) + 1_000_000)
        far = synth_voice_utterance(fv, cfg.clip_s, int(seeds[3]))
        delay = int(round(u(cfg.echo_delay_ms) * SR / 1000))
        raw = _echo(far, delay, u(cfg.echo_cutoff_hz))
        echo = _scale_to(raw, ref_e, u(cfg.ser_db))
        e_raw = _energy(raw)
        meta.update(echo_gain=float(np.sqrt(_energy(echo) / e_raw)) if e_raw > 0 else 0.0,
                    echo_delay_ms=delay * 1000.0 / SR)
    if rng.random() < cfg.p_unconditioned:
        meta["unconditioned"] = True
    gain = 10.0 ** (u(cfg.level_db) / 20.0)
    comps = {"target": target * gain, "interferer": interferer * gain, "noise": noise * gain, "echo": echo * gain}
    mic = comps["target"] + comps["interferer"] + comps["noise"] + comps["echo"]
    ref = comps["target"] + comps["interferer"] if meta["unconditioned"] else comps["target"]
    enroll = synth_voice_utterance(voice_a, cfg.enroll_s, int(seeds[4]) + 1)
    if rng.random() < cfg.p_noisy_enroll:
        enroll = enroll + _scale_to(_noise(enroll.shape[0], rng.random() < cfg.p_pink, rng),
                                    _energy(enroll), u(cfg.snr_db))
    meta["gain"] = gain
    return TrainingExample(mic, far * gain, ref, enroll, meta, comps)


def _pick_voices(rng, pool):
    if pool:
        i, j = rng.choice(len(pool), size=2, replace=False)
        return pool[int(i)], pool[int(j)]
    s = rng.integers(0, 2**31, size=2)
    a = random_voice(rng, seed=int(s[0]))
    b = random_voice(rng, seed=int(s[1]) + 1)
    while b == a:
        b = random_voice(rng, seed=b.seed + 1)
    return a, b


def _enrollment(voice: SyntheticVoice, cfg: DataConfig, rng: np.random.Generator) -> np.ndarray:
    enroll = synth_voice_utterance(voice, cfg.enroll_s, int(rng.integers(0, 2**31)) + 1)
    if rng.random() < cfg.p_noisy_enroll:
        enroll = enroll + _scale_to(_noise(enroll.shape[0], rng.random() < cfg.p_pink, rng),
                                    _energy(enroll), float(rng.uniform(*cfg.snr_db)))
    return enroll


def swap_roles(ex: TrainingExample, voice_b: SyntheticVoice, cfg: DataConfig,
               rng: np.random.Generator) -> TrainingExample:
    """The same ``mic`` with ``voice_b`` as the enrolled talker.

    The target becomes the interferer component (silence if there was none)
    and the old target is now the interferer. Unconditioned examples are
    returned unchanged.
    """
    if ex.metadata.get("unconditioned"):
        return ex
    c = ex.components
    comps = {**c, "target": c["interferer"], "interferer": c["target"]}
    meta = dict(ex.metadata)
    sir = meta.get("sir_db")
    meta.update(swapped=True, target_voice=voice_b.seed,
                interferer_voice=None if meta.get("target_silent") else meta["target_voice"],
                target_silent=not c["interferer"].any(), sir_db=None if sir is None else -sir)
    return TrainingExample(ex.mic, ex.farend, comps["target"].copy(), _enrollment(voice_b, cfg, rng), meta, comps)


def example_at(cfg: DataConfig, seed: int, index: int, pool: list | None = None) -> TrainingExample:
    """Deterministic example number ``index`` of the stream seeded by ``seed``."""
    if cfg.paired and index % 2:
        rng0 = np.random.default_rng([int(seed), int(index) - 1])
        a, b = _pick_voices(rng0, pool)
        base = synth_mixture(a, b, cfg, rng0)
        return swap_roles(base, b, cfg, np.random.default_rng([int(seed), int(index)]))
    rng = np.random.default_rng([int(seed), int(index)])
    a, b = _pick_voices(rng, pool)
    return synth_mixture(a, b, cfg, rng)
