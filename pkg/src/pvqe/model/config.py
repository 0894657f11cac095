from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from ..errors import InvalidConfigError


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the enhancement network (defaults: PVQE-S)."""

    bins: int = 161
    far_filters: tuple = (8, 24)
    mic_filters: tuple = (16, 40)
    comb_filters: tuple = (56, 24)
    dec_filters: tuple = (40, 32, 32, 27)
    kernel: tuple = (2, 3)
    stride_f: int = 2
    res_expansion: float = 0.7
    branch_residual: bool = False
    align_history: int = 100
    align_dim: int = 64
    align_reduce: int = 4
    gru_hidden: int = 256
    fusion_size: int = 240
    emb_dim: int = 256
    ccm_taps_t: int = 2
    ccm_taps_f: int = 3
    compress_exp: float = 0.3
    ln_eps: float = 1e-5

    def __post_init__(self):
        for f in ("far_filters", "mic_filters", "comb_filters", "dec_filters", "kernel"):
            object.__setattr__(self, f, tuple(int(v) for v in getattr(self, f)))
        self.validate()

    def validate(self):
        ints = [self.bins, self.stride_f, self.align_history, self.align_dim, self.align_reduce,
                self.gru_hidden, self.fusion_size, self.emb_dim, self.ccm_taps_t, self.ccm_taps_f,
                *self.far_filters, *self.mic_filters, *self.comb_filters, *self.dec_filters, *self.kernel]
        if any(v <= 0 for v in ints):
            raise InvalidConfigError("all sizes and counts must be positive")
        if len(self.far_filters) != 2 or len(self.mic_filters) != 2 or len(self.comb_filters) != 2:
            raise InvalidConfigError("branch and combined encoders have exactly two blocks each")
        if len(self.dec_filters) != 4:
            raise InvalidConfigError("decoder has exactly four blocks")
        if self.kernel[1] % 2 == 0 or self.ccm_taps_f % 2 == 0:
            raise InvalidConfigError("frequency kernel sizes must be odd")
        if not 0.0 < self.res_expansion:
            raise InvalidConfigError("res_expansion must be positive")
        if not 0.0 < self.compress_exp <= 1.0:
            raise InvalidConfigError("compress_exp must lie in (0, 1]")

    # frequency sizes along the encoder/decoder schedule
    def enc_freqs(self) -> list[int]:
        f = [self.bins]
        for _ in range(4):
            f.append(-(-f[-1] // self.stride_f))
        return f

    def dec_freqs(self) -> list[int]:
        f = [self.enc_freqs()[-1]]
        for _ in range(4):
            f.append(f[-1] * self.stride_f)
        return f

    @property
    def flat_dim(self) -> int:
        return self.comb_filters[-1] * self.enc_freqs()[-1]

    def res_hidden(self, channels: int) -> int:
        return max(1, int(round(self.res_expansion * channels)))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown model config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise InvalidConfigError(str(e)) from e

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def scaled(self, factor: float = 0.5, gru_hidden: int | None = None) -> "ModelConfig":
        """Same topology with every channel count multiplied by ``factor``."""
        s = lambda t: tuple(max(1, int(round(v * factor))) for v in t)  # noqa: E731
        hidden = gru_hidden or max(1, int(round(self.gru_hidden * factor)))
        return replace(self, far_filters=s(self.far_filters), mic_filters=s(self.mic_filters),
                       comb_filters=s(self.comb_filters), dec_filters=s(self.dec_filters),
                       fusion_size=max(1, int(round(self.fusion_size * factor))),
                       align_dim=max(1, int(round(self.align_dim * factor))),
                       gru_hidden=hidden, emb_dim=hidden)


PVQE_S = ModelConfig()
# desk-scale training config: half the channels, GRU 128
PVQE_S_HALF = PVQE_S.scaled(0.5, gru_hidden=128)
