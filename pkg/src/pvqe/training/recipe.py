"""A full training recipe (model, trainer and data configs) as one JSON document."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import InvalidConfigError
from ..model.config import PVQE_S, PVQE_S_HALF, ModelConfig
from .synth import DataConfig
from .trainer import TrainerConfig

PRESETS = {"pvqe-s": PVQE_S, "pvqe-s-half": PVQE_S_HALF}


def model_config_from_dict(spec: dict) -> ModelConfig:
    """A ModelConfig from plain keys, optionally on top of ``"preset"``."""
    spec = dict(spec)
    preset = spec.pop("preset", None)
    if preset is None:
        return ModelConfig.from_dict(spec)
    if preset not in PRESETS:
        raise InvalidConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return ModelConfig.from_dict({**PRESETS[preset].to_dict(), **spec})


@dataclass(frozen=True)
class Recipe:
    model: ModelConfig
    trainer: TrainerConfig
    data: DataConfig

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> "Recipe":
        unknown = set(d) - {"model", "trainer", "data"}
        if unknown:
            raise InvalidConfigError(f"unknown top-level recipe keys: {sorted(unknown)}")
        tdict = dict(d.get("trainer", {}))
        if seed is not None:
            tdict["seed"] = seed
        ddict = {k: tuple(v) if isinstance(v, list) else v for k, v in d.get("data", {}).items()}
        try:
            return cls(model_config_from_dict(d.get("model", {"preset": "pvqe-s-half"})),
                       TrainerConfig(**tdict), DataConfig(**ddict))
        except TypeError as e:
            raise InvalidConfigError(str(e)) from e

    @classmethod
    def load(cls, path, seed: int | None = None) -> "Recipe":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise InvalidConfigError(f"{path}: invalid JSON ({e})") from e
        return cls.from_dict(d, seed)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "trainer": self.trainer.to_dict(), "data": self.data.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def recipe_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
