"""Loss, optimizer, synthetic data and the training loop."""

from .adam import AdamConfig, AdamState, adam_step, clip_grad_norm
from .loss import LossConfig, compressed_mse_loss
from .recipe import Recipe, model_config_from_dict
from .synth import (DataConfig, SyntheticVoice, TrainingExample, example_at, flat_voice, random_voice,
                    synth_mixture, synth_voice_utterance, voice_pool)
from .trainer import (TrainerConfig, TrainResult, batch_embeddings, batch_loss, heldout_loss, train,
                      train_step)

__all__ = [
    "AdamConfig", "AdamState", "DataConfig", "LossConfig", "Recipe", "SyntheticVoice", "TrainResult", "TrainerConfig",
    "TrainingExample", "adam_step", "batch_embeddings", "batch_loss", "clip_grad_norm", "compressed_mse_loss",
    "example_at", "flat_voice", "heldout_loss", "model_config_from_dict", "random_voice", "synth_mixture", "synth_voice_utterance",
    "train", "train_step", "voice_pool",
]
