"""Streaming personalized speech enhancement with self-derived speaker embeddings."""

from .dsp import FeatureConfig
from .enrollment import (Provenance, SpeakerEmbedding, extract_internal_embedding, fbank_embedding,
                         zero_embedding)
from .model import PVQE_S, PVQE_S_HALF, Model, ModelConfig, build_model, new_stream, process_frame

__version__ = "0.1.0"
