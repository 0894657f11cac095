from .embfile import dumps_embedding, loads_embedding, read_embedding, save_embedding
from .wav import read_wav, write_wav
from .weights import dumps_weights, load_weights, loads_weights, save_weights

__all__ = [
    "dumps_embedding", "dumps_weights", "load_weights", "loads_embedding", "loads_weights",
    "read_embedding", "read_wav", "save_embedding", "save_weights", "write_wav",
]
