"""The enhancement network: config, parameters, offline graph and streaming engine."""

from .config import PVQE_S, PVQE_S_HALF, ModelConfig
from .graph import Model, build_model, check_params, enhance_offline, forward, param_shapes, spectra
from .streaming import (StreamState, align_step, apply_ccm, new_stream, pin_embedding, process_frame, reset_state,
                        run_stream)

__all__ = [
    "PVQE_S", "PVQE_S_HALF", "Model", "ModelConfig", "StreamState", "align_step", "apply_ccm", "build_model",
    "check_params", "enhance_offline", "forward", "new_stream", "param_shapes", "pin_embedding",
    "process_frame", "reset_state", "run_stream", "spectra",
]
