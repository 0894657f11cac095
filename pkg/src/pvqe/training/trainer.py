"""Desk-scale training loop on synthetic mixtures."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import dsp
from ..autodiff import Tape, Tensor, backward, no_tape, ops
from ..enrollment import FBANK_DIM, fbank_embedding
from ..errors import InvalidConfigError, TrainingDivergedError
from ..model.config import ModelConfig
from ..model.graph import Model, build_model, forward, spectra
from .adam import AdamState, adam_step, clip_grad_norm
from .loss import LossConfig, compressed_mse_loss
from .synth import DataConfig, TrainingExample, example_at, voice_pool

log = logging.getLogger(__name__)

EMBEDDING_MODES = ("internal", "fbank", "zero")


@dataclass(frozen=True)
class TrainerConfig:
    lr: float = 6e-5
    weight_decay: float = 1e-7
    batch: int = 4
    iterations: int = 5000
    seed: int = 0
    clip_s: float = 2.0
    truncate: int | None = None     # BPTT window in frames; None = full clip
    embedding_mode: str = "internal"
    enroll_backprop: bool = False   # let the loss gradient reach the enrollment pass
    grad_clip: float | None = None  # global L2 norm
    warmup: int = 0                 # linear lr warm-up iterations
    checkpoint_every: int = 1000
    eval_every: int = 500
    eval_clips: int = 8
    loss_c: float = 0.3
    loss_beta: float = 0.7

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidConfigError("lr must be positive")
        if self.batch < 1 or self.iterations < 0:
            raise InvalidConfigError("batch must be >= 1 and iterations >= 0")
        if self.weight_decay < 0:
            raise InvalidConfigError("weight_decay must be non-negative")
        if self.embedding_mode not in EMBEDDING_MODES:
            raise InvalidConfigError(f"embedding_mode must be one of {EMBEDDING_MODES}")
        if self.truncate is not None and self.truncate < 1:
            raise InvalidConfigError("truncate must be a positive frame count")
        if self.clip_s <= 0:
            raise InvalidConfigError("clip_s must be positive")

    def lr_at(self, it: int) -> float:
        if self.warmup and it < self.warmup:
            return self.lr * (it + 1) / self.warmup
        return self.lr

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: Model
    losses: list = field(default_factory=list)
    evals: list = field(default_factory=list)       # (iteration, held-out loss)
    checkpoints: list = field(default_factory=list)
    seconds: float = 0.0


def batch_embeddings(model: Model, examples: list[TrainingExample], mode: str = "internal",
                     backprop: bool = False):
    """Speaker embeddings (B, K) for a batch, computed with the current weights.

    Unconditioned examples get zeros. In internal mode the enrollment clips
    run through the network with a zero embedding; unless ``backprop`` is set
    this pass is not recorded, so the result acts as a constant.
    """
    k = model.config.emb_dim
    keep = np.array([[0.0 if ex.metadata.get("unconditioned") else 1.0] for ex in examples], dtype=model.dtype)
    if mode == "zero":
        return np.zeros((len(examples), k), dtype=model.dtype)
    if mode == "fbank":
        if k != FBANK_DIM:
            raise InvalidConfigError(f"fbank mode needs emb_dim {FBANK_DIM}, model has {k}")
        return np.stack([fbank_embedding(ex.enroll).v for ex in examples]).astype(model.dtype) * keep
    if model.config.emb_dim != model.config.gru_hidden:
        raise InvalidConfigError("internal mode needs emb_dim == gru_hidden")
    n = min(ex.enroll.shape[0] for ex in examples)
    ms, fs = spectra(model, np.stack([ex.enroll[:n] for ex in examples]), None)
    zero = np.zeros((len(examples), k), dtype=model.dtype)
    if backprop:
        internal = forward(model, ms, fs, zero, until_embedding=True).internal
        return ops.mul(ops.mean(internal, axis=1), keep)
    with no_tape():
        internal = forward(model, ms, fs, zero, until_embedding=True).internal
    return internal.data.mean(axis=1) * keep


def batch_loss(model: Model, examples: list[TrainingExample], tcfg: TrainerConfig, emb=None) -> Tensor:
    """Compressed loss of the model's estimate against each example's target."""
    if emb is None:
        emb = batch_embeddings(model, examples, tcfg.embedding_mode, tcfg.enroll_backprop)
    ms, fs = spectra(model, np.stack([ex.mic for ex in examples]), np.stack([ex.farend for ex in examples]))
    win = model.window
    target = np.stack([dsp.stft(ex.target, win) for ex in examples])
    est = forward(model, ms, fs, emb, truncate=tcfg.truncate).estimate
    return compressed_mse_loss(target, est, LossConfig(tcfg.loss_c, tcfg.loss_beta))


def train_step(model: Model, examples: list[TrainingExample], tcfg: TrainerConfig, state: AdamState,
               lr: float | None = None) -> tuple[float, float]:
    """One optimizer step. Returns (loss, pre-clip gradient norm)."""
    model.params.require_grad(True)
    with Tape() as tape:
        loss = batch_loss(model, examples, tcfg)
    value = float(loss.data)
    if not math.isfinite(value):
        raise TrainingDivergedError(f"loss became {value} at step {state.t + 1}")
    grads = backward(tape, loss)
    norm = clip_grad_norm(grads, tcfg.grad_clip) if tcfg.grad_clip else \
        float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if not math.isfinite(norm):
        raise TrainingDivergedError(f"gradient norm became {norm} at step {state.t + 1} (loss {value:.6g})")
    step_cfg = _StepCfg(tcfg.lr if lr is None else lr, tcfg.weight_decay)
    adam_step(model.params, grads, state, step_cfg)
    return value, norm


@dataclass(frozen=True)
class _StepCfg:
    lr: float
    weight_decay: float


def heldout_loss(model: Model, tcfg: TrainerConfig, dcfg: DataConfig, pool=None, n: int | None = None) -> float:
    exs = [example_at(dcfg, tcfg.seed + 1_000_003, i, pool) for i in range(n or tcfg.eval_clips)]
    with no_tape():
        vals = [float(batch_loss(model, exs[i:i + tcfg.batch], tcfg).data)
                for i in range(0, len(exs), tcfg.batch)]
    return float(np.mean(vals))


def train(model_cfg: ModelConfig, tcfg: TrainerConfig, dcfg: DataConfig, out_dir=None,
          model: Model | None = None, progress=None) -> TrainResult:
    """Train on a deterministic stream of synthetic mixtures.

    Writes ``loss.csv`` (iteration, loss, lr), ``eval.csv`` and periodic
    ``ckpt_XXXXXX.pvqe`` weight files plus ``final.pvqe`` into ``out_dir``
    when given. ``progress(it, loss)`` is called after each step.
    """
    from ..io.weights import save_weights

    if dcfg.clip_s != tcfg.clip_s:
        dcfg = DataConfig(**{**dcfg.to_dict(), "clip_s": tcfg.clip_s})
    model = model or build_model(model_cfg, seed=tcfg.seed)
    pool = voice_pool(dcfg.n_voices, dcfg.voice_seed) if dcfg.n_voices else None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    res = TrainResult(model)
    state = AdamState()
    t0 = time.perf_counter()
    loss_file = open(out / "loss.csv", "w", newline="") if out is not None else None
    try:
        writer = csv.writer(loss_file) if loss_file else None
        if writer:
            writer.writerow(["iteration", "loss", "lr"])
        for it in range(tcfg.iterations):
            batch = [example_at(dcfg, tcfg.seed, it * tcfg.batch + j, pool) for j in range(tcfg.batch)]
            lr = tcfg.lr_at(it)
            try:
                value, norm = train_step(model, batch, tcfg, state, lr)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(f"iteration {it}: {e}") from e
            res.losses.append(value)
            if writer:
                writer.writerow([it, repr(value), repr(lr)])
            if progress:
                progress(it, value)
            done = it + 1
            if tcfg.eval_every and done % tcfg.eval_every == 0:
                res.evals.append((done, heldout_loss(model, tcfg, dcfg, pool)))
                log.info("iteration %d: held-out loss %.5f", done, res.evals[-1][1])
            if out is not None and tcfg.checkpoint_every and done % tcfg.checkpoint_every == 0:
                path = out / f"ckpt_{done:06d}.pvqe"
                save_weights(model, path)
                res.checkpoints.append(path)
    finally:
        if loss_file:
            loss_file.close()
    model.params.require_grad(False)
    if out is not None:
        save_weights(model, out / "final.pvqe")
        res.checkpoints.append(out / "final.pvqe")
        if res.evals:
            with open(out / "eval.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["iteration", "heldout_loss"])
                w.writerows(res.evals)
    res.seconds = time.perf_counter() - t0
    return res
