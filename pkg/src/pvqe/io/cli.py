"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr; results go to stdout or to the paths given with --out/--report.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from ..errors import PVQEError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _seed(default: int) -> int:
    env = os.environ.get("PVQE_SEED")
    if env is None or env == "":
        return default
    try:
        return int(env)
    except ValueError as e:
        raise _UsageError(f"PVQE_SEED must be an integer, got {env!r}") from e


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise _UsageError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise _UsageError(f"{path}: invalid JSON ({e})") from e


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _model_config(spec: dict):
    from ..training.recipe import model_config_from_dict
    return model_config_from_dict(spec)


# ---------------------------------------------------------------- commands

def cmd_enroll(args) -> int:
    from ..enrollment import extract_internal_embedding, fbank_embedding, zero_embedding
    from .embfile import save_embedding
    from .wav import read_wav
    from .weights import load_weights

    model = load_weights(args.model)
    if args.mode == "zero":
        emb = zero_embedding(model.config.emb_dim)
    else:
        audio = read_wav(args.audio)
        if args.mode == "fbank":
            emb = fbank_embedding(audio)
        else:
            emb = extract_internal_embedding(model, audio, engine=args.engine, gate_db=args.gate_db)
    save_embedding(emb, args.out)
    _emit({"out": str(args.out), "dim": emb.dim, "provenance": str(emb.provenance)})
    return EXIT_OK


def cmd_enhance(args) -> int:
    from ..enrollment import check_fits
    from ..model.streaming import run_stream
    from .embfile import read_embedding
    from .wav import read_wav, write_wav
    from .weights import load_weights

    model = load_weights(args.model)
    mic = read_wav(args.mic)
    far = read_wav(args.farend) if args.farend else None
    if far is not None and far.shape[0] != mic.shape[0]:
        n = mic.shape[0]
        far = np.pad(far, (0, max(0, n - far.shape[0])))[:n]
    emb = None
    if args.embedding:
        emb = read_embedding(args.embedding)
        check_fits(model, emb)
    out = run_stream(model, mic, far, emb)
    write_wav(args.out, out)
    _emit({"out": str(args.out), "samples": int(out.shape[0]),
           "embedding": str(emb.provenance) if emb is not None else "zero"})
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from ..training.recipe import Recipe
    from ..training.trainer import train

    cfg = _read_json(args.config)
    unknown = set(cfg) - {"model", "trainer", "data"}
    if unknown:
        raise _UsageError(f"unknown top-level config keys: {sorted(unknown)}")
    seed = _seed(int(cfg.get("trainer", {}).get("seed", 0)))
    recipe = Recipe.from_dict(cfg, seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(recipe.to_json())
    res = train(recipe.model, recipe.trainer, recipe.data, out_dir=out)
    _emit({"iterations": len(res.losses), "final_loss": res.losses[-1] if res.losses else None,
           "checkpoint": str(res.checkpoints[-1]), "seconds": round(res.seconds, 2)})
    return EXIT_OK


def cmd_eval(args) -> int:
    from ..eval.metrics import METRICS, MetricReport
    from .wav import read_wav

    ref, deg = read_wav(args.ref), read_wav(args.deg)
    value = METRICS[args.metric](ref, deg)
    if args.report:
        rep = MetricReport()
        rep.add(Path(args.deg).stem, args.metric, value)
        path = Path(args.report)
        path.write_text(rep.to_csv())
        path.with_suffix(".json").write_text(rep.to_json())
    _emit({"metric": args.metric, "value": value})
    return EXIT_OK


def cmd_bench(args) -> int:
    from ..eval.harness import rtf_benchmark
    from .weights import load_weights

    model = load_weights(args.model)
    ms, rtf = rtf_benchmark(model, args.frames, args.warmup, seed=_seed(0))
    _emit({"frames": args.frames, "ms_per_frame": ms, "rtf": rtf, "params": model.param_count})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from ..autodiff.gradcheck import TOLERANCE, primitive_checks

    tol = TOLERANCE[args.bits]
    failed = 0
    for name, check in primitive_checks(_seed(0)).items():
        err = check(args.bits)
        ok = err < tol
        failed += not ok
        print(f"{name:32s} {err:.3e} {'ok' if ok else 'FAIL'}")
    print(f"{failed} failed (tolerance {tol:g}, {args.bits}-bit)", file=sys.stderr)
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def cmd_params(args) -> int:
    from ..model.graph import build_model, param_shapes

    if args.config:
        cfg = _model_config(_read_json(args.config))
    else:
        cfg = _model_config({"preset": args.preset})
    total = build_model(cfg).param_count
    groups: dict[str, int] = {}
    for name, shape in param_shapes(cfg).items():
        key = ".".join(name.split(".")[:2])
        groups[key] = groups.get(key, 0) + int(np.prod(shape))
    _emit({
        "params": total,
        "groups": groups,
        "choices": {
            "frequency_stride_per_encoder_block": cfg.stride_f,
            "encoder_freqs": cfg.enc_freqs(),
            "branch_encoder_residual_blocks": cfg.branch_residual,
            "residual_hidden_fraction": cfg.res_expansion,
            "alignment": f"per-channel reduce to {cfg.align_reduce}, query/key dim {cfg.align_dim}, "
                         f"{cfg.align_history} frames of history",
            "decoder_skips": "concatenated (combined.1->dec.0, combined.0->dec.1, mic.1->dec.2)",
            "ccm_taps": [cfg.ccm_taps_t, cfg.ccm_taps_f],
            "gru_hidden": cfg.gru_hidden,
            "fusion_size": cfg.fusion_size,
            "emb_dim": cfg.emb_dim,
        },
    })
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pvqe", description="Personalized speech enhancement toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("enroll", help="derive a speaker embedding file")
    s.add_argument("--model", required=True)
    s.add_argument("--audio", required=True)
    s.add_argument("--mode", required=True, choices=["internal", "fbank", "zero"])
    s.add_argument("--out", required=True)
    s.add_argument("--engine", choices=["stream", "offline"], default="stream")
    s.add_argument("--gate-db", type=float, default=None, help="drop frames this far below the loudest")
    s.set_defaults(func=cmd_enroll)

    s = sub.add_parser("enhance", help="stream a wav through the model")
    s.add_argument("--model", required=True)
    s.add_argument("--mic", required=True)
    s.add_argument("--farend")
    s.add_argument("--embedding")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("train-toy", help="train on synthetic mixtures")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("eval", help="score a degraded/enhanced wav against a reference")
    s.add_argument("--metric", required=True, choices=["erle", "tsos", "baksuppr", "sisdr"])
    s.add_argument("--ref", required=True)
    s.add_argument("--deg", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="single-thread real-time factor")
    s.add_argument("--model", required=True)
    s.add_argument("--frames", type=int, default=100000)
    s.add_argument("--warmup", type=int, default=100)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    s.add_argument("--bits", type=int, choices=[32, 64], default=64)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("params", help="parameter count of a model config")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--config")
    g.add_argument("--preset", choices=["pvqe-s", "pvqe-s-half"])
    s.set_defaults(func=cmd_params)
    return p


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:          # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    except (PVQEError, OSError, ValueError) as e:
        print(f"pvqe: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
