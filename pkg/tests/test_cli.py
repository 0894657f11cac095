import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import TINY
from pvqe.io import read_embedding, read_wav, save_weights, write_wav
from pvqe.io.cli import run_cli
from pvqe.model import PVQE_S, build_model
from pvqe.training import SyntheticVoice, synth_voice_utterance


@pytest.fixture
def files(tmp_path, tiny_model):
    save_weights(tiny_model, tmp_path / "m.pvqe")
    voice = SyntheticVoice(f0=150.0, seed=4)
    write_wav(tmp_path / "enroll.wav", synth_voice_utterance(voice, 1.0, 1))
    write_wav(tmp_path / "mic.wav", synth_voice_utterance(voice, 0.5, 2))
    write_wav(tmp_path / "far.wav", 0.2 * synth_voice_utterance(SyntheticVoice(f0=220.0, seed=5), 0.4, 3))
    return tmp_path


def _json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


class TestParams:
    def test_preset(self, capsys):
        assert run_cli(["params", "--preset", "pvqe-s"]) == 0
        out = _json(capsys)
        assert out["params"] == build_model(PVQE_S).param_count
        assert sum(out["groups"].values()) == out["params"]
        assert out["choices"]["encoder_freqs"] == [161, 81, 41, 21, 11]

    def test_config_file(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(TINY.to_json())
        assert run_cli(["params", "--config", str(tmp_path / "c.json")]) == 0
        assert _json(capsys)["params"] == build_model(TINY).param_count

    def test_preset_with_override(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"preset": "pvqe-s", "gru_hidden": 128, "emb_dim": 128}))
        assert run_cli(["params", "--config", str(tmp_path / "c.json")]) == 0
        assert _json(capsys)["params"] < 1_000_000

    def test_bad_config_value(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"bins": 0}))
        assert run_cli(["params", "--config", str(tmp_path / "c.json")]) == 2


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert run_cli(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_enhance_missing_model(self, capsys):
        assert run_cli(["enhance", "--mic", "a.wav", "--out", "b.wav"]) == 1
        assert "--model" in capsys.readouterr().err

    def test_no_args(self):
        assert run_cli([]) == 1

    def test_help(self, capsys):
        assert run_cli(["--help"]) == 0

    def test_bad_seed_env(self, monkeypatch):
        monkeypatch.setenv("PVQE_SEED", "abc")
        assert run_cli(["gradcheck", "--bits", "64"]) == 1


class TestEnrollEnhance:
    @pytest.mark.parametrize("mode,dim", [("internal", 8), ("fbank", 160), ("zero", 8)])
    def test_enroll(self, files, mode, dim, capsys):
        out = files / f"{mode}.pemb"
        code = run_cli(["enroll", "--model", str(files / "m.pvqe"), "--audio", str(files / "enroll.wav"),
                        "--mode", mode, "--out", str(out)])
        assert code == 0 and read_embedding(out).dim == dim
        assert _json(capsys)["provenance"] == mode

    def test_enroll_matches_library(self, files, tiny_model):
        from pvqe.enrollment import extract_internal_embedding
        run_cli(["enroll", "--model", str(files / "m.pvqe"), "--audio", str(files / "enroll.wav"),
                 "--mode", "internal", "--out", str(files / "e.pemb")])
        lib = extract_internal_embedding(tiny_model, read_wav(files / "enroll.wav"))
        np.testing.assert_allclose(read_embedding(files / "e.pemb").v, lib.v, atol=1e-6)

    def test_enhance_deterministic(self, files):
        run_cli(["enroll", "--model", str(files / "m.pvqe"), "--audio", str(files / "enroll.wav"),
                 "--mode", "internal", "--out", str(files / "e.pemb")])
        args = ["enhance", "--model", str(files / "m.pvqe"), "--mic", str(files / "mic.wav"),
                "--farend", str(files / "far.wav"), "--embedding", str(files / "e.pemb")]
        assert run_cli(args + ["--out", str(files / "o1.wav")]) == 0
        assert run_cli(args + ["--out", str(files / "o2.wav")]) == 0
        a, b = (files / "o1.wav").read_bytes(), (files / "o2.wav").read_bytes()
        assert a == b and read_wav(files / "o1.wav").shape == read_wav(files / "mic.wav").shape

    def test_enhance_dim_mismatch(self, files):
        run_cli(["enroll", "--model", str(files / "m.pvqe"), "--audio", str(files / "enroll.wav"),
                 "--mode", "fbank", "--out", str(files / "f.pemb")])
        code = run_cli(["enhance", "--model", str(files / "m.pvqe"), "--mic", str(files / "mic.wav"),
                        "--embedding", str(files / "f.pemb"), "--out", str(files / "o.wav")])
        assert code == 2

    def test_enhance_corrupt_model(self, files, capsys):
        (files / "bad.pvqe").write_bytes(b"PVQE" + b"\0" * 20)
        code = run_cli(["enhance", "--model", str(files / "bad.pvqe"), "--mic", str(files / "mic.wav"),
                        "--out", str(files / "o.wav")])
        assert code == 2 and "error" in capsys.readouterr().err

    def test_enhance_wrong_rate(self, files):
        import wave
        with wave.open(str(files / "r.wav"), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(44100)
            w.writeframes(b"\0\0" * 100)
        code = run_cli(["enhance", "--model", str(files / "m.pvqe"), "--mic", str(files / "r.wav"),
                        "--out", str(files / "o.wav")])
        assert code == 2


class TestEval:
    def test_metric_and_report(self, files, capsys):
        x = read_wav(files / "mic.wav")
        write_wav(files / "half.wav", x / 2)
        code = run_cli(["eval", "--metric", "erle", "--ref", str(files / "mic.wav"), "--deg",
                        str(files / "half.wav"), "--report", str(files / "r.csv")])
        assert code == 0
        assert _json(capsys)["value"] == pytest.approx(6.02, abs=0.01)
        assert (files / "r.csv").read_text().startswith("clip_id,metric,value\nhalf,erle,")
        assert "aggregate" in json.loads((files / "r.json").read_text())

    def test_undefined_metric(self, files):
        write_wav(files / "z.wav", np.zeros(1000))
        assert run_cli(["eval", "--metric", "sisdr", "--ref", str(files / "z.wav"), "--deg",
                        str(files / "z.wav")]) == 2


class TestOther:
    def test_bench(self, files, capsys):
        assert run_cli(["bench", "--model", str(files / "m.pvqe"), "--frames", "20"]) == 0
        out = _json(capsys)
        assert out["frames"] == 20 and out["rtf"] > 0

    def test_gradcheck(self, capsys):
        assert run_cli(["gradcheck", "--bits", "64"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) >= 40 and all(line.endswith("ok") for line in lines)

    def test_train_toy(self, tmp_path, capsys, monkeypatch):
        cfg = {"model": TINY.to_dict(),
               "trainer": {"iterations": 2, "batch": 1, "clip_s": 0.25, "eval_every": 0, "lr": 1e-3},
               "data": {"clip_s": 0.25, "enroll_s": 0.3, "n_voices": 4}}
        (tmp_path / "t.json").write_text(json.dumps(cfg))
        runs = []
        for name in ("a", "b"):
            assert run_cli(["train-toy", "--config", str(tmp_path / "t.json"), "--out-dir", str(tmp_path / name)]) == 0
            runs.append((tmp_path / name / "final.pvqe").read_bytes())
            assert _json(capsys)["iterations"] == 2
        assert runs[0] == runs[1]
        assert json.loads((tmp_path / "a" / "config.json").read_text())["trainer"]["iterations"] == 2
        monkeypatch.setenv("PVQE_SEED", "5")
        assert run_cli(["train-toy", "--config", str(tmp_path / "t.json"), "--out-dir", str(tmp_path / "c")]) == 0
        assert (tmp_path / "c" / "final.pvqe").read_bytes() != runs[0]

    def test_train_toy_bad_key(self, tmp_path):
        (tmp_path / "t.json").write_text(json.dumps({"optimizer": {}}))
        assert run_cli(["train-toy", "--config", str(tmp_path / "t.json"), "--out-dir", str(tmp_path)]) == 1

    def test_console_script_module(self):
        r = subprocess.run([sys.executable, "-m", "pvqe.io.cli", "params", "--preset", "pvqe-s-half"],
                           capture_output=True, text=True)
        assert r.returncode == 0 and json.loads(r.stdout)["params"] == 318_152
