import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import TINY, zero_model
from pvqe import dsp
from pvqe.enrollment import (FBANK_DIM, Provenance, SpeakerEmbedding, average_frames, check_fits, energy_gate,
                             extract_internal_embedding, fbank_embedding, frame_embeddings, load_external_embedding,
                             zero_embedding)
from pvqe.errors import CorruptFileError, InvalidConfigError, InvalidInputError
from pvqe.io import save_embedding
from pvqe.model import PVQE_S, ModelConfig, build_model, new_stream, process_frame, run_stream
from pvqe.training import synth_voice_utterance, flat_voice


class TestSpeakerEmbedding:
    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            SpeakerEmbedding(np.array([0.0, np.nan]), Provenance.INTERNAL)

    def test_rejects_matrix(self):
        with pytest.raises(InvalidInputError):
            SpeakerEmbedding(np.zeros((2, 2)), Provenance.ZERO)

    def test_equality_and_repr(self):
        a = SpeakerEmbedding(np.ones(3), Provenance.FBANK)
        assert a == SpeakerEmbedding(np.ones(3), 1)
        assert a != SpeakerEmbedding(np.ones(3), Provenance.EXTERNAL)
        assert "fbank" in repr(a) and a.dim == 3


class TestInternal:
    def test_full_size_length(self, rng):
        model = build_model(PVQE_S)
        emb = extract_internal_embedding(model, 0.1 * rng.standard_normal(4000))
        assert emb.dim == 256 and emb.provenance == Provenance.INTERNAL

    def test_zero_weights_give_ln_bias(self, rng):
        model = zero_model(TINY)
        beta = rng.standard_normal(8).astype(np.float32)
        model.params["tb.ln_out.b"] = beta
        frames = frame_embeddings(model, rng.standard_normal(2000))
        assert np.all(frames == beta)
        np.testing.assert_array_equal(extract_internal_embedding(model, rng.standard_normal(2000)).v, beta)

    def test_identical_frames_average_to_themselves(self):
        u = np.linspace(-1, 1, 7)
        np.testing.assert_allclose(average_frames(np.tile(u, (11, 1))), u, atol=1e-15)

    @given(st.integers(1, 30), st.integers(0, 2**31))
    def test_average_permutation_invariant(self, n, seed):
        r = np.random.default_rng(seed)
        frames = r.standard_normal((n, 5))
        np.testing.assert_allclose(average_frames(frames), average_frames(frames[r.permutation(n)]), atol=1e-12)

    def test_stream_and_offline_engines_agree(self, tiny_model, rng):
        x = rng.standard_normal(3000)
        a = extract_internal_embedding(tiny_model, x, engine="stream").v
        b = extract_internal_embedding(tiny_model, x, engine="offline").v
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_matches_manual_stream(self, tiny_model, rng):
        x = rng.standard_normal(10 * tiny_model.hop)
        st_ = new_stream(tiny_model, np.zeros(8))
        frames = []
        for k in range(10):
            process_frame(tiny_model, st_, x[k * tiny_model.hop:(k + 1) * tiny_model.hop])
            frames.append(st_.last_internal)
        np.testing.assert_allclose(extract_internal_embedding(tiny_model, x).v, np.mean(frames, axis=0), atol=1e-6)

    def test_deterministic(self, tiny_model, rng):
        x = rng.standard_normal(2500)
        a, b = extract_internal_embedding(tiny_model, x), extract_internal_embedding(tiny_model, x)
        assert a == b

    def test_side_effect_free(self, tiny_model, rng):
        before = {k: tiny_model.params[k].data.copy() for k in tiny_model.params}
        y = rng.standard_normal(8 * tiny_model.hop)
        st_ = new_stream(tiny_model, rng.standard_normal(8))
        ref_state = new_stream(tiny_model, st_.embedding.copy())
        out1 = [process_frame(tiny_model, st_, y[k * tiny_model.hop:(k + 1) * tiny_model.hop]) for k in range(4)]
        extract_internal_embedding(tiny_model, rng.standard_normal(3000))
        out1 += [process_frame(tiny_model, st_, y[k * tiny_model.hop:(k + 1) * tiny_model.hop]) for k in range(4, 8)]
        out2 = [process_frame(tiny_model, ref_state, y[k * tiny_model.hop:(k + 1) * tiny_model.hop])
                for k in range(8)]
        np.testing.assert_array_equal(np.concatenate(out1), np.concatenate(out2))
        assert all(np.array_equal(before[k], tiny_model.params[k].data) for k in before)

    def test_too_short(self, tiny_model):
        with pytest.raises(InvalidInputError):
            extract_internal_embedding(tiny_model, np.zeros(tiny_model.hop))

    def test_emb_dim_must_match_hidden(self, rng):
        model = build_model(ModelConfig(**{**TINY.to_dict(), "emb_dim": 5}))
        with pytest.raises(InvalidConfigError):
            extract_internal_embedding(model, rng.standard_normal(1000))

    def test_energy_gate_drops_silence(self, tiny_model, rng):
        x = np.concatenate([rng.standard_normal(1000), np.zeros(1000)])
        mask = energy_gate(x, tiny_model.hop, 40.0)
        assert mask[:5].all() and not mask[-5:].any()
        gated = extract_internal_embedding(tiny_model, x, gate_db=40.0)
        full = extract_internal_embedding(tiny_model, x)
        assert not np.allclose(gated.v, full.v)


class TestFbank:
    def test_length(self, rng):
        assert fbank_embedding(rng.standard_normal(16000)).dim == FBANK_DIM == 160

    def test_constant_features(self):
        # a pure tone with an integer number of periods per hop gives identical frames
        t = np.arange(16000) / 16000
        x = np.sin(2 * np.pi * 500 * t)
        emb = fbank_embedding(x)
        feats = dsp.logmel_80(x)
        np.testing.assert_allclose(emb.v[80:], 0, atol=1e-6)
        np.testing.assert_allclose(emb.v[:80], feats[1], atol=1e-6)

    def test_scaling_shifts_mean_only(self, rng):
        x = rng.standard_normal(8000)
        a, b = fbank_embedding(x).v, fbank_embedding(2 * x).v
        np.testing.assert_allclose(b[:80] - a[:80], np.log(4.0), atol=1e-6)
        np.testing.assert_allclose(b[80:], a[80:], atol=1e-6)

    @given(st.integers(0, 2**31), st.floats(0.01, 2.0))
    def test_std_non_negative(self, seed, level):
        x = level * np.random.default_rng(seed).standard_normal(1200)
        assert np.all(fbank_embedding(x).v[80:] >= 0)

    def test_single_frame_rejected(self):
        with pytest.raises(InvalidInputError):
            fbank_embedding(np.ones(320))


class TestZero:
    def test_values(self):
        e = zero_embedding(256)
        assert e.dim == 256 and np.linalg.norm(e.v) == 0 and e.provenance == Provenance.ZERO

    def test_zero_embedding_runs_model(self, tiny_model, rng):
        out = run_stream(tiny_model, rng.standard_normal(1000), embedding=zero_embedding(8).v)
        assert np.all(np.isfinite(out))

    def test_bad_dim(self):
        with pytest.raises(InvalidInputError):
            zero_embedding(0)


class TestExternal:
    def test_round_trip(self, tmp_path, rng):
        e = SpeakerEmbedding(rng.standard_normal(128).astype(np.float32), Provenance.EXTERNAL)
        save_embedding(e, tmp_path / "e.pemb")
        back = load_external_embedding(tmp_path / "e.pemb")
        assert back == e

    def test_dim_mismatch_at_use(self, tmp_path, rng):
        e = SpeakerEmbedding(rng.standard_normal(128).astype(np.float32), Provenance.EXTERNAL)
        save_embedding(e, tmp_path / "e.pemb")
        with pytest.raises(InvalidConfigError):
            check_fits(build_model(PVQE_S), load_external_embedding(tmp_path / "e.pemb"))

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.pemb").write_bytes(b"")
        with pytest.raises(CorruptFileError):
            load_external_embedding(tmp_path / "e.pemb")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorruptFileError):
            load_external_embedding(tmp_path / "nope.pemb")


def test_distinct_voices_give_distinct_internal_embeddings(tiny_model):
    a = synth_voice_utterance(flat_voice(120, seed=1), 1.0, seed=0)
    b = synth_voice_utterance(flat_voice(300, seed=2), 1.0, seed=0)
    assert not np.allclose(extract_internal_embedding(tiny_model, a).v, extract_internal_embedding(tiny_model, b).v)
