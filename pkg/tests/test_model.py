import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import TINY, zero_model
from pvqe import dsp
from pvqe.autodiff import Tape, Tensor, backward, finite_diff_check, no_tape
from pvqe.errors import InvalidConfigError, InvalidInputError, InvalidStateError
from pvqe.model import (PVQE_S, PVQE_S_HALF, ModelConfig, align_step, apply_ccm, build_model, enhance_offline,
                        forward, new_stream, param_shapes, pin_embedding, process_frame, reset_state, run_stream,
                        spectra)
from pvqe.model.graph import fuse_speaker, temporal
from pvqe.training.loss import compressed_mse_loss


def offline_trace(model, mic, far=None, emb=None):
    ms, fs = spectra(model, mic, far)
    emb = np.zeros(model.config.emb_dim) if emb is None else emb
    with no_tape():
        return forward(model, ms, fs, emb)


# ---------------------------------------------------------------------------
# Config and build
# ---------------------------------------------------------------------------

class TestConfig:
    def test_pvqe_s_values(self):
        c = PVQE_S
        assert (c.far_filters, c.mic_filters, c.comb_filters, c.dec_filters) == ((8, 24), (16, 40), (56, 24),
                                                                                 (40, 32, 32, 27))
        assert (c.kernel, c.gru_hidden, c.fusion_size, c.res_expansion) == ((2, 3), 256, 240, 0.7)
        assert c.align_history * (c.bins - 1) == 16000     # one second of history

    def test_frequency_schedule(self):
        assert PVQE_S.enc_freqs() == [161, 81, 41, 21, 11]
        assert PVQE_S.dec_freqs() == [11, 22, 44, 88, 176]
        assert PVQE_S.flat_dim == 264

    def test_json_roundtrip_and_hash(self):
        again = ModelConfig.from_dict(PVQE_S.to_dict())
        assert again == PVQE_S and again.config_hash() == PVQE_S.config_hash()
        assert PVQE_S_HALF.config_hash() != PVQE_S.config_hash()
        assert hash(PVQE_S) == hash(again)

    @pytest.mark.parametrize("kw", [dict(bins=0), dict(gru_hidden=0), dict(kernel=(2, 2)),
                                    dict(dec_filters=(1, 2, 3)), dict(compress_exp=1.5)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfigError):
            build_model(ModelConfig(**kw))

    def test_unknown_key(self):
        with pytest.raises(InvalidConfigError):
            ModelConfig.from_dict({"bins": 161, "depth": 3})


class TestBuild:
    def test_parameter_budget(self):
        n = build_model(PVQE_S).param_count
        assert 0.856e6 <= n <= 1.284e6
        assert n == sum(int(np.prod(s)) for s in param_shapes(PVQE_S).values())

    def test_same_seed_bit_identical(self):
        a, b = build_model(TINY, seed=5), build_model(TINY, seed=5)
        assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
        c = build_model(TINY, seed=6)
        assert not np.array_equal(a.params["tb.proj.w"].data, c.params["tb.proj.w"].data)

    def test_layer_norm_init(self):
        m = build_model(TINY)
        assert np.all(m.params["tb.ln_out.g"].data == 1) and np.all(m.params["tb.ln_out.b"].data == 0)

    def test_ccm_head_shape(self):
        assert param_shapes(PVQE_S)["ccm.head.w"] == (12, 27, 1, 1)


# ---------------------------------------------------------------------------
# Offline graph
# ---------------------------------------------------------------------------

class TestGraphShapes:
    def test_shape_audit(self, rng):
        model = build_model(PVQE_S)
        res = offline_trace(model, 0.1 * rng.standard_normal(1600))
        tr, t = res.trace, 10
        assert tr["enc.mic.0"].shape == (1, 16, t, 81) and tr["enc.mic.1"].shape == (1, 40, t, 41)
        assert tr["enc.far.0"].shape == (1, 8, t, 81) and tr["enc.far.1"].shape == (1, 24, t, 41)
        assert tr["align"].shape == (1, 24, t, 41)
        assert tr["enc.comb.0"].shape == (1, 56, t, 21) and tr["enc.comb.1"].shape == (1, 24, t, 11)
        assert tr["flat"].shape == (1, t, 264) and tr["fused"].shape == (1, t, 264)
        assert [tr[f"dec.{i}"].shape[-1] for i in range(4)] == [22, 44, 88, 176]
        assert [tr[f"dec.{i}"].shape[1] for i in range(4)] == [40, 32, 32, 27]
        assert tr["ccm"].shape == (1, 12, t, 161)
        assert res.internal.shape == (1, t, 256)
        assert res.estimate.shape == (1, 2, t, 161)

    def test_zero_weights_zero_encoder_and_output(self, rng):
        model = zero_model(TINY)
        res = offline_trace(model, rng.standard_normal(320))
        for name in ("enc.mic.0", "enc.mic.1", "enc.far.1", "enc.comb.1"):
            assert np.all(res.trace[name].data == 0)
        assert np.all(res.trace["ccm"].data == 0) and np.all(res.estimate.data == 0)


class TestFusion:
    def test_output_length_and_zero_embedding(self, rng):
        model = build_model(PVQE_S)
        flat = Tensor(rng.standard_normal((1, 3, 264)).astype(np.float32))
        out = fuse_speaker(model, flat, np.zeros(256))
        assert out.shape == (1, 3, 264) and np.all(np.isfinite(out.data))

    def test_embedding_changes_output(self, rng):
        model = build_model(TINY, seed=1)
        flat = Tensor(rng.standard_normal((1, 2, TINY.flat_dim)).astype(np.float32))
        a = fuse_speaker(model, flat, rng.standard_normal(8)).data
        b = fuse_speaker(model, flat, rng.standard_normal(8)).data
        assert not np.allclose(a, b)

    def test_wrong_length(self, rng):
        model = build_model(TINY)
        with pytest.raises(InvalidInputError):
            fuse_speaker(model, Tensor(np.zeros((1, 2, TINY.flat_dim), np.float32)), np.zeros(5))


class TestTemporal:
    def test_zero_weights_give_final_ln_bias(self, rng):
        model = zero_model(TINY)
        beta = rng.standard_normal(8).astype(np.float32)
        model.params["tb.ln_out.b"] = beta
        _, internal = temporal(model, Tensor(rng.standard_normal((1, 4, TINY.flat_dim)).astype(np.float32)))
        np.testing.assert_array_equal(internal.data[0], np.tile(beta, (4, 1)))

    def test_zero_params_halve_hidden(self, rng):
        model = zero_model(TINY)
        st_ = new_stream(model)
        h0 = rng.standard_normal(8).astype(np.float32)
        st_.hidden = [h0.copy(), h0.copy()]
        process_frame(model, st_, np.zeros(model.hop))
        np.testing.assert_allclose(st_.hidden[0], 0.5 * h0, rtol=1e-6)
        np.testing.assert_allclose(st_.hidden[1], 0.5 * h0, rtol=1e-6)


# ---------------------------------------------------------------------------
# Alignment and CCM
# ---------------------------------------------------------------------------

class TestAlignStep:
    def test_equal_scores_average_valid(self, rng):
        vals = rng.standard_normal((6, 5))
        out = align_step(np.zeros(4), rng.standard_normal((6, 4)), vals, head=3, count=3)
        np.testing.assert_allclose(out, vals[1:4].mean(axis=0), atol=1e-12)

    def test_dominant_score_selects_frame(self, rng):
        keys = np.zeros((6, 4))
        vals = rng.standard_normal((6, 5))
        q = np.array([100.0, 0, 0, 0])       # score 50 for the marked key
        keys[(4 - 2) % 6, 0] = 1.0
        out = align_step(q, keys, vals, head=4, count=6)
        np.testing.assert_allclose(out, vals[2], atol=1e-5)

    def test_single_frame_returns_current(self, rng):
        vals = rng.standard_normal((6, 5))
        out = align_step(rng.standard_normal(4), rng.standard_normal((6, 4)), vals, head=0, count=1)
        np.testing.assert_allclose(out, vals[0], atol=1e-12)

    def test_empty_ring(self):
        with pytest.raises(InvalidStateError):
            align_step(np.zeros(2), np.zeros((3, 2)), np.zeros((3, 2)), head=0, count=0)


class TestCcm:
    def _hist(self, rng, f=9):
        return [rng.standard_normal(f) + 1j * rng.standard_normal(f) for _ in range(2)]

    def test_center_delta(self, rng):
        h = self._hist(rng)
        c = np.zeros((12, 9))
        c[1] = 1.0            # dt=0, df=0 real part
        np.testing.assert_array_equal(apply_ccm(c, h), h[0])

    def test_zero_mask(self, rng):
        assert np.all(apply_ccm(np.zeros((12, 9)), self._hist(rng)) == 0)

    def test_previous_frame_tap(self, rng):
        h = self._hist(rng)
        c = np.zeros((12, 9))
        c[4] = 1.0            # dt=1, df=0
        np.testing.assert_array_equal(apply_ccm(c, h), h[1])

    def test_imaginary_and_edge_taps(self, rng):
        h = self._hist(rng)
        c = np.zeros((12, 9))
        c[6 + 2] = 1.0        # imaginary part of dt=0, df=+1
        expect = 1j * np.append(h[0][1:], 0)
        np.testing.assert_allclose(apply_ccm(c, h), expect, atol=1e-15)


# ---------------------------------------------------------------------------
# Streaming
# ---------------------------------------------------------------------------

class TestStreaming:
    def test_zero_weights_silence(self, rng):
        model = zero_model(TINY)
        out = run_stream(model, rng.standard_normal(50 * model.hop), rng.standard_normal(50 * model.hop))
        assert np.all(out == 0)

    def test_absent_far_end_equals_zeros(self, tiny_model, rng):
        x = rng.standard_normal(30 * tiny_model.hop)
        np.testing.assert_array_equal(run_stream(tiny_model, x), run_stream(tiny_model, x, np.zeros_like(x)))

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_offline(self, seed):
        model = build_model(TINY, seed=seed)
        r = np.random.default_rng(seed)
        x, f, e = r.standard_normal(40 * model.hop), r.standard_normal(40 * model.hop), r.standard_normal(8)
        stream = run_stream(model, x, f, e)
        off = enhance_offline(model, x, f, e)
        assert np.max(np.abs(stream - off)) < 1e-5

    def test_internal_embeddings_match_offline(self, tiny_model, rng):
        x = rng.standard_normal(20 * tiny_model.hop)
        st_ = new_stream(tiny_model)
        frames = []
        for k in range(20):
            process_frame(tiny_model, st_, x[k * tiny_model.hop:(k + 1) * tiny_model.hop])
            frames.append(st_.last_internal.copy())
        off = offline_trace(tiny_model, x).internal.data[0]
        np.testing.assert_allclose(np.array(frames), off, atol=1e-5)

    def test_full_size_matches_offline(self, rng):
        model = build_model(PVQE_S, seed=2)
        x = 0.3 * rng.standard_normal(16000)
        f = 0.3 * rng.standard_normal(16000)
        e = rng.standard_normal(256)
        assert np.max(np.abs(run_stream(model, x, f, e) - enhance_offline(model, x, f, e))) < 1e-5

    @given(st.integers(1, 25), st.integers(0, 2**31))
    def test_causality(self, t, seed):
        model = build_model(TINY, seed=seed % 7)
        r = np.random.default_rng(seed)
        hop, n = model.hop, 30 * model.hop
        x = r.standard_normal(n)
        y = x.copy()
        cut = t * hop + hop        # win_len - hop = hop
        y[cut:] = r.standard_normal(n - cut)
        np.testing.assert_array_equal(run_stream(model, x)[:t * hop], run_stream(model, y)[:t * hop])

    def test_embedding_only_affects_post_fusion(self, tiny_model, rng):
        x = rng.standard_normal(10 * tiny_model.hop)
        a = offline_trace(tiny_model, x, emb=rng.standard_normal(8))
        b = offline_trace(tiny_model, x, emb=rng.standard_normal(8))
        for name in ("enc.mic.1", "enc.far.1", "align", "enc.comb.1", "flat"):
            np.testing.assert_array_equal(a.trace[name].data, b.trace[name].data)
        assert not np.array_equal(a.trace["fused"].data, b.trace["fused"].data)

    def test_uninitialized_state(self, tiny_model):
        from pvqe.model import StreamState
        with pytest.raises(InvalidStateError):
            process_frame(tiny_model, StreamState(), np.zeros(tiny_model.hop))

    def test_state_from_other_config(self, tiny_model):
        other = build_model(ModelConfig(**{**TINY.to_dict(), "gru_hidden": 6, "emb_dim": 6}))
        with pytest.raises(InvalidStateError):
            process_frame(tiny_model, new_stream(other), np.zeros(tiny_model.hop))

    def test_pin_wrong_dim(self, tiny_model):
        with pytest.raises(InvalidConfigError):
            new_stream(tiny_model, np.zeros(5))

    def test_weight_update_invalidates_compiled_cache(self, rng):
        model = build_model(TINY, seed=1)
        x = rng.standard_normal(5 * model.hop)
        before = run_stream(model, x)
        model.params["ccm.head.b"] = model.params["ccm.head.b"].data + 1.0
        assert not np.array_equal(before, run_stream(model, x))


class TestReset:
    def _feed(self, model, st_, x):
        return np.concatenate([process_frame(model, st_, x[k:k + model.hop]) for k in range(0, len(x), model.hop)])

    def test_reset_equals_fresh(self, tiny_model, rng):
        e = rng.standard_normal(8)
        x = rng.standard_normal(12 * tiny_model.hop)
        used = new_stream(tiny_model, e)
        self._feed(tiny_model, used, rng.standard_normal(9 * tiny_model.hop))
        reset_state(tiny_model, used)
        np.testing.assert_array_equal(self._feed(tiny_model, used, x), self._feed(tiny_model, new_stream(tiny_model, e), x))

    def test_drop_embedding(self, tiny_model, rng):
        st_ = new_stream(tiny_model, rng.standard_normal(8))
        reset_state(tiny_model, st_, keep_embedding=False)
        assert np.all(st_.embedding == 0)

    def test_idempotent(self, tiny_model, rng):
        x = rng.standard_normal(6 * tiny_model.hop)
        a, b = new_stream(tiny_model, np.ones(8)), new_stream(tiny_model, np.ones(8))
        self._feed(tiny_model, a, x)
        self._feed(tiny_model, b, x)
        reset_state(tiny_model, a)
        reset_state(tiny_model, b)
        reset_state(tiny_model, b)
        np.testing.assert_array_equal(self._feed(tiny_model, a, x), self._feed(tiny_model, b, x))


# ---------------------------------------------------------------------------
# Whole-model gradient
# ---------------------------------------------------------------------------

MICRO = ModelConfig(bins=8, far_filters=(2, 2), mic_filters=(2, 3), comb_filters=(3, 2), dec_filters=(2, 2, 2, 3),
                    align_history=3, align_dim=3, gru_hidden=4, fusion_size=3, emb_dim=4)
GRAD_PARAMS = ["enc.mic.0.conv.w", "align.query.w", "enc.comb.0.res.conv.w", "fuse.emb.w", "fuse.proj.b",
               "tb.gru.0.w_hh", "tb.gru.1.b_ih", "tb.ln_out.g", "dec.1.conv.w", "dec.0.res.pw2.w", "ccm.head.w"]


@pytest.mark.parametrize("bits,tol", [(32, 1e-2), (64, 1e-4)])
def test_full_model_gradient(bits, tol):
    # the analytic pass runs at ``bits``; the float64 probes go through a float64 twin
    models = {np.dtype(np.float64): build_model(MICRO, seed=4, dtype=np.float64)}
    models[np.dtype(np.float32)] = build_model(MICRO, seed=4, dtype=np.float32)
    r = np.random.default_rng(0)
    hop = models[np.dtype(np.float64)].hop
    mic, far, tgt = (r.standard_normal(4 * hop) for _ in range(3))
    emb = r.standard_normal(4)
    inputs = {}
    for dt, m in models.items():
        ms, fs = spectra(m, mic, far)
        inputs[dt] = (ms, fs, dsp.stft(tgt, m.window)[None])
    worst = 0.0
    for name in GRAD_PARAMS:
        def f(v, name=name):
            m = models[np.dtype(v.data.dtype)]
            ms, fs, target = inputs[np.dtype(v.data.dtype)]
            saved = m.params[name]
            m.params[name] = v
            try:
                return compressed_mse_loss(target, forward(m, ms, fs, emb).estimate)
            finally:
                m.params[name] = saved
        x = models[np.dtype(np.float64)].params[name].data
        worst = max(worst, finite_diff_check(f, x, eps=1e-3, bits=bits))
    assert worst < tol
