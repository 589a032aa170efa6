import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import TOL, check
from langvec import nn
from langvec.numeric import SeededRng, ShapeError

TRIALS = range(20)


def rand(rng, *shape, scale=1.0):
    return scale * rng.normal(int(np.prod(shape))).reshape(shape)


def cell_setup(seed):
    rng = SeededRng(seed)
    B = 1 + rng.integers(0, 3)
    n_in = 1 + rng.integers(0, 5)
    H = 1 + rng.integers(0, 8)
    w, b = nn.lstm_params(rng, n_in, H)
    b += rand(rng, 4 * H, scale=0.3)
    return rng, B, n_in, H, w, b


class TestLstmCell:
    def test_zero_params_zero_state(self):
        h, c, _ = nn.lstm_cell_forward(np.ones((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)),
                                       np.zeros((7, 16)), np.zeros(16))
        assert not np.any(h)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nn.lstm_cell_forward(np.ones((1, 3)), np.zeros((1, 4)), np.zeros((1, 4)),
                                 np.zeros((6, 16)), np.zeros(16))

    def test_deterministic(self):
        rng, B, n_in, H, w, b = cell_setup(0)
        x, h, c = rand(rng, B, n_in), rand(rng, B, H), rand(rng, B, H)
        a = nn.lstm_cell_forward(x, h, c, w, b)
        z = nn.lstm_cell_forward(x.copy(), h.copy(), c.copy(), w, b)
        np.testing.assert_array_equal(a[0], z[0])
        np.testing.assert_array_equal(a[1], z[1])

    @pytest.mark.parametrize("seed", TRIALS)
    def test_gradients(self, seed):
        rng, B, n_in, H, w, b = cell_setup(seed)
        x, h, c = rand(rng, B, n_in), rand(rng, B, H), rand(rng, B, H)
        rh, rc = rand(rng, B, H), rand(rng, B, H)

        def loss():
            h2, c2, _ = nn.lstm_cell_forward(x, h, c, w, b)
            return float(np.sum(h2 * rh) + np.sum(c2 * rc))

        _, _, cache = nn.lstm_cell_forward(x, h, c, w, b)
        dx, dh, dc, dw, db = nn.lstm_cell_backward(rh, rc, cache, w)
        for arr, grad in ((x, dx), (h, dh), (c, dc), (w, dw), (b, db)):
            assert check(loss, arr, grad) < TOL


class TestLstmLayer:
    @pytest.mark.parametrize("seed", TRIALS)
    def test_gradients_with_mask(self, seed):
        rng, B, n_in, H, w, b = cell_setup(100 + seed)
        T = 1 + rng.integers(0, 4)
        xs = rand(rng, B, T, n_in)
        lengths = 1 + rng.integers(0, T, size=B)
        mask = np.arange(T)[None, :] < lengths[:, None]
        h0, c0 = rand(rng, B, H, scale=0.5), rand(rng, B, H, scale=0.5)
        r_out, r_h, r_c = rand(rng, B, T, H), rand(rng, B, H), rand(rng, B, H)

        def loss():
            outs, (h, c), _ = nn.lstm_layer_forward(xs, w, b, h0, c0, mask)
            return float(np.sum(outs * r_out) + np.sum(h * r_h) + np.sum(c * r_c))

        _, _, cache = nn.lstm_layer_forward(xs, w, b, h0, c0, mask)
        dxs, dh0, dc0, dw, db = nn.lstm_layer_backward(r_out, r_h, r_c, cache, w)
        for arr, grad in ((xs, dxs), (h0, dh0), (c0, dc0), (w, dw), (b, db)):
            assert check(loss, arr, grad) < TOL

    def test_padding_keeps_final_state(self):
        rng, _, n_in, H, w, b = cell_setup(3)
        xs = rand(rng, 1, 3, n_in)
        z = np.zeros((1, H))
        _, (h_short, c_short), _ = nn.lstm_layer_forward(xs, w, b, z, z)
        padded = np.concatenate([xs, rand(rng, 1, 2, n_in)], axis=1)
        mask = np.array([[True, True, True, False, False]])
        _, (h_pad, c_pad), _ = nn.lstm_layer_forward(padded, w, b, z, z, mask)
        np.testing.assert_array_equal(h_short, h_pad)
        np.testing.assert_array_equal(c_short, c_pad)

    def test_causal_prefix(self):
        rng, _, n_in, H, w, b = cell_setup(4)
        xs = rand(rng, 2, 6, n_in)
        layers = [(w, b), nn.lstm_params(rng, H, H)]
        full, _, _ = nn.stacked_lstm_forward(xs, layers)
        prefix, _, _ = nn.stacked_lstm_forward(xs[:, :3], layers)
        np.testing.assert_array_equal(full[:, :3], prefix)

    def test_single_position(self):
        rng, _, n_in, H, w, b = cell_setup(5)
        out, finals, _ = nn.stacked_lstm_forward(rand(rng, 1, 1, n_in), [(w, b)])
        assert out.shape == (1, 1, H)

    def test_empty_sequence(self):
        with pytest.raises(ValueError):
            nn.stacked_lstm_forward(np.zeros((1, 0, 2)), [nn.lstm_params(SeededRng(0), 2, 2)])

    @pytest.mark.parametrize("seed", range(5))
    def test_stacked_gradients(self, seed):
        rng = SeededRng(200 + seed)
        B, T, n_in, H = 2, 3, 3, 4
        layers = [nn.lstm_params(rng, n_in, H), nn.lstm_params(rng, H, H)]
        xs = rand(rng, B, T, n_in)
        mask = np.array([[True, True, True], [True, False, False]])
        state = [(rand(rng, B, H), rand(rng, B, H)) for _ in layers]
        r = rand(rng, B, T, H)
        rf = [(rand(rng, B, H), rand(rng, B, H)) for _ in layers]

        def loss():
            out, finals, _ = nn.stacked_lstm_forward(xs, layers, state, mask)
            return float(np.sum(out * r) + sum(np.sum(h * a) + np.sum(c * b)
                                               for (h, c), (a, b) in zip(finals, rf)))

        _, _, caches = nn.stacked_lstm_forward(xs, layers, state, mask)
        dxs, dinit, grads = nn.stacked_lstm_backward(r, rf, caches, layers)
        assert check(loss, xs, dxs) < TOL
        for (w, b), (dw, db) in zip(layers, grads):
            assert check(loss, w, dw) < TOL
            assert check(loss, b, db) < TOL
        for (h, c), (dh, dc) in zip(state, dinit):
            assert check(loss, h, dh) < TOL
            assert check(loss, c, dc) < TOL


class TestAttention:
    def test_single_position(self):
        rng = SeededRng(0)
        enc = rand(rng, 3, 4)
        w_a, w_c = rand(rng, 4, 4), rand(rng, 8, 4)
        _, ctx, weights = nn.global_attention(rand(rng, 4), enc, [False, True, False], w_a, w_c)
        np.testing.assert_array_equal(weights, [0.0, 1.0, 0.0])
        np.testing.assert_allclose(ctx, enc[1], rtol=0, atol=0)

    def test_equal_scores_uniform(self):
        enc = np.tile([[1.0, 2.0]], (4, 1))
        _, _, weights = nn.global_attention(np.array([0.3, -0.1]), enc, [True] * 4,
                                            np.eye(2), np.ones((4, 2)))
        np.testing.assert_allclose(weights, 0.25, atol=1e-15)

    def test_all_masked(self):
        with pytest.raises(ValueError):
            nn.global_attention(np.zeros(2), np.zeros((3, 2)), [False] * 3, np.eye(2),
                                np.ones((4, 2)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_weights_are_distribution(self, seed):
        rng = SeededRng(seed)
        B, Tq, T, H = 2, 3, 5, 4
        mask = rng.uniform((B, T)) < 0.6
        mask[:, 0] = True
        _, weights, _ = nn.global_attention_forward(rand(rng, B, Tq, H, scale=3), rand(rng, B, T, H),
                                                    mask, rand(rng, H, H), rand(rng, 2 * H, H))
        assert np.all(weights >= 0)
        assert np.all(weights[~np.broadcast_to(mask[:, None, :], weights.shape)] == 0)
        np.testing.assert_allclose(weights.sum(-1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("seed", TRIALS)
    def test_gradients(self, seed):
        rng = SeededRng(300 + seed)
        B, Tq, T, H = 1 + rng.integers(0, 2), 1 + rng.integers(0, 3), 1 + rng.integers(0, 4), \
            1 + rng.integers(0, 8)
        dec, enc = rand(rng, B, Tq, H), rand(rng, B, T, H)
        lengths = 1 + rng.integers(0, T, size=B)
        mask = np.arange(T)[None, :] < lengths[:, None]
        w_a, w_c = rand(rng, H, H, scale=0.5), rand(rng, 2 * H, H, scale=0.5)
        r = rand(rng, B, Tq, H)

        def loss():
            out, _, _ = nn.global_attention_forward(dec, enc, mask, w_a, w_c)
            return float(np.sum(out * r))

        _, _, cache = nn.global_attention_forward(dec, enc, mask, w_a, w_c)
        ddec, denc, dwa, dwc = nn.global_attention_backward(r, cache, w_a, w_c)
        for arr, grad in ((w_a, dwa), (w_c, dwc), (dec, ddec), (enc, denc)):
            assert check(loss, arr, grad) < TOL


class TestEmbedding:
    @pytest.mark.parametrize("seed", TRIALS)
    def test_gradients(self, seed):
        rng = SeededRng(400 + seed)
        V, L, wd, ld = 2 + rng.integers(0, 10), 1 + rng.integers(0, 3), 1 + rng.integers(0, 4), \
            1 + rng.integers(0, 4)
        B, T = 1 + rng.integers(0, 3), 1 + rng.integers(0, 4)
        words, langs_t = rand(rng, V, wd), rand(rng, L, ld)
        ids = rng.integers(0, V, size=(B, T))
        langs = rng.integers(0, L, size=B)
        r = rand(rng, B, T, wd + ld)

        def loss():
            return float(np.sum(nn.embed_forward(words, langs_t, ids, langs) * r))

        dword, dlang = nn.embed_backward(r, ids, langs, words.shape, langs_t.shape)
        assert check(loss, words, dword) < TOL
        assert check(loss, langs_t, dlang) < TOL


class TestProjectionAndLoss:
    @pytest.mark.parametrize("seed", TRIALS)
    def test_gradients(self, seed):
        rng = SeededRng(500 + seed)
        B, T, H, V = 1 + rng.integers(0, 3), 1 + rng.integers(0, 4), 1 + rng.integers(0, 8), \
            2 + rng.integers(0, 11)
        x, w, b = rand(rng, B, T, H), rand(rng, H, V), rand(rng, V)
        targets = rng.integers(0, V, size=(B, T))
        mask = rng.uniform((B, T)) < 0.7
        mask[0, 0] = True

        def loss():
            return nn.masked_mean_cross_entropy(nn.linear_forward(x, w, b), targets, mask)

        s, n, dlogits = nn.masked_cross_entropy(nn.linear_forward(x, w, b), targets, mask)
        dx, dw, db = nn.linear_backward(dlogits / n, x, w)
        for arr, grad in ((x, dx), (w, dw), (b, db)):
            assert check(loss, arr, grad) < TOL

    def test_certain_prediction_zero_loss(self):
        logits = np.array([[[0.0, 800.0, 0.0]]])
        assert nn.masked_mean_cross_entropy(logits, np.array([[1]]), np.array([[True]])) == 0.0

    def test_uniform_logits(self):
        V = 7
        loss = nn.masked_mean_cross_entropy(np.zeros((2, 3, V)), np.zeros((2, 3), dtype=int),
                                            np.ones((2, 3), dtype=bool))
        assert loss == pytest.approx(math.log(V), abs=1e-15)

    def test_single_unmasked_position(self):
        rng = SeededRng(1)
        logits = rand(rng, 1, 4, 5)
        targets = np.array([[0, 3, 2, 1]])
        mask = np.array([[False, False, True, False]])
        row = logits[0, 2]
        expected = -(row[2] - math.log(np.sum(np.exp(row))))
        assert nn.masked_mean_cross_entropy(logits, targets, mask) == pytest.approx(expected, rel=1e-14)

    def test_no_positions(self):
        with pytest.raises(ValueError):
            nn.masked_cross_entropy(np.zeros((1, 2, 3)), np.zeros((1, 2), dtype=int),
                                    np.zeros((1, 2), dtype=bool))

    def test_padding_invariance(self):
        rng = SeededRng(2)
        logits = rand(rng, 2, 3, 5)
        targets = rng.integers(0, 5, size=(2, 3))
        mask = np.array([[True, True, False], [True, False, False]])
        padded = np.concatenate([logits, rand(rng, 2, 4, 5)], axis=1)
        ptargets = np.concatenate([targets, np.zeros((2, 4), dtype=int)], axis=1)
        pmask = np.concatenate([mask, np.zeros((2, 4), dtype=bool)], axis=1)
        assert nn.masked_mean_cross_entropy(logits, targets, mask) == \
            nn.masked_mean_cross_entropy(padded, ptargets, pmask)


def adam_first_step_oracle(theta, g, lr, beta2=0.999, eps=1e-8):
    # after one step the bias corrections reduce m_hat to g and v_hat to g^2
    return theta - lr * g / (abs(g) + eps)


class TestAdam:
    def scalar(self, grad, **kw):
        p = nn.Parameter("theta", np.zeros(1))
        p.grad[:] = grad
        opt = nn.OptimizerState(**kw)
        nn.adam_step(opt, [p])
        return p, opt

    def test_first_step(self):
        p, _ = self.scalar(1.0, base_lr=0.1, clip_norm=0)
        expected = adam_first_step_oracle(0.0, 1.0, 0.1)
        assert p.value[0] == pytest.approx(expected, rel=1e-15, abs=0)
        assert -0.1 < p.value[0] < -0.09999999

    def test_zero_gradient(self):
        p, _ = self.scalar(0.0, base_lr=0.1)
        assert p.value[0] == 0.0

    def test_deterministic(self):
        a, _ = self.scalar(0.37, base_lr=0.01)
        b, _ = self.scalar(0.37, base_lr=0.01)
        assert a.value.tobytes() == b.value.tobytes()

    def test_non_finite_gradient_names_parameter(self):
        p = nn.Parameter("enc.l0.w", np.zeros(2))
        p.grad[:] = [1.0, np.nan]
        with pytest.raises(FloatingPointError, match="enc.l0.w"):
            nn.adam_step(nn.OptimizerState(), [p])

    def test_global_norm_clip(self):
        ps = [nn.Parameter("a", np.zeros(2)), nn.Parameter("b", np.zeros(1))]
        ps[0].grad[:] = [3.0, 4.0]
        ps[1].grad[:] = [12.0]
        norm = nn.clip_gradients(ps, 5.0)
        assert norm == pytest.approx(13.0)
        total = math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in ps))
        assert total == pytest.approx(5.0)

    def test_frozen_parameter_untouched(self):
        p = nn.Parameter("word_emb", np.ones(3), trainable=False)
        p.grad[:] = 1.0
        nn.adam_step(nn.OptimizerState(), [p])
        np.testing.assert_array_equal(p.value, 1.0)


class TestSchedule:
    def opt(self, **kw):
        return nn.OptimizerState(base_lr=2.0, **kw)

    def test_before_decay_start(self):
        assert nn.lr_at(self.opt(), 1) == 2.0
        assert nn.lr_at(self.opt(), 9_999) == 2.0

    def test_decay_points(self):
        o = self.opt()
        assert nn.lr_at(o, 10_000) == pytest.approx(0.85 * 2.0)
        assert nn.lr_at(o, 34_999) == pytest.approx(0.85 * 2.0)
        assert nn.lr_at(o, 35_000) == pytest.approx(0.85 ** 2 * 2.0)

    def test_no_decay(self):
        o = self.opt(decay=1.0)
        assert {nn.lr_at(o, s) for s in (1, 10_000, 10 ** 6)} == {2.0}

    @given(st.floats(0.0, 1.0), st.integers(1, 10 ** 6), st.integers(1, 10 ** 6))
    def test_non_increasing(self, decay, s1, s2):
        o = self.opt(decay=decay)
        lo, hi = sorted((s1, s2))
        assert nn.lr_at(o, hi) <= nn.lr_at(o, lo)
