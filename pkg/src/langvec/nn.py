"""Differentiable building blocks with hand-written backward passes.

Each layer is a pair of functions: ``*_forward`` returns the output plus a
cache, ``*_backward`` consumes the upstream gradient and the cache. All
functions are batched: the leading axis is the batch, sequences are
``(batch, time, features)``.

LSTM gates are packed in the order input, forget, candidate, output, with
one weight matrix of shape ``(in + hidden, 4 * hidden)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numeric import SeededRng, ShapeError


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad.fill(0.0)


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# --------------------------------------------------------------------- LSTM

def lstm_cell_forward(x, h, c, w, b):
    """One LSTM step for a batch. ``x`` is (B, in), ``h``/``c`` are (B, H)."""
    hidden = h.shape[-1]
    if w.shape != (x.shape[-1] + hidden, 4 * hidden):
        raise ShapeError(
            f"LSTM weight {w.shape} incompatible with input {x.shape[-1]} and hidden {hidden}"
        )
    xh = np.concatenate([x, h], axis=-1)
    z = xh @ w + b
    return _lstm_gates(z, c, xh)


def _lstm_gates(z, c, xh):
    hidden = c.shape[-1]
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden:2 * hidden])
    g = np.tanh(z[..., 2 * hidden:3 * hidden])
    o = sigmoid(z[..., 3 * hidden:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (xh, c, i, f, g, o, tc)


def lstm_cell_backward(dh, dc, cache, w):
    """Returns ``(dx, dh_prev, dc_prev, dw, db)``."""
    xh, c, i, f, g, o, tc = cache
    hidden = c.shape[-1]
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
        axis=-1,
    )
    dw = xh.T @ dz
    db = dz.sum(axis=0)
    dxh = dz @ w.T
    n_in = xh.shape[-1] - hidden
    return dxh[:, :n_in], dxh[:, n_in:], dc_prev, dw, db


def lstm_layer_forward(xs, w, b, h0, c0, mask=None):
    """Run one LSTM layer over ``xs`` (B, T, in).

    Where ``mask`` (B, T) is false the state is carried through unchanged,
    so right-padding never alters a row's final state.
    """
    B, T, n_in = xs.shape
    if T == 0:
        raise ValueError("empty sequence")
    hidden = h0.shape[-1]
    if w.shape != (n_in + hidden, 4 * hidden):
        raise ShapeError(f"LSTM weight {w.shape} incompatible with input {n_in}, hidden {hidden}")
    wx, wh = w[:n_in], w[n_in:]
    zx = xs @ wx + b
    h, c = h0, c0
    outs = np.empty((B, T, hidden))
    h_prevs = np.empty((B, T, hidden))
    caches = []
    for t in range(T):
        h_prevs[:, t] = h
        z = zx[:, t] + h @ wh
        h_new, c_new, cache = _lstm_gates(z, c, None)
        cache = cache[1:]
        if mask is not None:
            m = mask[:, t:t + 1]
            h_new = np.where(m, h_new, h)
            c_new = np.where(m, c_new, c)
        caches.append(cache)
        h, c = h_new, c_new
        outs[:, t] = h
    return outs, (h, c), (xs, h_prevs, caches, mask)


def lstm_layer_backward(douts, dh_last, dc_last, cache, w):
    """Backward through :func:`lstm_layer_forward`.

    Returns ``(dxs, dh0, dc0, dw, db)``.
    """
    xs, h_prevs, caches, mask = cache
    B, T, n_in = xs.shape
    hidden = dh_last.shape[-1]
    wx, wh = w[:n_in], w[n_in:]
    whT = wh.T
    dzs = np.empty((B, T, 4 * hidden))
    fmask = None if mask is None else mask.astype(np.float64)[:, :, None]
    dh, dc = dh_last, dc_last
    for t in range(T - 1, -1, -1):
        c_prev, i, f, g, o, tc = caches[t]
        dh = dh + douts[:, t]
        if fmask is not None:
            m = fmask[:, t]
            dh_cell = dh * m
            dc_cell = dc * m
            dh_skip = dh - dh_cell
            dc_skip = dc - dc_cell
        else:
            dh_cell, dc_cell = dh, dc
            dh_skip = dc_skip = 0.0
        do = dh_cell * tc
        dct = dc_cell + dh_cell * o * (1.0 - tc * tc)
        dz = dzs[:, t]
        dz[:, :hidden] = dct * g * i * (1.0 - i)
        dz[:, hidden:2 * hidden] = dct * c_prev * f * (1.0 - f)
        dz[:, 2 * hidden:3 * hidden] = dct * i * (1.0 - g * g)
        dz[:, 3 * hidden:] = do * o * (1.0 - o)
        dh = dz @ whT + dh_skip
        dc = dct * f + dc_skip
    dz2 = dzs.reshape(B * T, 4 * hidden)
    dwx = xs.reshape(B * T, n_in).T @ dz2
    dwh = h_prevs.reshape(B * T, hidden).T @ dz2
    db = dz2.sum(axis=0)
    dxs = dzs @ wx.T
    return dxs, dh, dc, np.concatenate([dwx, dwh], axis=0), db


def stacked_lstm_forward(xs, layers, state=None, mask=None):
    """Multi-layer LSTM. ``layers`` is a list of ``(w, b)``.

    Returns ``(top_outputs, final_states, cache)`` with ``final_states`` a
    list of per-layer ``(h, c)``.
    """
    if xs.shape[1] == 0:
        raise ValueError("empty sequence")
    B = xs.shape[0]
    finals, caches = [], []
    inp = xs
    for l, (w, b) in enumerate(layers):
        hidden = b.shape[0] // 4
        if state is None:
            h0 = c0 = np.zeros((B, hidden))
        else:
            h0, c0 = state[l]
        inp, final, cache = lstm_layer_forward(inp, w, b, h0, c0, mask)
        finals.append(final)
        caches.append(cache)
    return inp, finals, caches


def stacked_lstm_backward(douts, dfinals, caches, layers):
    """Returns ``(dxs, dinit_states, [(dw, db), ...])``."""
    grads = [None] * len(layers)
    dinit = [None] * len(layers)
    d = douts
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        dh_last, dc_last = dfinals[l]
        d, dh0, dc0, dw, db = lstm_layer_backward(d, dh_last, dc_last, caches[l], w)
        grads[l] = (dw, db)
        dinit[l] = (dh0, dc0)
    return d, dinit, grads


# ---------------------------------------------------------------- attention

def global_attention_forward(dec, enc, enc_mask, w_a, w_c):
    """Luong global attention with the bilinear ("general") score.

    ``dec`` is (B, T', H) decoder states, ``enc`` (B, T, H) encoder outputs,
    ``enc_mask`` (B, T) marks real encoder positions. Returns
    ``(attentional_output, weights, cache)`` where the output is
    ``tanh([context; dec] @ w_c)``.
    """
    if not np.all(enc_mask.any(axis=1)):
        raise ValueError("attention needs at least one unmasked encoder position per row")
    q = dec @ w_a
    scores = q @ enc.transpose(0, 2, 1)
    scores = np.where(enc_mask[:, None, :], scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    weights = e / e.sum(axis=-1, keepdims=True)
    ctx = weights @ enc
    cat = np.concatenate([ctx, dec], axis=-1)
    out = np.tanh(cat @ w_c)
    return out, weights, (dec, enc, q, weights, cat, out)


def global_attention_backward(dout, cache, w_a, w_c):
    """Returns ``(ddec, denc, dw_a, dw_c)``."""
    dec, enc, q, weights, cat, out = cache
    hidden = dec.shape[-1]
    dpre = dout * (1.0 - out * out)
    dw_c = np.einsum("bti,btj->ij", cat, dpre)
    dcat = dpre @ w_c.T
    dctx, ddec = dcat[..., :hidden], dcat[..., hidden:]
    dweights = dctx @ enc.transpose(0, 2, 1)
    denc = weights.transpose(0, 2, 1) @ dctx
    dscores = weights * (dweights - np.sum(dweights * weights, axis=-1, keepdims=True))
    dq = dscores @ enc
    denc = denc + dscores.transpose(0, 2, 1) @ q
    dw_a = np.einsum("bti,btj->ij", dec, dq)
    ddec = ddec + dq @ w_a.T
    return ddec, denc, dw_a, dw_c


def global_attention(decoder_hidden, encoder_outputs, mask, w_a, w_c):
    """Single-query convenience form: vectors in, ``(output, context, weights)`` out."""
    dec = np.asarray(decoder_hidden, dtype=np.float64)[None, None, :]
    enc = np.asarray(encoder_outputs, dtype=np.float64)[None]
    m = np.asarray(mask, dtype=bool)
    if m.shape[0] != enc.shape[1]:
        raise ShapeError(f"mask length {m.shape[0]} != encoder positions {enc.shape[1]}")
    if not m.any():
        raise ValueError("all encoder positions are masked")
    out, weights, _ = global_attention_forward(dec, enc, m[None], w_a, w_c)
    w = weights[0, 0]
    return out[0, 0], w @ enc[0], w


# ---------------------------------------------------------------- embedding

def embed_forward(word_table, lang_table, word_ids, lang_ids):
    """Concatenate word and language vectors: (B, T) ids -> (B, T, wd + ld)."""
    words = word_table[word_ids]
    langs = np.broadcast_to(lang_table[lang_ids][:, None, :],
                            word_ids.shape + (lang_table.shape[1],))
    return np.concatenate([words, langs], axis=-1)


def embed_backward(dx, word_ids, lang_ids, word_shape, lang_shape, need_word=True):
    wd = word_shape[1]
    dword = None
    if need_word:
        dword = np.zeros(word_shape)
        np.add.at(dword, word_ids.ravel(), dx[..., :wd].reshape(-1, wd))
    dlang = np.zeros(lang_shape)
    np.add.at(dlang, lang_ids, dx[..., wd:].sum(axis=1))
    return dword, dlang


# ----------------------------------------------------- projection and loss

def linear_forward(x, w, b):
    return x @ w + b


def linear_backward(dy, x, w):
    n_in = x.shape[-1]
    x2 = x.reshape(-1, n_in)
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def masked_cross_entropy(logits, targets, mask):
    """Summed NLL over unmasked positions.

    Returns ``(loss_sum, count, dlogits_of_sum)``; the mean loss is
    ``loss_sum / count``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("masked_cross_entropy: no unmasked positions")
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss_sum = float(-np.sum(np.where(mask, picked, 0.0)))
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    dlogits = (probs - onehot) * mask[..., None]
    return loss_sum, count, dlogits


def masked_mean_cross_entropy(logits, targets, mask) -> float:
    loss_sum, count, _ = masked_cross_entropy(logits, targets, mask)
    return loss_sum / count


# --------------------------------------------------------------- optimiser

@dataclass
class OptimizerState:
    base_lr: float = 1e-3
    decay: float = 0.85
    decay_interval: int = 25000
    decay_start: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def lr_at(opt: OptimizerState, step: int) -> float:
    """Step-decay schedule: first decay at ``decay_start``, then every interval."""
    if step < opt.decay_start:
        d = 0
    else:
        d = (step - opt.decay_start) // opt.decay_interval + 1
    return opt.base_lr * opt.decay ** d


def clip_gradients(params, clip_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``clip_norm``.

    Returns the norm before clipping.
    """
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if clip_norm and clip_norm > 0 and total > clip_norm:
        scale = clip_norm / total
        for p in params:
            p.grad *= scale
    return total


def adam_step(opt: OptimizerState, params) -> float:
    """Clip, then apply one bias-corrected Adam update. Returns the lr used."""
    params = [p for p in params if p.trainable]
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")
    clip_gradients(params, opt.clip_norm)
    opt.step += 1
    t = opt.step
    lr = lr_at(opt, t)
    bc1 = 1.0 - opt.beta1 ** t
    bc2 = 1.0 - opt.beta2 ** t
    for p in params:
        m = opt.m.get(p.name)
        if m is None:
            m = opt.m[p.name] = np.zeros_like(p.value)
            opt.v[p.name] = np.zeros_like(p.value)
        v = opt.v[p.name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * p.grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * p.grad * p.grad
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return lr


def uniform_init(rng: SeededRng, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return (2.0 * rng.uniform(shape) - 1.0) * bound


def lstm_params(rng: SeededRng, n_in: int, hidden: int):
    w = uniform_init(rng, (n_in + hidden, 4 * hidden), n_in + hidden)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    return w, b
