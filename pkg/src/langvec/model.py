"""Multilingual denoising autoencoder that learns one vector per language.

The encoder reads a shuffled sentence, the decoder regenerates the original
order. Every input token, on both sides, is the concatenation of a word
vector and a language vector; encoder and decoder keep separate language
tables. After training the decoder table is the language embedding.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .corpus import (BOS, EOS, PAD, Batch, LanguageSet, TaggedSentence, Vocabulary,
                     make_batches, noisy_pairs, pad_batch, write_word_vectors)
from .numeric import SeededRng, derive_seed, normal_sample

log = logging.getLogger(__name__)

SIDES = ("encoder", "decoder")


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int = 64
    n_languages: int = 1
    word_dim: int = 32
    lang_dim: int = 50
    hidden_size: int = 64
    layers: int = 2
    max_decode_len: int = 40
    batch_size: int = 16
    seed: int = 0
    base_lr: float = 1e-3
    decay: float = 0.85
    decay_interval: int = 25000
    decay_start: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    lang_init_std: float = 0.1
    word_embeddings_trainable: bool = False
    log_every: int = 100

    def __post_init__(self):
        for name in ("vocab_size", "n_languages", "word_dim", "lang_dim", "hidden_size", "layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.word_dim + self.lang_dim

    def optimizer(self) -> nn.OptimizerState:
        return nn.OptimizerState(
            base_lr=self.base_lr, decay=self.decay, decay_interval=self.decay_interval,
            decay_start=self.decay_start, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, clip_norm=self.clip_norm,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def init_language_table(seed: int, side: str, n: int, dim: int, std: float) -> np.ndarray:
    """Seeded normal initialisation of one side's language table."""
    rng = SeededRng(derive_seed(seed, "init", side + "_lang"))
    return normal_sample(rng, n * dim, 0.0, std).reshape(n, dim)


class Denoiser:
    """Parameters and forward/backward passes of the seq2seq denoiser."""

    def __init__(self, config: ModelConfig, word_vectors: np.ndarray | None = None):
        self.config = cfg = config
        rng = SeededRng(derive_seed(cfg.seed, "init"))
        params = []
        if word_vectors is None:
            word_vectors = normal_sample(rng.child("word_emb"), cfg.vocab_size * cfg.word_dim,
                                         0.0, cfg.word_dim ** -0.5)
            word_vectors = word_vectors.reshape(cfg.vocab_size, cfg.word_dim)
        word_vectors = np.asarray(word_vectors, dtype=np.float64)
        if word_vectors.shape != (cfg.vocab_size, cfg.word_dim):
            raise ValueError(f"word vectors {word_vectors.shape} != "
                             f"{(cfg.vocab_size, cfg.word_dim)}")
        params.append(nn.Parameter("word_emb", word_vectors.copy(),
                                   trainable=cfg.word_embeddings_trainable))
        for side in SIDES:
            table = init_language_table(cfg.seed, side, cfg.n_languages, cfg.lang_dim,
                                        cfg.lang_init_std)
            params.append(nn.Parameter(f"{side[:3]}_lang", table))
        for side in ("enc", "dec"):
            for l in range(cfg.layers):
                n_in = cfg.input_dim if l == 0 else cfg.hidden_size
                w, b = nn.lstm_params(rng.child(side, l), n_in, cfg.hidden_size)
                params.append(nn.Parameter(f"{side}.l{l}.w", w))
                params.append(nn.Parameter(f"{side}.l{l}.b", b))
        H = cfg.hidden_size
        params.append(nn.Parameter("att.w_a", nn.uniform_init(rng.child("w_a"), (H, H), H)))
        params.append(nn.Parameter("att.w_c", nn.uniform_init(rng.child("w_c"), (2 * H, H), 2 * H)))
        params.append(nn.Parameter("out.w", nn.uniform_init(rng.child("out"), (H, cfg.vocab_size), H)))
        params.append(nn.Parameter("out.b", np.zeros(cfg.vocab_size)))
        self.params = {p.name: p for p in params}

    # ------------------------------------------------------------ helpers
    def value(self, name):
        return self.params[name].value

    def _layers(self, side):
        return [(self.value(f"{side}.l{l}.w"), self.value(f"{side}.l{l}.b"))
                for l in range(self.config.layers)]

    def lang_table(self, side: str) -> np.ndarray:
        if side not in SIDES:
            raise ValueError(f"unknown side {side!r}; valid: {', '.join(SIDES)}")
        return self.value(f"{side[:3]}_lang")

    def embed_token(self, word_id: int, lang_id: int, side: str) -> np.ndarray:
        """``[word_vector ; language_vector]`` for one token."""
        cfg = self.config
        if not 0 <= word_id < cfg.vocab_size:
            raise IndexError(f"word id {word_id} out of range [0, {cfg.vocab_size})")
        if not 0 <= lang_id < cfg.n_languages:
            raise IndexError(f"language id {lang_id} out of range [0, {cfg.n_languages})")
        return np.concatenate([self.value("word_emb")[word_id], self.lang_table(side)[lang_id]])

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # ------------------------------------------------------ forward/backward
    def encode(self, src, src_mask, langs):
        xs = nn.embed_forward(self.value("word_emb"), self.value("enc_lang"), src, langs)
        return nn.stacked_lstm_forward(xs, self._layers("enc"), None, src_mask)

    def loss(self, batch: Batch, backward: bool = True) -> tuple[float, int]:
        """Summed token NLL and token count; accumulates mean-loss gradients."""
        V = self.value
        enc_out, enc_final, enc_cache = self.encode(batch.src, batch.src_mask, batch.langs)
        ys = nn.embed_forward(V("word_emb"), V("dec_lang"), batch.tgt_in, batch.langs)
        dec_out, _, dec_cache = nn.stacked_lstm_forward(ys, self._layers("dec"), enc_final)
        att, _, att_cache = nn.global_attention_forward(dec_out, enc_out, batch.src_mask,
                                                        V("att.w_a"), V("att.w_c"))
        logits = nn.linear_forward(att, V("out.w"), V("out.b"))
        loss_sum, count, dlogits = nn.masked_cross_entropy(logits, batch.tgt_out, batch.tgt_mask)
        if not backward:
            return loss_sum, count
        dlogits /= count
        g = lambda name: self.params[name].grad  # noqa: E731
        datt, dw, db = nn.linear_backward(dlogits, att, V("out.w"))
        g("out.w")[...] += dw
        g("out.b")[...] += db
        ddec, denc, dwa, dwc = nn.global_attention_backward(datt, att_cache, V("att.w_a"),
                                                            V("att.w_c"))
        g("att.w_a")[...] += dwa
        g("att.w_c")[...] += dwc
        H = self.config.hidden_size
        B = len(batch)
        zero = [(np.zeros((B, H)), np.zeros((B, H)))] * self.config.layers
        dys, dinit, dec_grads = nn.stacked_lstm_backward(ddec, zero, dec_cache, self._layers("dec"))
        dxs, _, enc_grads = nn.stacked_lstm_backward(denc, dinit, enc_cache, self._layers("enc"))
        for side, grads in (("dec", dec_grads), ("enc", enc_grads)):
            for l, (dw, db) in enumerate(grads):
                g(f"{side}.l{l}.w")[...] += dw
                g(f"{side}.l{l}.b")[...] += db
        need_word = self.params["word_emb"].trainable
        wshape = V("word_emb").shape
        lshape = V("enc_lang").shape
        dword_d, dlang_d = nn.embed_backward(dys, batch.tgt_in, batch.langs, wshape, lshape, need_word)
        dword_e, dlang_e = nn.embed_backward(dxs, batch.src, batch.langs, wshape, lshape, need_word)
        g("dec_lang")[...] += dlang_d
        g("enc_lang")[...] += dlang_e
        if need_word:
            g("word_emb")[...] += dword_d + dword_e
        return loss_sum, count

    # ----------------------------------------------------------- decoding
    def greedy_decode(self, src, src_mask, langs, max_len: int | None = None) -> list[list[int]]:
        """Argmax decoding (ties to the lower id) until ``</s>`` or ``max_len``."""
        cfg = self.config
        max_len = max_len or cfg.max_decode_len
        V = self.value
        enc_out, state, _ = self.encode(src, src_mask, langs)
        state = [tuple(s) for s in state]
        B = src.shape[0]
        tok = np.full(B, BOS, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        out = [[] for _ in range(B)]
        dec_lang = V("dec_lang")[langs]
        banned = [PAD, BOS]
        for _ in range(max_len):
            x = np.concatenate([V("word_emb")[tok], dec_lang], axis=-1)
            new_state = []
            for l in range(cfg.layers):
                h, c, _ = nn.lstm_cell_forward(x, state[l][0], state[l][1],
                                               V(f"dec.l{l}.w"), V(f"dec.l{l}.b"))
                new_state.append((h, c))
                x = h
            state = new_state
            att, _, _ = nn.global_attention_forward(x[:, None, :], enc_out, src_mask,
                                                    V("att.w_a"), V("att.w_c"))
            logits = nn.linear_forward(att[:, 0], V("out.w"), V("out.b"))
            logits[:, banned] = -np.inf
            tok = np.argmax(logits, axis=-1)
            for r in np.flatnonzero(~done):
                if tok[r] == EOS:
                    done[r] = True
                else:
                    out[r].append(int(tok[r]))
            if done.all():
                break
        return out

    def reconstruct(self, sentence: TaggedSentence) -> list[int]:
        src = np.array([sentence.ids], dtype=np.int64)
        mask = np.ones_like(src, dtype=bool)
        return self.greedy_decode(src, mask, np.array([sentence.lang]))[0]


# ------------------------------------------------------------------ training

@dataclass
class TrainState:
    model: Denoiser
    optimizer: nn.OptimizerState
    languages: LanguageSet
    vocab: Vocabulary
    epoch: int = 0
    history: list = field(default_factory=list)        # (step, loss, lr)
    epoch_losses: list = field(default_factory=list)

    @property
    def step(self) -> int:
        return self.optimizer.step


def new_state(config: ModelConfig, languages: LanguageSet, vocab: Vocabulary,
              word_vectors: np.ndarray | None = None) -> TrainState:
    return TrainState(Denoiser(config, word_vectors), config.optimizer(), languages, vocab)


def epoch_batches(state: TrainState, sentences: Sequence[TaggedSentence], epoch: int) -> list[Batch]:
    """Fresh shuffles of every sentence, then a seeded batch order."""
    rng = SeededRng(derive_seed(state.model.config.seed, "epoch", epoch))
    pairs = noisy_pairs(sentences, rng.child("perturb"))
    return make_batches(pairs, state.model.config.batch_size, rng.child("batch"))


def train_step(state: TrainState, batch: Batch) -> tuple[float, float]:
    """One optimiser step. Returns ``(mean token loss, lr)``."""
    model = state.model
    model.zero_grad()
    loss_sum, count = model.loss(batch)
    loss = loss_sum / count
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss at step {state.step + 1}")
    try:
        lr = nn.adam_step(state.optimizer, model.params.values())
    except FloatingPointError as exc:
        raise TrainingError(f"step {state.step + 1}: {exc}") from exc
    return loss, lr


def flatten_corpus(tagged: dict[str, list[TaggedSentence]], languages: LanguageSet):
    out = []
    for code in languages:
        out.extend(tagged.get(code, []))
    return out


def train(state: TrainState, tagged: dict[str, list[TaggedSentence]], epochs: int) -> TrainState:
    """Train until ``state.epoch == epochs`` (resumes from ``state.epoch``)."""
    missing = [c for c in state.languages if not tagged.get(c)]
    if missing:
        raise TrainingError(f"languages without training sentences: {', '.join(missing)}")
    sentences = flatten_corpus(tagged, state.languages)
    log_every = state.model.config.log_every
    while state.epoch < epochs:
        window, total, n = [], 0.0, 0
        lr = nn.lr_at(state.optimizer, max(state.step, 1))
        for batch in epoch_batches(state, sentences, state.epoch):
            loss, lr = train_step(state, batch)
            window.append(loss)
            total += loss
            n += 1
            if len(window) == log_every:
                state.history.append((state.step, float(np.mean(window)), lr))
                window = []
        if window:
            state.history.append((state.step, float(np.mean(window)), lr))
        state.epoch += 1
        state.epoch_losses.append(total / n)
        log.info("epoch %d step %d loss %.5f lr %.3g", state.epoch, state.step, total / n, lr)
    return state


def corpus_loss(model: Denoiser, pairs, batch_size: int) -> float:
    """Mean per-token loss over ``pairs`` without updating anything."""
    total, count = 0.0, 0
    for batch in make_batches(pairs, batch_size):
        s, c = model.loss(batch, backward=False)
        total += s
        count += c
    return total / count


def reconstruction_accuracy(model: Denoiser, sentences: Sequence[TaggedSentence],
                            rng: SeededRng, batch_size: int = 64) -> dict:
    """Token accuracy of greedy reconstructions from fresh shuffles.

    Position ``t`` of a target counts as correct when the decoder's ``t``-th
    output equals it. Returns ``{"per_language": {lang_id: acc}, "pooled": acc}``.
    """
    if not sentences:
        raise ValueError("reconstruction_accuracy needs at least one sentence")
    pairs = noisy_pairs(sentences, rng)
    correct: dict[int, int] = {}
    total: dict[int, int] = {}
    for s in range(0, len(pairs), batch_size):
        chunk = pairs[s:s + batch_size]
        b = pad_batch(chunk)
        outs = model.greedy_decode(b.src, b.src_mask, b.langs,
                                   max(model.config.max_decode_len, int(b.tgt_lengths.max()) + 1))
        for p, out in zip(chunk, outs):
            tgt = p.target.ids
            lang = p.target.lang
            hits = sum(1 for t, w in enumerate(tgt) if t < len(out) and out[t] == w)
            correct[lang] = correct.get(lang, 0) + hits
            total[lang] = total.get(lang, 0) + len(tgt)
    per = {lang: correct[lang] / total[lang] for lang in sorted(total)}
    return {"per_language": per, "pooled": sum(correct.values()) / sum(total.values())}


def extract_language_embeddings(state_or_model, side: str = "decoder") -> np.ndarray:
    model = state_or_model.model if isinstance(state_or_model, TrainState) else state_or_model
    return model.lang_table(side).copy()


def write_language_embeddings(path, codes: Sequence[str], table: np.ndarray) -> None:
    write_word_vectors(path, list(codes), table)


def write_loss_csv(path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,loss,lr\n")
        for step, loss, lr in history:
            fh.write(f"{step},{loss!r},{lr!r}\n")


# ---------------------------------------------------------------- checkpoint
#
# Layout (all integers little-endian):
#   8 bytes  magic b"LANGVEC\0"
#   u32      format version
#   u64      header length N
#   N bytes  UTF-8 JSON header (sorted keys, compact separators)
#   blocks   raw float64 arrays, in the order listed in header["blocks"]

MAGIC = b"LANGVEC\0"
FORMAT_VERSION = 1


def _header_json(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, state: TrainState) -> None:
    model, opt = state.model, state.optimizer
    arrays = []
    for name, p in model.params.items():
        arrays.append(("param", name, p.value))
    for name in model.params:
        if name in opt.m:
            arrays.append(("adam_m", name, opt.m[name]))
            arrays.append(("adam_v", name, opt.v[name]))
    blocks, offset = [], 0
    for kind, name, arr in arrays:
        blocks.append({"kind": kind, "name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "format": "langvec-checkpoint",
        "version": FORMAT_VERSION,
        "config": asdict(model.config),
        "languages": list(state.languages.codes),
        "vocab": state.vocab.itos,
        "vocab_mode": state.vocab.mode,
        "epoch": state.epoch,
        "optimizer": {"step": opt.step},
        "history": [list(h) for h in state.history],
        "epoch_losses": list(state.epoch_losses),
        "blocks": blocks,
    }
    head = _header_json(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
        fh.write(head)
        for _, _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> TrainState:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a langvec checkpoint")
    version, n = struct.unpack_from("<IQ", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + n].decode("utf-8"))
    body = memoryview(data)[start + n:]
    config = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary(header["vocab"][4:], mode=header["vocab_mode"])
    languages = LanguageSet(tuple(header["languages"]))
    arrays = {}
    for blk in header["blocks"]:
        size = int(np.prod(blk["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=size, offset=blk["offset"])
        arrays[(blk["kind"], blk["name"])] = arr.astype(np.float64).reshape(blk["shape"])
    model = Denoiser(config, word_vectors=arrays[("param", "word_emb")])
    for name, p in model.params.items():
        p.value = arrays[("param", name)].copy()
    opt = config.optimizer()
    opt.step = header["optimizer"]["step"]
    for (kind, name), arr in arrays.items():
        if kind == "adam_m":
            opt.m[name] = arr.copy()
        elif kind == "adam_v":
            opt.v[name] = arr.copy()
    return TrainState(model, opt, languages, vocab, epoch=header["epoch"],
                      history=[tuple(h) for h in header["history"]],
                      epoch_losses=list(header["epoch_losses"]))
