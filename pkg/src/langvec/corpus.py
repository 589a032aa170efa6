"""Corpus ingestion, vocabulary, language tagging, shuffling and batching.

Sentences are whitespace-tokenised lines. Every token of a sentence carries
the sentence's language index, so a :class:`TaggedSentence` stores the word
ids once plus a single language id.

Reserved vocabulary ids: 0 ``<pad>``, 1 ``<unk>``, 2 ``<s>``, 3 ``</s>``.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numeric import SeededRng

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")

SHARED = "shared"
SPECIFIC = "specific"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class LanguageSet:
    """Ordered language codes; a code's position is its dense index."""

    codes: tuple

    def __post_init__(self):
        if len(set(self.codes)) != len(self.codes):
            raise CorpusError(f"duplicate language codes in {self.codes}")

    def index(self, code: str) -> int:
        try:
            return self.codes.index(code)
        except ValueError:
            raise CorpusError(f"unknown language code {code!r}") from None

    def __len__(self):
        return len(self.codes)

    def __iter__(self):
        return iter(self.codes)


class Vocabulary:
    """Bijective word <-> id map with fixed reserved ids.

    In ``specific`` mode every entry is language-qualified (``word_lang``) so
    each language gets its own block of embeddings.
    """

    def __init__(self, words: Iterable[str], mode: str = SHARED):
        if mode not in (SHARED, SPECIFIC):
            raise CorpusError(f"unknown vocabulary mode {mode!r}")
        self.mode = mode
        self.itos = list(RESERVED)
        for w in words:
            if w not in RESERVED:
                self.itos.append(w)
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("duplicate words in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    def key(self, word: str, lang: str | None) -> str:
        if self.mode == SPECIFIC:
            if lang is None:
                raise CorpusError("specific vocabulary needs a language code")
            return f"{word}_{lang}"
        return word

    def encode(self, tokens: Sequence[str], lang: str | None = None) -> list[int]:
        return [self.stoi.get(self.key(t, lang), UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i in (PAD, BOS, EOS):
                continue
            w = self.itos[i]
            if self.mode == SPECIFIC and i >= len(RESERVED):
                w = w.rsplit("_", 1)[0]
            out.append(w)
        return out

    def words(self) -> list[str]:
        return self.itos[len(RESERVED):]


@dataclass(frozen=True)
class TaggedSentence:
    ids: tuple
    lang: int

    @property
    def tokens(self):
        return [(w, self.lang) for w in self.ids]

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class NoisyPair:
    source: TaggedSentence
    target: TaggedSentence


@dataclass
class Batch:
    src: np.ndarray        # (B, Ts) word ids, PAD-filled
    src_mask: np.ndarray   # (B, Ts) bool
    tgt_in: np.ndarray     # (B, Tt) <s> w1 .. wn
    tgt_out: np.ndarray    # (B, Tt) w1 .. wn </s>
    tgt_mask: np.ndarray   # (B, Tt) bool
    langs: np.ndarray      # (B,)
    src_lengths: np.ndarray
    tgt_lengths: np.ndarray  # sentence lengths, without sentinels

    def __len__(self):
        return len(self.langs)


def read_lines(path: Path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh]


def load_corpus(root, languages: Sequence[str], max_sentences: int, max_len: int,
                rng: SeededRng) -> dict[str, list[list[str]]]:
    """Load ``<root>/<lang>.txt`` for each language.

    Lines longer than ``max_len`` tokens (and blank lines) are dropped, then at
    most ``max_sentences`` are sampled uniformly without replacement. Sampled
    sentences keep their file order.
    """
    root = Path(root)
    out: dict[str, list[list[str]]] = {}
    for code in languages:
        path = root / f"{code}.txt"
        if not path.is_file():
            raise CorpusError(f"missing corpus file for language {code!r}: {path}")
        lines = read_lines(path)
        if not lines:
            raise CorpusError(f"empty corpus file for language {code!r}: {path}")
        kept = [toks for toks in lines if 0 < len(toks) <= max_len]
        if len(kept) > max_sentences:
            pick = np.sort(rng.child("sample", code).permutation(len(kept))[:max_sentences])
            kept = [kept[i] for i in pick]
        log.info("corpus %s: %d lines read, %d kept", code, len(lines), len(kept))
        out[code] = kept
    return out


def build_vocab(corpora: dict[str, list[list[str]]], min_count: int = 1,
                max_size: int | None = None, word_list: Sequence[str] | None = None,
                mode: str = SHARED) -> Vocabulary:
    """Build a vocabulary by frequency, or restrict it to ``word_list``.

    Frequency ties are broken lexicographically.
    """
    if word_list is not None:
        return Vocabulary(word_list, mode=mode)
    if not corpora:
        raise CorpusError("build_vocab needs at least one corpus")
    counts: Counter = Counter()
    for code, sentences in corpora.items():
        for toks in sentences:
            if mode == SPECIFIC:
                counts.update(f"{t}_{code}" for t in toks)
            else:
                counts.update(toks)
    for r in RESERVED:
        counts.pop(r, None)
    ranked = sorted((w for w, c in counts.items() if c >= min_count),
                    key=lambda w: (-counts[w], w))
    if max_size is not None:
        ranked = ranked[:max_size]
    return Vocabulary(ranked, mode=mode)


def tag_corpora(corpora: dict[str, list[list[str]]], vocab: Vocabulary,
                languages: LanguageSet) -> dict[str, list[TaggedSentence]]:
    """Encode each sentence and attach its language index."""
    return {
        code: [TaggedSentence(tuple(vocab.encode(toks, code)), languages.index(code))
               for toks in sentences]
        for code, sentences in corpora.items()
    }


def perturb(sentence: TaggedSentence, rng: SeededRng) -> TaggedSentence:
    """Uniformly random permutation of the sentence's tokens."""
    if len(sentence) == 0:
        raise CorpusError("cannot perturb an empty sentence")
    if len(sentence) == 1:
        return sentence
    order = rng.permutation(len(sentence))
    return TaggedSentence(tuple(sentence.ids[i] for i in order), sentence.lang)


def noisy_pairs(sentences: Iterable[TaggedSentence], rng: SeededRng) -> list[NoisyPair]:
    return [NoisyPair(perturb(s, rng), s) for s in sentences]


def pad_batch(pairs: Sequence[NoisyPair]) -> Batch:
    B = len(pairs)
    src_len = np.array([len(p.source) for p in pairs])
    tgt_len = np.array([len(p.target) for p in pairs])
    Ts, Tt = int(src_len.max()), int(tgt_len.max()) + 1
    src = np.full((B, Ts), PAD, dtype=np.int64)
    tgt_in = np.full((B, Tt), PAD, dtype=np.int64)
    tgt_out = np.full((B, Tt), PAD, dtype=np.int64)
    for r, p in enumerate(pairs):
        n = len(p.target)
        src[r, :len(p.source)] = p.source.ids
        tgt_in[r, 0] = BOS
        tgt_in[r, 1:n + 1] = p.target.ids
        tgt_out[r, :n] = p.target.ids
        tgt_out[r, n] = EOS
    src_mask = np.arange(Ts)[None, :] < src_len[:, None]
    tgt_mask = np.arange(Tt)[None, :] < (tgt_len + 1)[:, None]
    langs = np.array([p.target.lang for p in pairs], dtype=np.int64)
    return Batch(src, src_mask, tgt_in, tgt_out, tgt_mask, langs, src_len, tgt_len)


def make_batches(pairs: Sequence[NoisyPair], batch_size: int,
                 rng: SeededRng | None = None) -> list[Batch]:
    """Shuffle (when ``rng`` is given), chunk and pad."""
    if not pairs:
        raise CorpusError("make_batches needs at least one pair")
    order = rng.permutation(len(pairs)) if rng is not None else np.arange(len(pairs))
    return [pad_batch([pairs[i] for i in order[s:s + batch_size]])
            for s in range(0, len(pairs), batch_size)]


# ---------------------------------------------------------------- word maps

def read_word_vectors(path) -> tuple[list[str], np.ndarray]:
    """Read the ``<count> <dim>`` header text format."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise CorpusError(f"{path}: bad header, expected '<count> <dim>'")
        count, dim = int(header[0]), int(header[1])
        words, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise CorpusError(f"{path}:{lineno}: expected {dim} values")
            words.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if len(words) != count:
        raise CorpusError(f"{path}: header says {count} rows, found {len(words)}")
    return words, np.array(rows, dtype=np.float64).reshape(count, dim)


def write_word_vectors(path, words: Sequence[str], vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(words)} {vectors.shape[1]}\n")
        for w, row in zip(words, vectors):
            fh.write(w + " " + " ".join(repr(float(v)) for v in row) + "\n")


def _unit_rows(words, vectors, what):
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    bad = np.flatnonzero(norms == 0)
    if len(bad):
        raise CorpusError(f"zero-norm {what} vector for word {words[bad[0]]!r}")
    return vectors / norms[:, None]


def csls_scores(source: np.ndarray, pivot: np.ndarray, k: int) -> np.ndarray:
    """CSLS matrix 2 cos(x, y) - r_src(x) - r_pivot(y) for unit-norm rows."""
    cos = source @ pivot.T
    k_src = min(k, pivot.shape[0])
    k_piv = min(k, source.shape[0])
    r_src = np.sort(cos, axis=1)[:, -k_src:].mean(axis=1)
    r_piv = np.sort(cos, axis=0)[-k_piv:, :].mean(axis=0)
    return 2.0 * cos - r_src[:, None] - r_piv[None, :]


def csls_map(source_words: Sequence[str], source_vectors: np.ndarray,
             pivot_words: Sequence[str], pivot_vectors: np.ndarray,
             k: int = 10) -> dict[str, str]:
    """Map each source word to the pivot word with the highest CSLS score.

    Ties go to the lower pivot index.
    """
    if k < 1:
        raise CorpusError("csls k must be >= 1")
    if len(source_words) == 0 or len(pivot_words) == 0:
        raise CorpusError("csls_map needs nonempty source and pivot sets")
    src = _unit_rows(source_words, source_vectors, "source")
    piv = _unit_rows(pivot_words, pivot_vectors, "pivot")
    best = np.argmax(csls_scores(src, piv, k), axis=1)
    return {w: pivot_words[j] for w, j in zip(source_words, best)}


def write_mapping(path, mapping: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for src, piv in mapping.items():
            fh.write(f"{src} {piv}\n")


def read_mapping(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 2:
                out[parts[0]] = parts[1]
    return out


def apply_mapping(sentences: Iterable[Sequence[str]], mapping: dict[str, str]) -> list[list[str]]:
    """Replace words by their pivot translation; unmapped words become ``<unk>``."""
    return [[mapping.get(t, RESERVED[UNK]) for t in toks] for toks in sentences]
