"""Small training setups shared by the model, CLI and acceptance tests."""
import time

from langvec import corpus, model, synthlang
from langvec.numeric import SeededRng

MEMO_LR = 0.02
MEMO_STEPS = 500


def memorization_run(seed=0, n=8, hidden=32, lr=MEMO_LR, max_steps=MEMO_STEPS):
    """Train on ``n`` sentences of one language, one full batch per step.

    Stops as soon as a step's mean per-token loss drops below 0.01. Returns
    ``(state, tagged sentences, final loss, seconds)``.
    """
    sents = synthlang.generate_corpus(synthlang.TypologyProfile(), synthlang.Lexicon(), n,
                                      SeededRng(seed))
    langs = corpus.LanguageSet(("xx",))
    vocab = corpus.build_vocab({"xx": sents})
    tagged = corpus.tag_corpora({"xx": sents}, vocab, langs)
    cfg = model.ModelConfig(vocab_size=len(vocab), n_languages=1, hidden_size=hidden,
                            batch_size=n, base_lr=lr, seed=seed, log_every=1)
    state = model.new_state(cfg, langs, vocab)
    start = time.perf_counter()
    loss = float("inf")
    while state.step < max_steps and loss >= 0.01:
        model.train(state, tagged, state.epoch + 1)
        loss = state.epoch_losses[-1]
    return state, tagged["xx"], loss, time.perf_counter() - start


def exact_reconstructions(state, sentences, seed=100):
    """How many sentences come back exactly from a fresh shuffle."""
    rng = SeededRng(seed)
    return sum(state.model.reconstruct(corpus.perturb(s, rng)) == list(s.ids) for s in sentences)


def set_partitions(n, max_blocks):
    """All label vectors of ``n`` items with at most ``max_blocks`` blocks (restricted growth)."""
    out = []

    def grow(prefix, used):
        if len(prefix) == n:
            out.append(tuple(prefix))
            return
        for b in range(min(used + 1, max_blocks)):
            grow(prefix + [b], max(used, b + 1))

    grow([], 0)
    return out


def pair_count_ari(a, b):
    """ARI from explicit pair agreement counts, looping over every pair."""
    n = len(a)
    n11 = n10 = n01 = n00 = 0
    for i in range(n):
        for j in range(i + 1, n):
            sa, sb = a[i] == a[j], b[i] == b[j]
            if sa and sb:
                n11 += 1
            elif sa:
                n10 += 1
            elif sb:
                n01 += 1
            else:
                n00 += 1
    den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11)
    if den == 0:
        return 1.0
    return 2.0 * (n00 * n11 - n01 * n10) / den


def blobs(rng, k=3, per=5, dim=5, spread=0.1, sep=10.0):
    centres = sep * rng.normal(k * dim).reshape(k, dim)
    labels = [c for c in range(k) for _ in range(per)]
    pts = centres[labels] + spread * rng.normal(k * per * dim).reshape(k * per, dim)
    return pts, labels
