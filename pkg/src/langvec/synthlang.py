"""Synthetic language families that differ only in word order.

All languages share one pivot lexicon. A language is a
:class:`TypologyProfile` of five word-order parameters; languages in a genus
copy the genus prototype and may flip one parameter.

Clause template::

    S = [det] [adj] noun
    V = [neg] verb
    O = [det] [adj] noun [adposition [det] [adj] noun]

with the order inside each group and between S, V and O set by the profile.
"""
from __future__ import annotations

import csv
import re
from dataclasses import asdict, dataclass, field, fields
from itertools import product
from pathlib import Path

from .numeric import SeededRng

DOMAINS = {
    "clause_order": ("SVO", "SOV", "VSO", "VOS", "OVS", "OSV"),
    "adj_noun": ("AdjN", "NAdj"),
    "adposition": ("Pre", "Post"),
    "negation": ("PreV", "PostV"),
    "determiner": ("DetN", "NDet"),
}
FEATURES = tuple(DOMAINS)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class TypologyProfile:
    clause_order: str = "SVO"
    adj_noun: str = "AdjN"
    adposition: str = "Pre"
    negation: str = "PreV"
    determiner: str = "DetN"

    def __post_init__(self):
        for name, domain in DOMAINS.items():
            if getattr(self, name) not in domain:
                raise SynthError(f"{name}={getattr(self, name)!r} not in {domain}")

    def as_record(self) -> dict[str, str]:
        return asdict(self)

    def distance(self, other: "TypologyProfile") -> int:
        return sum(getattr(self, f) != getattr(other, f) for f in FEATURES)


ALL_PROFILES = tuple(TypologyProfile(*values) for values in product(*DOMAINS.values()))


@dataclass(frozen=True)
class Lexicon:
    nouns: tuple = (
        "dog", "cat", "tree", "house", "river", "bird", "child", "woman", "man", "horse",
        "stone", "book", "table", "city", "field", "ship", "road", "door", "king", "fish",
        "apple", "cloud", "mountain", "garden", "teacher", "wolf", "boat", "letter", "window", "forest",
    )
    verbs: tuple = (
        "sees", "takes", "finds", "likes", "hears", "follows",
        "carries", "builds", "paints", "calls", "watches", "helps",
    )
    adjectives: tuple = (
        "red", "blue", "big", "small", "old", "new", "green", "quiet", "dark", "happy",
    )
    determiners: tuple = ("the", "a", "this", "that")
    adpositions: tuple = ("near", "with", "under")
    negation: tuple = ("not",)

    def categories(self) -> dict[str, tuple]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def words(self) -> list[str]:
        return [w for ws in self.categories().values() for w in ws]

    def check(self):
        for name, words in self.categories().items():
            if not words:
                raise SynthError(f"lexicon category {name!r} is empty")


@dataclass
class FamilySpec:
    genera: int = 3
    languages_per_genus: int = 4
    mutation_rate: float = 0.25
    lexicon_size: int = 60
    sentences_per_language: int = 2000
    seed: int = 0
    specific_surface: bool = False

    def validate(self):
        if self.genera < 2:
            raise SynthError("need at least two genera")
        if self.languages_per_genus < 1:
            raise SynthError("need at least one language per genus")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise SynthError("mutation_rate must lie in [0, 1]")


@dataclass
class GroundTruth:
    languages: list
    profiles: dict = field(default_factory=dict)
    genus: dict = field(default_factory=dict)


def language_code(genus: int, member: int) -> str:
    return f"g{genus}l{member}"


def pick_prototypes(n: int, rng: SeededRng, min_distance: int = 3, attempts: int = 200):
    """Greedily choose ``n`` profiles pairwise differing in >= ``min_distance`` slots."""
    best: list = []
    for _ in range(attempts):
        chosen: list = []
        for prof in rng.shuffle(list(ALL_PROFILES)):
            if all(prof.distance(c) >= min_distance for c in chosen):
                chosen.append(prof)
                if len(chosen) == n:
                    return chosen
        best = max(best, chosen, key=len)
    raise SynthError(
        f"cannot find {n} prototypes pairwise differing in >= {min_distance} parameters "
        f"(best found: {len(best)})"
    )


def mutate(profile: TypologyProfile, rng: SeededRng) -> TypologyProfile:
    """Change exactly one uniformly chosen parameter to a different value."""
    name = FEATURES[rng.choice(len(FEATURES))]
    options = [v for v in DOMAINS[name] if v != getattr(profile, name)]
    record = profile.as_record()
    record[name] = options[rng.choice(len(options))]
    return TypologyProfile(**record)


def sample_family(spec: FamilySpec):
    """Returns ``(profiles by language code, GroundTruth)``."""
    spec.validate()
    rng = SeededRng(spec.seed).child("family")
    prototypes = pick_prototypes(spec.genera, rng)
    gt = GroundTruth(languages=[])
    for g, proto in enumerate(prototypes):
        for m in range(spec.languages_per_genus):
            code = language_code(g, m)
            prof = mutate(proto, rng) if rng.bernoulli(spec.mutation_rate) else proto
            gt.languages.append(code)
            gt.profiles[code] = prof
            gt.genus[code] = g
    return dict(gt.profiles), gt


def _noun_phrase(profile, lexicon, rng, p):
    noun = lexicon.nouns[rng.choice(len(lexicon.nouns))]
    core = [noun]
    if rng.bernoulli(p):
        adj = lexicon.adjectives[rng.choice(len(lexicon.adjectives))]
        core = [adj, noun] if profile.adj_noun == "AdjN" else [noun, adj]
    if rng.bernoulli(p):
        det = lexicon.determiners[rng.choice(len(lexicon.determiners))]
        core = [det] + core if profile.determiner == "DetN" else core + [det]
    return core


def generate_sentence(profile: TypologyProfile, lexicon: Lexicon, rng: SeededRng,
                      p_optional: float = 0.5) -> list[str]:
    subj = _noun_phrase(profile, lexicon, rng, p_optional)
    verb = [lexicon.verbs[rng.choice(len(lexicon.verbs))]]
    if rng.bernoulli(p_optional):
        neg = lexicon.negation[rng.choice(len(lexicon.negation))]
        verb = [neg] + verb if profile.negation == "PreV" else verb + [neg]
    obj = _noun_phrase(profile, lexicon, rng, p_optional)
    if rng.bernoulli(p_optional):
        adp = lexicon.adpositions[rng.choice(len(lexicon.adpositions))]
        inner = _noun_phrase(profile, lexicon, rng, p_optional)
        obj = obj + ([adp] + inner if profile.adposition == "Pre" else inner + [adp])
    parts = {"S": subj, "V": verb, "O": obj}
    return [w for slot in profile.clause_order for w in parts[slot]]


def generate_corpus(profile: TypologyProfile, lexicon: Lexicon, n: int, rng: SeededRng,
                    p_optional: float = 0.5) -> list[list[str]]:
    lexicon.check()
    return [generate_sentence(profile, lexicon, rng, p_optional) for _ in range(n)]


def surface_rename(sentences, code: str) -> list[list[str]]:
    """Give every pivot word a language-specific surface form."""
    return [[f"{w}-{code}" for w in toks] for toks in sentences]


_CATEGORY_LETTER = {
    "nouns": "N", "verbs": "V", "adjectives": "A",
    "determiners": "D", "adpositions": "P", "negation": "G",
}


def _np_pattern(profile):
    core = "A?N" if profile.adj_noun == "AdjN" else "NA?"
    return f"D?{core}" if profile.determiner == "DetN" else f"{core}D?"


def grammar_pattern(profile: TypologyProfile) -> re.Pattern:
    """Regular expression over category letters accepted under ``profile``."""
    np_ = _np_pattern(profile)
    pp = f"P{np_}" if profile.adposition == "Pre" else f"{np_}P"
    groups = {
        "S": f"({np_})",
        "V": "(G?V)" if profile.negation == "PreV" else "(VG?)",
        "O": f"({np_}({pp})?)",
    }
    return re.compile("".join(groups[s] for s in profile.clause_order))


def is_grammatical(tokens, profile: TypologyProfile, lexicon: Lexicon) -> bool:
    letters = {w: _CATEGORY_LETTER[cat] for cat, ws in lexicon.categories().items() for w in ws}
    try:
        tags = "".join(letters[t] for t in tokens)
    except KeyError:
        return False
    return grammar_pattern(profile).fullmatch(tags) is not None


def generate_family(spec: FamilySpec, lexicon: Lexicon | None = None):
    """Sample a family and its corpora. Returns ``(GroundTruth, corpora)``."""
    lexicon = lexicon or Lexicon()
    lexicon.check()
    if len(lexicon.words()) != spec.lexicon_size:
        raise SynthError(
            f"lexicon has {len(lexicon.words())} words but spec asks for {spec.lexicon_size}"
        )
    _, gt = sample_family(spec)
    root = SeededRng(spec.seed)
    corpora = {}
    for code in gt.languages:
        sents = generate_corpus(gt.profiles[code], lexicon, spec.sentences_per_language,
                                root.child("corpus", code))
        corpora[code] = surface_rename(sents, code) if spec.specific_surface else sents
    return gt, corpora


def write_corpora(corpora: dict[str, list[list[str]]], root) -> list[Path]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for code, sents in corpora.items():
        path = root / f"{code}.txt"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for toks in sents:
                fh.write(" ".join(toks) + "\n")
        paths.append(path)
    return paths


FEATURE_HEADER = ("language",) + FEATURES


def emit_ground_truth(gt: GroundTruth, directory, features_name: str = "features.csv",
                      genera_name: str = "genera.txt") -> tuple[Path, Path]:
    """Write the feature table CSV and the ``<code> <genus>`` file."""
    if not gt.languages:
        raise SynthError("ground truth is empty")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        feat_path = directory / features_name
        with open(feat_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(FEATURE_HEADER)
            for code in gt.languages:
                rec = gt.profiles[code].as_record()
                writer.writerow([code] + [rec[f] for f in FEATURES])
        genus_path = directory / genera_name
        with open(genus_path, "w", encoding="utf-8", newline="\n") as fh:
            for code in gt.languages:
                fh.write(f"{code} {gt.genus[code]}\n")
    except OSError as exc:
        raise SynthError(f"cannot write ground truth to {directory}: {exc}") from exc
    return feat_path, genus_path
