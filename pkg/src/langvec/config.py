"""Run configuration: one flat ``key = value`` file, overridable by flags."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .numeric import derive_seed
from .synthlang import FamilySpec


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # paths
    out: str = "run"
    corpus: str = ""
    features: str = ""
    genera: str = ""
    embeddings: str = ""
    checkpoint: str = ""
    word_vectors: str = ""
    word_list: str = ""
    # synthetic family
    family_genera: int = 3
    languages_per_genus: int = 4
    mutation_rate: float = 0.25
    lexicon_size: int = 60
    sentences_per_language: int = 2000
    specific_surface: bool = False
    # corpus pipeline
    max_sentences: int = 200000
    max_len: int = 20
    min_count: int = 1
    max_vocab: int = 0
    vocab_mode: str = "shared"
    heldout_fraction: float = 0.05
    # model and optimiser
    word_dim: int = 32
    lang_dim: int = 50
    hidden_size: int = 64
    layers: int = 2
    max_decode_len: int = 40
    batch_size: int = 16
    epochs: int = 10
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
    # evaluation
    side: str = "decoder"
    k: int = 3
    repeats: int = 100
    min_coverage: float = 0.5
    cluster_restarts: int = 50

    def module_seed(self, tag: str) -> int:
        return derive_seed(self.seed, tag)

    def family_spec(self) -> FamilySpec:
        return FamilySpec(
            genera=self.family_genera, languages_per_genus=self.languages_per_genus,
            mutation_rate=self.mutation_rate, lexicon_size=self.lexicon_size,
            sentences_per_language=self.sentences_per_language,
            seed=self.module_seed("synthlang"), specific_surface=self.specific_surface,
        )

    def model_config(self, vocab_size: int, n_languages: int) -> ModelConfig:
        shared = {f.name for f in fields(ModelConfig)} & {f.name for f in fields(self)}
        kwargs = {name: getattr(self, name) for name in shared if name != "seed"}
        return ModelConfig(vocab_size=vocab_size, n_languages=n_languages,
                           seed=self.module_seed("model"), **kwargs)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


_TYPES = typing.get_type_hints(RunConfig)


def parse_value(key: str, raw: str):
    typ = _TYPES[key]
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw, 0)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {typ.__name__})") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = parse_value(key, raw)
    return values


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then ``overrides`` (flags win)."""
    values = {}
    if path:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, str(p)))
    for key, v in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        if v is not None:
            values[key] = v
    return dataclasses.replace(RunConfig(), **values)
