"""Command-line pipeline: gen -> train -> extract -> eval (plus pca, report).

Errors are reported on stderr as one line::

    langvec: error[<category>]: <message>

and the process exits with status 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus, evaluation, model, synthlang
from .config import ConfigError, RunConfig, load_config
from .numeric import SeededRng

log = logging.getLogger("langvec")


class CliError(RuntimeError):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# ------------------------------------------------------------------ helpers

def _out(cfg: RunConfig) -> Path:
    return Path(cfg.out)


def _path(value: str, default: Path) -> Path:
    return Path(value) if value else default


def _guard(path: Path, force: bool):
    if path.exists() and not force:
        raise CliError("exists", f"{path} exists; pass --force to overwrite")


def _languages_in(root: Path) -> list[str]:
    if not root.is_dir():
        raise CliError("io", f"corpus directory not found: {root}")
    codes = sorted(p.stem for p in root.glob("*.txt"))
    if not codes:
        raise CliError("data", f"no <lang>.txt corpus files in {root}")
    return codes


def read_language_embeddings(path) -> tuple[list[str], np.ndarray]:
    return corpus.read_word_vectors(path)


# ---------------------------------------------------------------- commands

def cmd_gen(cfg: RunConfig, force: bool = False) -> dict:
    out = _out(cfg)
    if out.exists() and any(out.iterdir()) and not force:
        raise CliError("exists", f"output directory {out} is not empty; pass --force")
    spec = cfg.family_spec()
    gt, corpora = synthlang.generate_family(spec)
    synthlang.write_corpora(corpora, out / "corpus")
    feat_path, genus_path = synthlang.emit_ground_truth(gt, out)
    manifest = {
        "seed": cfg.seed,
        "family_seed": spec.seed,
        "languages": gt.languages,
        "genus": gt.genus,
        "profiles": {c: gt.profiles[c].as_record() for c in gt.languages},
        # the output location is not part of the generated content
        "config": [line for line in cfg.to_text().splitlines() if not line.startswith("out ")],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    log.info("generated %d languages in %s", len(gt.languages), out)
    return manifest


def _prepare_corpus(cfg: RunConfig):
    root = _path(cfg.corpus, _out(cfg) / "corpus")
    codes = _languages_in(root)
    languages = corpus.LanguageSet(tuple(codes))
    raw = corpus.load_corpus(root, codes, cfg.max_sentences, cfg.max_len,
                             SeededRng(cfg.module_seed("corpus")))
    split = SeededRng(cfg.module_seed("heldout"))
    train_raw, held_raw = {}, {}
    for code in codes:
        sents = raw[code]
        n_held = int(round(cfg.heldout_fraction * len(sents))) if len(sents) > 1 else 0
        n_held = min(max(n_held, 1 if cfg.heldout_fraction > 0 and len(sents) > 1 else 0),
                     len(sents) - 1)
        order = split.child(code).permutation(len(sents))
        held = set(order[:n_held].tolist())
        train_raw[code] = [s for i, s in enumerate(sents) if i not in held]
        held_raw[code] = [s for i, s in enumerate(sents) if i in held]
    return languages, train_raw, held_raw


def _vocab_and_vectors(cfg: RunConfig, train_raw):
    vectors = None
    if cfg.word_vectors:
        words, mat = corpus.read_word_vectors(cfg.word_vectors)
        vocab = corpus.build_vocab(train_raw, word_list=words, mode=cfg.vocab_mode)
        if mat.shape[1] != cfg.word_dim:
            raise CliError("config", f"word_dim={cfg.word_dim} but {cfg.word_vectors} has "
                                     f"dimension {mat.shape[1]}")
        rng = SeededRng(cfg.module_seed("reserved_vectors"))
        reserved = rng.normal(len(corpus.RESERVED) * mat.shape[1], 0.0, mat.shape[1] ** -0.5)
        vectors = np.concatenate([reserved.reshape(len(corpus.RESERVED), -1), mat])
    elif cfg.word_list:
        words = Path(cfg.word_list).read_text(encoding="utf-8").split()
        vocab = corpus.build_vocab(train_raw, word_list=words, mode=cfg.vocab_mode)
    else:
        vocab = corpus.build_vocab(train_raw, cfg.min_count, cfg.max_vocab or None,
                                   mode=cfg.vocab_mode)
    return vocab, vectors


def cmd_train(cfg: RunConfig, force: bool = False, resume: str | None = None) -> model.TrainState:
    out = _out(cfg)
    ckpt_path = _path(cfg.checkpoint, out / "checkpoint.bin")
    if not resume:
        _guard(ckpt_path, force)
    languages, train_raw, held_raw = _prepare_corpus(cfg)
    if resume:
        try:
            state = model.load_checkpoint(resume)
        except (OSError, model.CheckpointError) as exc:
            raise CliError("checkpoint", str(exc)) from exc
        if state.languages.codes != languages.codes:
            raise CliError("data", "corpus languages differ from the checkpoint's")
        vocab = state.vocab
    else:
        vocab, vectors = _vocab_and_vectors(cfg, train_raw)
        mcfg = cfg.model_config(len(vocab), len(languages))
        state = model.new_state(mcfg, languages, vocab, vectors)
    tagged = corpus.tag_corpora(train_raw, vocab, languages)
    try:
        model.train(state, tagged, cfg.epochs)
    except model.TrainingError as exc:
        raise CliError("training", str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)
    model.save_checkpoint(ckpt_path, state)
    model.write_loss_csv(out / "loss.csv", state.history)
    held = corpus.tag_corpora(held_raw, vocab, languages)
    held_sents = model.flatten_corpus(held, languages)
    acc = {"pooled": None, "per_language": {}}
    if held_sents:
        res = model.reconstruction_accuracy(state.model, held_sents,
                                            SeededRng(cfg.module_seed("heldout_eval")))
        acc = {"pooled": res["pooled"],
               "per_language": {languages.codes[i]: v for i, v in res["per_language"].items()}}
    acc["step"] = state.step
    acc["epoch"] = state.epoch
    (out / "accuracy.json").write_text(json.dumps(acc, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    log.info("held-out reconstruction accuracy %s", acc["pooled"])
    return state


def cmd_extract(cfg: RunConfig, force: bool = False) -> Path:
    if cfg.side not in model.SIDES:
        raise CliError("usage", f"unknown side {cfg.side!r}; valid values: "
                                f"{', '.join(model.SIDES)}")
    out = _out(cfg)
    ckpt_path = _path(cfg.checkpoint, out / "checkpoint.bin")
    try:
        state = model.load_checkpoint(ckpt_path)
    except (OSError, model.CheckpointError) as exc:
        raise CliError("checkpoint", str(exc)) from exc
    path = out / f"lang_emb.{cfg.side}.txt"
    _guard(path, force)
    model.write_language_embeddings(path, state.languages.codes,
                                    model.extract_language_embeddings(state, cfg.side))
    return path


def _embeddings_path(cfg: RunConfig) -> Path:
    return _path(cfg.embeddings, _out(cfg) / f"lang_emb.{cfg.side}.txt")


def _load_genera(cfg: RunConfig):
    path = _path(cfg.genera, _out(cfg) / "genera.txt")
    if cfg.genera and not path.is_file():
        raise CliError("io", f"genus file not found: {path}")
    return evaluation.load_genera(path) if path.is_file() else None


def cmd_eval(cfg: RunConfig, force: bool = False) -> dict:
    out = _out(cfg) / "eval"
    _guard(out / "report.json", force)
    emb_path = _embeddings_path(cfg)
    feat_path = _path(cfg.features, _out(cfg) / "features.csv")
    try:
        codes, emb = read_language_embeddings(emb_path)
        table = evaluation.load_feature_table(feat_path)
    except OSError as exc:
        raise CliError("io", str(exc)) from exc
    genera = _load_genera(cfg)
    absent = [c for c in table.languages if c not in codes]
    if absent:
        raise CliError("data", f"feature-table languages missing from embeddings: "
                               f"{', '.join(absent)}")
    extra = [c for c in codes if c not in table.languages]
    if extra:
        log.warning("excluding languages without features: %s", ", ".join(extra))
    keep = [i for i, c in enumerate(codes) if c in table.languages]
    codes = [codes[i] for i in keep]
    emb = emb[keep]
    table = evaluation.filter_features(table.subset_languages(codes), cfg.min_coverage)
    rng = SeededRng(cfg.module_seed("eval"))
    report = evaluation.loo_predict(codes, emb, table, cfg.repeats, rng.child("loo"))
    cluster = None
    if genera is not None:
        cluster = evaluation.cluster_against_genera(codes, emb, genera, cfg.k,
                                                    rng.child("cluster"), cfg.cluster_restarts)
    else:
        cluster = evaluation.spectral_cluster(emb, cfg.k, rng.child("cluster"),
                                              cfg.cluster_restarts)
    rows, var = evaluation.pca_export(codes, emb, genera)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_pca_csv(out / "pca.csv", rows)
    with open(out / "clusters.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("lang,cluster" + (",genus" if genera else "") + "\n")
        for c, lab in zip(codes, cluster.labels):
            fh.write(f"{c},{int(lab)}" + (f",{genera.get(c, '')}" if genera else "") + "\n")
    evaluation.write_report(out, report, cluster, codes, extra={
        "embeddings": emb_path.name,
        "pca_explained_variance": [float(v) for v in var],
        "excluded_languages": extra,
    })
    return json.loads((out / "report.json").read_text(encoding="utf-8"))


def cmd_pca(cfg: RunConfig, force: bool = False) -> Path:
    path = _out(cfg) / f"pca.{cfg.side}.csv"
    _guard(path, force)
    codes, emb = read_language_embeddings(_embeddings_path(cfg))
    rows, _ = evaluation.pca_export(codes, emb, _load_genera(cfg))
    path.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_pca_csv(path, rows)
    return path


def format_report(doc: dict) -> str:
    cats = evaluation.CATEGORIES
    lines = ["| | " + " | ".join(cats) + " | Rand |", "|---" * (len(cats) + 2) + "|"]

    def cell(cat, key, star=False):
        block = doc["categories"][cat]
        v = block[key]
        if v is None:
            return "-"
        return f"{v:.2f}" + ("*" if star and block["significant"] else "")

    ari = doc.get("clustering", {}).get("ari")
    lines.append("| n features | " + " | ".join(str(doc["categories"][c]["n_features"]) for c in cats)
                 + " | - |")
    lines.append("| Random | " + " | ".join(cell(c, "random") for c in cats) + " | - |")
    lines.append("| Majority | " + " | ".join(cell(c, "majority") for c in cats) + " | - |")
    lines.append("| Embeddings | " + " | ".join(cell(c, "accuracy", True) for c in cats)
                 + f" | {'-' if ari is None else f'{ari:.2f}'} |")
    lines.append("")
    lines.append(f"* p < 0.01 over Majority (one-sided Wilcoxon, {doc['repeats']} repeats)")
    return "\n".join(lines) + "\n"


def cmd_report(cfg: RunConfig, force: bool = False) -> str:
    path = _out(cfg) / "eval" / "report.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError("io", f"cannot read {path}: {exc}") from exc
    text = format_report(doc)
    md = path.parent / "report.md"
    _guard(md, force)
    md.write_text(text, encoding="utf-8")
    print(text, end="")
    return text


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "extract": cmd_extract,
    "eval": cmd_eval, "pca": cmd_pca, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="langvec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            p.add_argument("--epochs", type=int)
            p.add_argument("--resume", metavar="CHECKPOINT")
            p.add_argument("--corpus")
        if name in ("extract", "eval", "pca"):
            p.add_argument("--side")
        if name in ("extract", "train"):
            p.add_argument("--checkpoint")
        if name in ("eval", "pca"):
            p.add_argument("--embeddings")
            p.add_argument("--genera")
        if name == "eval":
            p.add_argument("--k", type=int)
            p.add_argument("--repeats", type=int)
            p.add_argument("--features")
    return parser


def _overrides(args) -> dict:
    from .config import parse_value, _TYPES
    over = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        over[key] = parse_value(key, raw)
    for key in ("seed", "out", "epochs", "side", "k", "repeats", "features", "genera",
                "embeddings", "checkpoint", "corpus"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    return over


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "train" and args.verbose is False:
        logging.getLogger("langvec.model").setLevel(logging.INFO)
    try:
        cfg = load_config(args.config, _overrides(args))
        fn = COMMANDS[args.command]
        if args.command == "train":
            fn(cfg, force=args.force, resume=args.resume)
        else:
            fn(cfg, force=args.force)
    except CliError as exc:
        return _fail(exc.category, str(exc))
    except ConfigError as exc:
        return _fail("config", str(exc))
    except (corpus.CorpusError, synthlang.SynthError, evaluation.EvalError) as exc:
        return _fail("data", str(exc))
    except model.CheckpointError as exc:
        return _fail("checkpoint", str(exc))
    except model.TrainingError as exc:
        return _fail("training", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    return 0


def _fail(category: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"langvec: error[{category}]: {message}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
