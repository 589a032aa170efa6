"""Intrinsic evaluation of language embeddings.

* leave-one-out typological feature prediction with Majority and Random
  baselines and a significance test against Majority,
* spectral clustering compared with genus labels by adjusted Rand index,
* 2-D PCA export.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .numeric import SeededRng, kmeans, pca, symmetric_eig
from .synthlang import FEATURES as SYNTH_FEATURES

log = logging.getLogger(__name__)

CATEGORIES = ("Lexicon", "Syntax", "PartMorph", "NonLearnable")

# the synthetic word-order features are all treated as syntax features
SYNTHETIC_CATEGORIES = {f: "Syntax" for f in SYNTH_FEATURES}


class EvalError(ValueError):
    pass


def bundled_categories() -> dict[str, str]:
    """WALS feature id -> category, from the packaged category file."""
    text = resources.files("langvec").joinpath("data/wals_categories.csv").read_text("utf-8")
    return read_categories_text(text)


def read_categories_text(text: str) -> dict[str, str]:
    out = {}
    for row in csv.DictReader(text.splitlines()):
        cat = row["category"].strip()
        if cat not in CATEGORIES:
            raise EvalError(f"unknown category {cat!r} for feature {row['feature_id']}")
        out[row["feature_id"].strip()] = cat
    return out


# ------------------------------------------------------------- feature table

@dataclass
class Feature:
    id: str
    category: str
    domain: tuple


@dataclass
class FeatureTable:
    languages: list
    features: list                            # list[Feature]
    cells: dict = field(default_factory=dict)  # feature id -> list aligned with languages

    def __post_init__(self):
        for feat in self.features:
            if feat.category not in CATEGORIES:
                raise EvalError(f"feature {feat.id}: unknown category {feat.category!r}")
            col = self.cells[feat.id]
            if len(col) != len(self.languages):
                raise EvalError(f"feature {feat.id}: column length mismatch")
            for v in col:
                if v is not None and v not in feat.domain:
                    raise EvalError(f"feature {feat.id}: value {v!r} outside domain")

    def column(self, feature_id: str) -> list:
        return self.cells[feature_id]

    def value(self, language: str, feature_id: str):
        return self.cells[feature_id][self.languages.index(language)]

    def subset_languages(self, keep: Sequence[str]) -> "FeatureTable":
        idx = [self.languages.index(c) for c in keep]
        cells = {f.id: [self.cells[f.id][i] for i in idx] for f in self.features}
        feats = [Feature(f.id, f.category, f.domain) for f in self.features]
        return FeatureTable(list(keep), feats, cells)

    def by_category(self) -> dict[str, list]:
        return {cat: [f for f in self.features if f.category == cat] for cat in CATEGORIES}


def _make_table(languages, rows: dict, categories: dict, strict: bool) -> FeatureTable:
    feats, cells = [], {}
    feature_ids = []
    for lang_rows in rows.values():
        for fid in lang_rows:
            if fid not in feature_ids:
                feature_ids.append(fid)
    for fid in feature_ids:
        cat = categories.get(fid)
        if cat is None:
            if strict:
                raise EvalError(f"no category for feature {fid!r}")
            log.warning("feature %s has no category; skipped", fid)
            continue
        col = [rows[lang].get(fid) for lang in languages]
        domain = tuple(sorted({v for v in col if v is not None}))
        feats.append(Feature(fid, cat, domain))
        cells[fid] = col
    return FeatureTable(list(languages), feats, cells)


def load_feature_table(path, categories: dict | None = None) -> FeatureTable:
    """Load a wide (``language,f1,f2,...``) or long (``language_code,feature_id,value``) CSV.

    Empty cells are missing values. Wide tables default to the synthetic
    category map, long tables to the bundled WALS categories.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EvalError(f"{path}: empty feature table")
        header = [h.strip() for h in header]
        body = [r for r in reader if r]
    if header[:3] == ["language_code", "feature_id", "value"]:
        cats = categories if categories is not None else bundled_categories()
        rows: dict = {}
        for r in body:
            lang, fid, val = r[0].strip(), r[1].strip(), r[2].strip()
            if val:
                rows.setdefault(lang, {})[fid] = val
        return _make_table(list(rows), rows, cats, strict=False)
    if header[0] != "language":
        raise EvalError(f"{path}: unrecognised feature table header {header}")
    cats = dict(SYNTHETIC_CATEGORIES)
    if categories:
        cats.update(categories)
    rows = {}
    order = []
    for r in body:
        lang = r[0].strip()
        order.append(lang)
        rows[lang] = {h: (v.strip() or None) for h, v in zip(header[1:], r[1:])}
        for h in header[1:]:
            rows[lang].setdefault(h, None)
    table = _make_table(order, rows, cats, strict=True)
    return table


def load_genera(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 2:
                out[parts[0]] = parts[1]
    return out


def filter_features(table: FeatureTable, min_coverage: float = 0.5) -> FeatureTable:
    """Keep features with strictly more than ``min_coverage * n_languages`` values."""
    if not 0 < min_coverage <= 1:
        raise EvalError("min_coverage must lie in (0, 1]")
    n = len(table.languages)
    keep = [f for f in table.features
            if sum(v is not None for v in table.cells[f.id]) > min_coverage * n]
    if min_coverage == 1.0:
        keep = [f for f in table.features if all(v is not None for v in table.cells[f.id])]
    return FeatureTable(list(table.languages), keep, {f.id: table.cells[f.id] for f in keep})


# -------------------------------------------------------------- baselines

def _mode(values: Sequence[str]) -> str:
    counts: dict = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def majority_feature_accuracy(column: Sequence) -> float | None:
    present = [v for v in column if v is not None]
    hits, folds = 0, 0
    for i, v in enumerate(present):
        rest = present[:i] + present[i + 1:]
        if not rest:
            continue
        folds += 1
        hits += _mode(rest) == v
    return hits / folds if folds else None


def _category_means(per_feature: dict[str, float | None], table: FeatureTable) -> dict:
    out = {}
    for cat, feats in table.by_category().items():
        vals = [per_feature[f.id] for f in feats if per_feature.get(f.id) is not None]
        out[cat] = float(np.mean(vals)) if vals else None
    return out


def majority_baseline(table: FeatureTable) -> dict:
    """Leave-one-out modal-value prediction; per-category mean accuracy."""
    if not table.features:
        raise EvalError("majority_baseline needs a nonempty table")
    per = {f.id: majority_feature_accuracy(table.cells[f.id]) for f in table.features}
    return _category_means(per, table)


def random_baseline(table: FeatureTable, repeats: int, rng: SeededRng) -> dict:
    """Uniform guesses over each feature's observed values, averaged over repeats."""
    if not table.features:
        raise EvalError("random_baseline needs a nonempty table")
    per = {}
    for f in table.features:
        present = [v for v in table.cells[f.id] if v is not None]
        truth = np.array([f.domain.index(v) for v in present])
        guesses = rng.integers(0, len(f.domain), size=(repeats, len(present)))
        per[f.id] = float(np.mean(guesses == truth[None, :]))
    return _category_means(per, table)


# ------------------------------------------------------------- classifier

@dataclass
class ClassifierConfig:
    l2: float = 1e-3
    lr: float = 0.1
    max_steps: int = 2000
    tol: float = 1e-6
    init_std: float = 0.01


def fit_softmax_regression(x: np.ndarray, y: np.ndarray, n_classes: int, w0: np.ndarray,
                           cfg: ClassifierConfig) -> np.ndarray:
    """Batched full-batch gradient descent for L2-penalised softmax regression.

    ``x`` is (P, n, d) with a bias column already appended, ``y`` (P, n)
    class ids, ``w0`` (P, d, C). The bias row (last) is not penalised.
    Stops when every problem's gradient norm is below ``cfg.tol``.
    """
    w = w0.copy()
    n = x.shape[1]
    onehot = np.zeros(y.shape + (n_classes,))
    np.put_along_axis(onehot, y[..., None], 1.0, axis=-1)
    penalty = np.ones(w.shape[1])
    penalty[-1] = 0.0
    xt = x.transpose(0, 2, 1)
    for _ in range(cfg.max_steps):
        logits = x @ w
        logits -= logits.max(axis=-1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=-1, keepdims=True)
        grad = xt @ (p - onehot) / n + cfg.l2 * penalty[None, :, None] * w
        if np.sqrt(np.max(np.sum(grad * grad, axis=(1, 2)))) < cfg.tol:
            break
        w -= cfg.lr * grad
    return w


def _normalise_fold(train: np.ndarray, test: np.ndarray):
    # centre on the training rows, then scale so the mean training norm is 1
    mu = train.mean(axis=-2, keepdims=True)
    tr, te = train - mu, test - mu
    scale = np.linalg.norm(tr, axis=-1).mean(axis=-1)[..., None, None]
    scale = np.where(scale > 0, scale, 1.0)
    return tr / scale, te / scale


@dataclass
class EvalReport:
    repeats: int
    n_features: dict
    accuracy: dict
    majority: dict
    random: dict
    p_value: dict
    significant: dict
    skipped_folds: int
    per_feature: dict
    repeat_accuracy: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "repeats": self.repeats,
            "categories": {
                cat: {
                    "n_features": self.n_features[cat],
                    "accuracy": self.accuracy[cat],
                    "majority": self.majority[cat],
                    "random": self.random[cat],
                    "p_value": self.p_value[cat],
                    "significant": self.significant[cat],
                    "absent": self.n_features[cat] == 0,
                }
                for cat in CATEGORIES
            },
            "skipped_folds": self.skipped_folds,
            "per_feature": self.per_feature,
        }


def significance_vs_majority(repeat_acc: Sequence[float], majority: float) -> float:
    """One-sided Wilcoxon signed-rank p-value for repeat accuracy > Majority."""
    diffs = np.asarray(repeat_acc, dtype=np.float64) - majority
    if not np.any(diffs != 0):
        return 1.0
    return float(stats.wilcoxon(diffs, alternative="greater").pvalue)


def loo_predict(codes: Sequence[str], embeddings: np.ndarray, table: FeatureTable,
                repeats: int = 100, rng: SeededRng | None = None,
                cfg: ClassifierConfig | None = None, alpha: float = 0.01,
                random_repeats: int | None = None) -> EvalReport:
    """Leave-one-out feature prediction from language embeddings.

    For every feature and held-out language with a known value, a softmax
    regression is trained on the other languages with known values. Each of
    the ``repeats`` passes permutes the training-row order and redraws the
    classifier initialisation.
    """
    cfg = cfg or ClassifierConfig()
    rng = rng or SeededRng(0)
    codes = list(codes)
    missing = [c for c in table.languages if c not in codes]
    if missing:
        raise EvalError(f"no embedding for languages: {', '.join(missing)}")
    emb = np.asarray(embeddings, dtype=np.float64)[[codes.index(c) for c in table.languages]]

    per_feature_repeat: dict[str, np.ndarray] = {}
    per_feature: dict = {}
    skipped = 0
    for f in table.features:
        col = table.cells[f.id]
        rows = [i for i, v in enumerate(col) if v is not None]
        labels = np.array([f.domain.index(col[i]) for i in rows])
        n = len(rows)
        if n - 1 < 2:
            skipped += n
            continue
        frng = rng.child("feature", f.id)
        folds = []
        for r in range(repeats):
            rr = frng.child("repeat", r)
            for k in range(n):
                train = [j for j in range(n) if j != k]
                folds.append((k, [train[p] for p in rr.permutation(n - 1)]))
        train_idx = np.array([t for _, t in folds])
        test_idx = np.array([k for k, _ in folds])
        x_all = emb[rows]
        xtr, xte = _normalise_fold(x_all[train_idx], x_all[test_idx][:, None, :])
        ones_tr = np.ones(xtr.shape[:2] + (1,))
        xtr = np.concatenate([xtr, ones_tr], axis=-1)
        xte = np.concatenate([xte, np.ones((len(folds), 1, 1))], axis=-1)
        C = len(f.domain)
        w0 = np.stack([frng.child("init", p).normal(xtr.shape[2] * C, 0.0, cfg.init_std)
                       for p in range(len(folds))]).reshape(len(folds), xtr.shape[2], C)
        w = fit_softmax_regression(xtr, labels[train_idx], C, w0, cfg)
        pred = np.argmax((xte @ w)[:, 0, :], axis=-1)
        correct = (pred == labels[test_idx]).reshape(repeats, n)
        per_feature_repeat[f.id] = correct.mean(axis=1)
        per_feature[f.id] = {
            "category": f.category,
            "accuracy": float(correct.mean()),
            "majority": majority_feature_accuracy(col),
            "folds": {table.languages[rows[k]]: float(correct[:, k].mean()) for k in range(n)},
        }

    majority = majority_baseline(table)
    rand = random_baseline(table, random_repeats or repeats, rng.child("random"))
    accuracy, p_value, significant, n_features, repeat_acc = {}, {}, {}, {}, {}
    for cat, feats in table.by_category().items():
        ids = [f.id for f in feats if f.id in per_feature_repeat]
        n_features[cat] = len(ids)
        if not ids:
            accuracy[cat] = p_value[cat] = significant[cat] = None
            continue
        per_rep = np.mean([per_feature_repeat[i] for i in ids], axis=0)
        repeat_acc[cat] = per_rep
        accuracy[cat] = float(per_rep.mean())
        p_value[cat] = significance_vs_majority(per_rep, majority[cat])
        significant[cat] = bool(p_value[cat] < alpha)
    return EvalReport(repeats, n_features, accuracy, majority, rand, p_value, significant,
                      skipped, per_feature, repeat_acc)


# ------------------------------------------------------------- clustering

def adjusted_rand_index(a: Sequence, b: Sequence) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise EvalError(f"label vectors differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise EvalError("adjusted_rand_index needs at least two items")
    ua = {v: i for i, v in enumerate(dict.fromkeys(a))}
    ub = {v: i for i, v in enumerate(dict.fromkeys(b))}
    table = np.zeros((len(ua), len(ub)), dtype=np.int64)
    for x, y in zip(a, b):
        table[ua[x], ub[y]] += 1
    sum_ij = sum(comb(int(v), 2) for v in table.ravel())
    sum_a = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sum_b = sum(comb(int(v), 2) for v in table.sum(axis=0))
    expected = sum_a * sum_b / comb(n, 2)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


@dataclass
class ClusterResult:
    labels: np.ndarray
    k: int
    ari: float | None = None


def spectral_cluster(embeddings: np.ndarray, k: int, rng: SeededRng,
                     restarts: int = 50) -> ClusterResult:
    """Normalised spectral clustering with a median-bandwidth Gaussian kernel."""
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if not 2 <= k <= n:
        raise EvalError(f"k={k} must satisfy 2 <= k <= {n}")
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    d2 = np.maximum(d2, 0.0)
    iu = np.triu_indices(n, 1)
    sigma = float(np.median(np.sqrt(d2[iu])))
    if sigma == 0.0:
        raise EvalError("degenerate affinity: all embeddings identical")
    affinity = np.exp(-d2 / (2.0 * sigma * sigma))
    deg = affinity.sum(axis=1)
    dinv = 1.0 / np.sqrt(deg)
    lap = np.eye(n) - dinv[:, None] * affinity * dinv[None, :]
    lap = 0.5 * (lap + lap.T)
    _, vecs = symmetric_eig(lap)
    u = vecs[:, ::-1][:, :k]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    u = u / np.where(norms > 0, norms, 1.0)
    return ClusterResult(kmeans(u, k, restarts, rng), k)


def cluster_against_genera(codes: Sequence[str], embeddings: np.ndarray, genera: dict,
                           k: int, rng: SeededRng, restarts: int = 50) -> ClusterResult:
    keep = [i for i, c in enumerate(codes) if c in genera]
    result = spectral_cluster(np.asarray(embeddings)[keep], k, rng, restarts)
    result.ari = adjusted_rand_index(result.labels, [genera[codes[i]] for i in keep])
    return result


def pca_export(codes: Sequence[str], embeddings: np.ndarray, genera: dict | None = None):
    """2-D PCA coordinates. Returns ``(rows, explained_variance)``."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.shape[0] < 3:
        raise EvalError("pca_export needs at least three languages")
    coords, var = pca(x, min(2, x.shape[1]))
    if coords.shape[1] < 2:
        coords = np.concatenate([coords, np.zeros((len(coords), 1))], axis=1)
        var = np.append(var, 0.0)
    rows = []
    for code, (px, py) in zip(codes, coords):
        row = {"lang": code, "x": float(px), "y": float(py)}
        if genera is not None:
            row["genus"] = genera.get(code, "")
        rows.append(row)
    return rows, var


def write_pca_csv(path, rows) -> None:
    cols = ["lang", "x", "y"] + (["genus"] if rows and "genus" in rows[0] else [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])


def write_report(directory, report: EvalReport, cluster: ClusterResult | None,
                 codes: Sequence[str] | None = None, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``report.json`` and the flat ``summary.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    if cluster is not None:
        doc["clustering"] = {
            "k": cluster.k,
            "ari": cluster.ari,
            "labels": {c: int(l) for c, l in zip(codes, cluster.labels)} if codes else
            [int(l) for l in cluster.labels],
        }
    if extra:
        doc.update(extra)
    jpath = directory / "report.json"
    jpath.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cpath = directory / "summary.csv"
    with open(cpath, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "n_features", "accuracy", "majority", "random", "p_value",
                    "significant"])
        for cat in CATEGORIES:
            w.writerow([cat, report.n_features[cat]] + [
                "" if v is None else v for v in (report.accuracy[cat], report.majority[cat],
                                                 report.random[cat], report.p_value[cat],
                                                 report.significant[cat])])
    return jpath, cpath
