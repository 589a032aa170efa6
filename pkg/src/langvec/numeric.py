"""Dense linear algebra and statistics primitives.

Everything here works on float64 numpy arrays. Randomness goes through
:class:`SeededRng`, a thin wrapper over numpy's PCG64 bit generator (the
PCG-XSL-RR 128/64 algorithm), whose output stream is fixed by the seed on
every platform numpy supports.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np


class ShapeError(ValueError):
    pass


def derive_seed(seed: int, *tags) -> int:
    """Derive a 64-bit child seed from ``seed`` and a sequence of tags."""
    text = ":".join([str(int(seed))] + [str(t) for t in tags])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class SeededRng:
    """Deterministic random source (PCG64) with a Box-Muller normal sampler."""

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *tags) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, *tags))

    def uniform(self, n: int | tuple = None) -> np.ndarray | float:
        """Uniform draws on [0, 1)."""
        return self._gen.random(n)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, items: list) -> list:
        """Return a shuffled copy of ``items``."""
        return [items[i] for i in self.permutation(len(items))]

    def choice(self, n: int, p: np.ndarray | None = None) -> int:
        if p is None:
            return int(self._gen.integers(0, n))
        cdf = np.cumsum(p)
        u = self._gen.random() * cdf[-1]
        return int(min(np.searchsorted(cdf, u, side="right"), n - 1))

    def bernoulli(self, p: float) -> bool:
        return bool(self._gen.random() < p)

    def normal(self, n: int, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
        return normal_sample(self, n, mean, stddev)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def normal_sample(rng: SeededRng, n: int, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
    """Draw ``n`` normal variates with the Box-Muller transform."""
    if stddev <= 0:
        raise ValueError(f"stddev must be positive, got {stddev}")
    n = int(n)
    if n == 0:
        return np.zeros(0)
    m = (n + 1) // 2
    u1 = 1.0 - rng.uniform(m)  # (0, 1], keeps log finite
    u2 = rng.uniform(m)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return mean + stddev * z[:n]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, stabilised by max subtraction."""
    m = np.asarray(m, dtype=np.float64)
    z = m - m.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def symmetric_eig(m: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted in
    descending order and eigenvectors stored as columns.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"symmetric_eig needs a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-9, rtol=0):
        raise ValueError("symmetric_eig needs a symmetric matrix")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def pca(points: np.ndarray, k: int):
    """Project centered ``points`` onto their top-``k`` principal directions.

    Returns ``(coordinates, explained_variance)``; variances use the n-1
    denominator. Degenerate input (all rows equal) yields zeros.
    """
    x = np.asarray(points, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise ValueError("pca needs at least two points")
    if k > min(n, d) or k < 1:
        raise ValueError(f"k={k} out of range for {n}x{d} input")
    xc = x - x.mean(axis=0)
    if not np.any(xc):
        return np.zeros((n, k)), np.zeros(k)
    cov = xc.T @ xc / (n - 1)
    w, v = symmetric_eig(cov)
    w = np.clip(w[:k], 0.0, None)
    comps = v[:, :k]
    # sign convention: largest-magnitude loading of each component positive
    idx = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    comps = comps * signs
    return xc @ comps, w


def _kmeans_pp_init(x: np.ndarray, k: int, rng: SeededRng) -> np.ndarray:
    # k-means++: first centre uniform, then proportional to squared distance
    n = x.shape[0]
    centers = [x[rng.choice(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.choice(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _assign(x, centers):
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, float(d2[np.arange(len(x)), labels].sum())


def kmeans_single(x: np.ndarray, k: int, rng: SeededRng, max_iter: int = 300):
    """One Lloyd run from k-means++ seeding.

    Returns ``(labels, objective, history)`` where ``history`` is the
    within-cluster sum of squares after each assignment step.
    """
    centers = _kmeans_pp_init(x, k, rng)
    labels, obj = _assign(x, centers)
    history = [obj]
    for _ in range(max_iter):
        new_centers = centers.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
        new_labels, new_obj = _assign(x, new_centers)
        if new_obj > obj:
            # numerical noise only; keep the better state
            break
        centers = new_centers
        history.append(new_obj)
        converged = np.array_equal(new_labels, labels)
        labels, obj = new_labels, new_obj
        if converged:
            break
    return labels, obj, history


def kmeans(points: np.ndarray, k: int, restarts: int, rng: SeededRng) -> np.ndarray:
    """Best-of-``restarts`` k-means (k-means++ seeding, Lloyd iterations)."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")
    if k < 1:
        raise ValueError("k must be positive")
    best_labels, best_obj = None, np.inf
    for r in range(max(1, restarts)):
        labels, obj, _ = kmeans_single(x, k, rng)
        if obj < best_obj:
            best_labels, best_obj = labels, obj
    return canonical_labels(best_labels)


def canonical_labels(labels) -> np.ndarray:
    """Relabel so clusters are numbered by first appearance."""
    mapping: dict = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        out[i] = mapping.setdefault(lab, len(mapping))
    return out
