"""Latent-geometry diagnostics for sentence embeddings.

Three views of how an autoencoder's latent space organizes paraphrase groups:
per-dimension Pearson correlation against text length, nearest-neighbour
recall within paraphrase groups, and the ratio of mean intra-cluster distance
to mean inter-centroid distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .oracle.protocol import dumps, loads


@dataclass(frozen=True)
class LabeledEmbedding:
    """One sentence's embedding with its paraphrase-group label and length."""

    vector: np.ndarray
    label: str
    length: int

    def __post_init__(self):
        vec = np.array(self.vector, dtype=float)
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise ValueError("vector must be a finite 1-D array")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")


def load_embeddings(path) -> list[LabeledEmbedding]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = loads(line)
        rows.append(LabeledEmbedding(vector=np.asarray(obj["vector"], dtype=float),
                                     label=str(obj["label"]), length=int(obj["length"])))
    return rows


def save_embeddings(rows, path) -> None:
    lines = [dumps({"vector": [float(v) for v in r.vector], "label": r.label,
                    "length": int(r.length)}) for r in rows]
    Path(path).write_text("".join(line + "\n" for line in lines))


def _matrix(embeddings) -> np.ndarray:
    if not embeddings:
        raise ValueError("no embeddings given")
    mat = np.stack([e.vector for e in embeddings])
    if mat.ndim != 2:
        raise ValueError("embeddings must share one dimension")
    return mat


def unit_normalize(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero-norm embedding")
    return mat / norms


def whitespace_token_count(text: str) -> int:
    return len(text.split())


def pearson_dim_length(embeddings: list[LabeledEmbedding], dim: int,
                       normalize: bool = True) -> float:
    """Pearson r between coordinate ``dim`` and the per-sentence lengths.

    Embeddings are unit-normalized first to remove scale effects unless
    ``normalize`` is disabled (useful for synthetic fixtures)."""
    mat = _matrix(embeddings)
    if len(embeddings) < 2:
        raise ValueError("need at least 2 samples")
    if not 0 <= dim < mat.shape[1]:
        raise ValueError(f"dim {dim} out of range for {mat.shape[1]}-d embeddings")
    if normalize:
        mat = unit_normalize(mat)
    xs = mat[:, dim]
    ys = np.array([e.length for e in embeddings], dtype=float)
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        raise ValueError("zero variance in coordinate or length series")
    return float((xc @ yc) / denom)


def pearson_all_dims(embeddings: list[LabeledEmbedding],
                     normalize: bool = True) -> np.ndarray:
    mat = _matrix(embeddings)
    if normalize:
        mat = unit_normalize(mat)
    ys = np.array([e.length for e in embeddings], dtype=float)
    yc = ys - ys.mean()
    y_ss = yc @ yc
    xc = mat - mat.mean(axis=0)
    x_ss = np.sum(xc * xc, axis=0)
    denom = np.sqrt(x_ss * y_ss)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (xc.T @ yc) / denom
    return np.where(denom == 0.0, np.nan, r)


def _fsum_norm(vec) -> float:
    return math.sqrt(math.fsum(float(v) * float(v) for v in vec))


def _fsum_dist(a, b) -> float:
    return math.sqrt(math.fsum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def nnr(embeddings: list[LabeledEmbedding], normalize: bool = True) -> float:
    """Mean fraction of same-label points retrieved among each point's
    |S_i| nearest neighbours (Euclidean, after unit normalization).

    The query point itself is excluded from its group; points whose label has
    no other member are skipped. Distance ties break by index order. All
    reductions use exact summation (fsum / rational mean), so the result is
    independent of evaluation order and bit-reproducible."""
    if len(embeddings) < 2:
        raise ValueError("need at least 2 points")
    mat = _matrix(embeddings)
    if normalize:
        norms = [_fsum_norm(row) for row in mat]
        if any(n == 0.0 for n in norms):
            raise ValueError("cannot normalize a zero-norm embedding")
        mat = np.array([row / n for row, n in zip(mat, norms)])
    labels = [e.label for e in embeddings]
    n = len(embeddings)
    recall_sum = Fraction(0)
    eligible = 0
    for i in range(n):
        same = {j for j in range(n) if j != i and labels[j] == labels[i]}
        if not same:
            continue
        ranked = sorted((_fsum_dist(mat[i], mat[j]), j)
                        for j in range(n) if j != i)
        retrieved = {j for _, j in ranked[:len(same)]}
        recall_sum += Fraction(len(retrieved & same), len(same))
        eligible += 1
    if eligible == 0:
        raise ValueError("no label has at least 2 members")
    return float(recall_sum / eligible)


def csr(embeddings: list[LabeledEmbedding], normalize: bool = False) -> float:
    """Mean intra-cluster distance over mean inter-centroid distance.

    Computed on raw embeddings by default (the normalization used for recall
    is not applied here); lower is tighter/better separated. Uses exact
    summation throughout for order-independent, bit-reproducible output."""
    mat = _matrix(embeddings)
    if normalize:
        mat = unit_normalize(mat)
    labels = [e.label for e in embeddings]
    unique = sorted(set(labels))
    if len(unique) < 2:
        raise ValueError("need at least 2 labels")
    centroids = {}
    for label in unique:
        rows = [mat[i] for i, l in enumerate(labels) if l == label]
        centroids[label] = np.array([math.fsum(col) / len(rows)
                                     for col in zip(*rows)])
    intra = math.fsum(_fsum_dist(mat[i], centroids[labels[i]])
                      for i in range(len(labels))) / len(labels)
    pairs = [(a, b) for i, a in enumerate(unique) for b in unique[i + 1:]]
    inter = math.fsum(_fsum_dist(centroids[a], centroids[b])
                      for a, b in pairs) / len(pairs)
    if inter == 0.0:
        raise ValueError("all centroids coincide; ratio undefined")
    return intra / inter


def geometry_report(embeddings: list[LabeledEmbedding], top_k: int = 10) -> dict:
    """Aggregate report: recall, separation ratio, and per-dimension length
    correlations with the top-|r| dimensions called out."""
    per_dim = pearson_all_dims(embeddings)
    finite = np.nan_to_num(per_dim, nan=0.0)
    top = np.argsort(-np.abs(finite), kind="stable")[:top_k]
    try:
        csr_value = csr(embeddings)
    except ValueError:
        csr_value = None
    return {
        "nnr": nnr(embeddings),
        "csr": csr_value,
        "per_dim_r": [None if np.isnan(r) else float(r) for r in per_dim],
        "top_dims": [{"dim": int(d), "r": float(per_dim[d])} for d in top],
        "points": len(embeddings),
        "labels": len(set(e.label for e in embeddings)),
    }
