"""Scenario selection by clustering explanation texts.

Messages are lowercased, tokenized on non-alphanumeric boundaries, TF-IDF
weighted (raw count times smoothed idf ``ln((1+N)/(1+df)) + 1``, then L2
normalized) and clustered agglomeratively under average linkage with cosine
distance. Representatives are cluster medoids: the member minimizing mean
cosine distance to its own cluster.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class TextVector:
    """Sparse TF-IDF vector for one clip's explanation text."""

    vid: str
    weights: dict[str, float]

    @property
    def degenerate(self) -> bool:
        """True when the source text produced no tokens (zero vector)."""
        return not self.weights


@dataclass(frozen=True)
class Dendrogram:
    """Full merge history of the agglomeration.

    Each merge records the two merged clusters by their leader vid (the
    smallest vid inside each cluster) and the average-linkage distance at
    which they merged. ``len(merges) == len(leaves) - 1``.
    """

    leaves: tuple[str, ...]
    merges: tuple[tuple[str, str, float], ...]


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def vectorize(messages: Mapping[str, str]) -> list[TextVector]:
    """TF-IDF vectors (L2-normalized) for a vid -> text map.

    Uses smoothed document frequency so terms present in every document keep
    a small positive idf. Empty-token documents yield zero vectors and are
    flagged via ``TextVector.degenerate``.
    """
    if not messages:
        raise ValidationError("cannot vectorize an empty corpus")
    token_lists = {vid: tokenize(text) for vid, text in messages.items()}
    n_docs = len(token_lists)
    df: dict[str, int] = {}
    for tokens in token_lists.values():
        for term in set(tokens):
            df[term] = df.get(term, 0) + 1

    vectors: list[TextVector] = []
    for vid in sorted(token_lists):
        counts: dict[str, int] = {}
        for term in token_lists[vid]:
            counts[term] = counts.get(term, 0) + 1
        weights = {
            term: count * (math.log((1 + n_docs) / (1 + df[term])) + 1.0)
            for term, count in counts.items()
        }
        norm = math.sqrt(sum(w * w for w in weights.values()))
        if norm > 0:
            weights = {term: w / norm for term, w in weights.items()}
        vectors.append(TextVector(vid=vid, weights=weights))
    return vectors


def cosine_distance(a: TextVector, b: TextVector) -> float:
    """1 - cosine similarity; a zero vector is at distance 1 from everything."""
    norm_a = math.sqrt(sum(w * w for w in a.weights.values()))
    norm_b = math.sqrt(sum(w * w for w in b.weights.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 1.0
    if len(a.weights) > len(b.weights):
        a, b = b, a
    dot = sum(w * b.weights.get(term, 0.0) for term, w in a.weights.items())
    cos = dot / (norm_a * norm_b)
    return float(min(1.0, max(0.0, 1.0 - cos)))


def distance_matrix(vectors: Sequence[TextVector]) -> np.ndarray:
    n = len(vectors)
    mat = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = cosine_distance(vectors[i], vectors[j])
            mat[i, j] = mat[j, i] = d
    return mat


def agglomerate(
    vectors: Sequence[TextVector], k: int
) -> tuple[Dendrogram, dict[str, int]]:
    """Average-linkage agglomerative clustering cut at ``k`` clusters.

    The merge loop is deterministic: among minimum-distance pairs, the one
    whose (smaller leader vid, larger leader vid) sorts first wins, so the
    result is independent of input order.

    Returns the full dendrogram and a vid -> cluster-index assignment with
    cluster indices ordered by each cluster's leader vid.
    """
    n = len(vectors)
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} outside [1, {n}]")
    vids = [v.vid for v in vectors]
    if len(set(vids)) != n:
        raise ValidationError("duplicate vids among vectors")

    dist = distance_matrix(vectors)
    # cluster state keyed by positional slot; merged slots become inactive
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    leaders: dict[int, str] = {i: vids[i] for i in range(n)}
    sizes: dict[int, int] = {i: 1 for i in range(n)}
    active = set(range(n))
    # pairwise mean distances between active clusters (Lance-Williams update
    # keeps these exact for average linkage)
    link = dist.copy()

    merges: list[tuple[str, str, float]] = []
    assignment_at_k: dict[str, int] | None = None

    def snapshot() -> dict[str, int]:
        ordered = sorted(active, key=lambda c: leaders[c])
        label = {slot: idx for idx, slot in enumerate(ordered)}
        return {vids[i]: label[slot] for slot in ordered for i in members[slot]}

    if len(active) == k:
        assignment_at_k = snapshot()

    while len(active) > 1:
        best: tuple[float, str, str, int, int] | None = None
        for a in active:
            for b in active:
                if a >= b:
                    continue
                la, lb = sorted((leaders[a], leaders[b]))
                key = (link[a, b], la, lb)
                if best is None or key < (best[0], best[1], best[2]):
                    best = (link[a, b], la, lb, a, b)
        assert best is not None
        d_merge, la, lb, a, b = best
        merges.append((la, lb, float(d_merge)))

        # Lance-Williams average-linkage update
        for c in active:
            if c in (a, b):
                continue
            link[a, c] = link[c, a] = (
                sizes[a] * link[a, c] + sizes[b] * link[b, c]
            ) / (sizes[a] + sizes[b])
        members[a] = members[a] + members[b]
        sizes[a] = sizes[a] + sizes[b]
        leaders[a] = min(leaders[a], leaders[b])
        active.remove(b)

        if len(active) == k:
            assignment_at_k = snapshot()

    assert assignment_at_k is not None
    return Dendrogram(leaves=tuple(sorted(vids)), merges=tuple(merges)), assignment_at_k


def medoids_with_distance(
    assignment: Mapping[str, int], vectors: Sequence[TextVector]
) -> dict[int, tuple[str, float]]:
    """Per cluster: (medoid vid, its mean cosine distance to the cluster)."""
    by_vid = {v.vid: v for v in vectors}
    clusters: dict[int, list[str]] = {}
    for vid, label in assignment.items():
        if vid not in by_vid:
            raise ValidationError(f"assignment references unknown vid {vid!r}")
        clusters.setdefault(label, []).append(vid)

    result: dict[int, tuple[str, float]] = {}
    for label, vids in clusters.items():
        best_vid = None
        best_mean = math.inf
        for cand in sorted(vids):
            mean_d = sum(
                cosine_distance(by_vid[cand], by_vid[other]) for other in vids
            ) / len(vids)
            if mean_d < best_mean - 1e-12:
                best_vid, best_mean = cand, mean_d
        assert best_vid is not None
        result[label] = (best_vid, best_mean)
    return result


def medoids(assignment: Mapping[str, int], vectors: Sequence[TextVector]) -> dict[int, str]:
    """Cluster representatives: member minimizing mean cosine distance to its
    cluster; ties fall to the smallest vid."""
    return {label: vid for label, (vid, _) in medoids_with_distance(assignment, vectors).items()}
