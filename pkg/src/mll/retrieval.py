"""Recall@k for embedding retrieval, with Euclidean or cosine ranking."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .numeric import as_labels, as_matrix, row_normalize

log = logging.getLogger(__name__)

__all__ = ["RecallResult", "distance_matrix", "recall_at_k", "query_gallery_recall"]

DISTANCES = ("euclidean", "cosine")


@dataclass
class RecallResult:
    ks: list
    recall: dict = field(default_factory=dict)
    n_queries: int = 0
    n_excluded: int = 0

    def as_dict(self):
        return {
            "ks": list(self.ks),
            "recall": {k: list(v) for k, v in self.recall.items()},
            "n_queries": self.n_queries,
            "n_excluded": self.n_excluded,
        }

    def rows(self):
        """Flat ``(distance, k, recall)`` rows for CSV output."""
        return [(dist, k, r) for dist, vals in self.recall.items()
                for k, r in zip(self.ks, vals)]


def distance_matrix(Q, G, distance):
    """Ranking distances between query rows and gallery rows.

    Euclidean uses squared distances (same ranking); cosine uses
    ``1 - cos``.
    """
    if distance == "euclidean":
        diff = Q[:, None, :] - G[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    if distance == "cosine":
        return 1.0 - row_normalize(Q) @ row_normalize(G).T
    raise ValueError(f"unknown distance {distance!r}; expected one of {DISTANCES}")


def _hits(dist, q_labels, g_labels, ks):
    # stable sort: ties go to the smaller gallery index
    order = np.argsort(dist, axis=1, kind="stable")
    match = g_labels[order] == q_labels[:, None]
    first = np.where(match.any(axis=1), match.argmax(axis=1), np.iinfo(np.int64).max)
    return [float(np.mean(first < k)) for k in ks]


def _as_distances(distance):
    return [distance] if isinstance(distance, str) else list(distance)


def recall_at_k(embeddings, labels, ks=(1, 2, 4, 8), distance="euclidean"):
    """Leave-one-out recall@k within a single set.

    Each sample queries all the others. Queries without any same-class
    partner are dropped (and counted in ``n_excluded``).
    """
    Z = as_matrix(embeddings)
    y, _ = as_labels(labels)
    ks = sorted(int(k) for k in ks)
    n = Z.shape[0]
    if ks[0] < 1 or ks[-1] >= n:
        raise ValueError(f"need 1 <= k < n = {n}")
    counts = np.bincount(y)
    valid = counts[y] >= 2
    if not valid.all():
        log.info("recall_at_k: %d queries without a positive excluded",
                 np.count_nonzero(~valid))
    if not valid.any():
        raise ValueError("no query has a same-class partner")
    result = RecallResult(ks, n_queries=int(valid.sum()),
                          n_excluded=int((~valid).sum()))
    for dist in _as_distances(distance):
        D = distance_matrix(Z, Z, dist)
        np.fill_diagonal(D, np.inf)
        # inf on the diagonal sorts self last, out of reach of any k < n
        result.recall[dist] = _hits(D[valid], y[valid], y, ks)
    return result


def query_gallery_recall(queries, q_labels, gallery, g_labels, ks=(1, 2, 4, 8),
                         distance="euclidean"):
    """Recall@k of a query set against a disjoint gallery (no self-exclusion)."""
    Q, G = as_matrix(queries), as_matrix(gallery)
    qy, _ = as_labels(q_labels)
    gy, _ = as_labels(g_labels)
    ks = sorted(int(k) for k in ks)
    if ks[0] < 1 or ks[-1] > G.shape[0]:
        raise ValueError(f"need 1 <= k <= gallery size {G.shape[0]}")
    valid = np.isin(qy, gy)
    if not valid.all():
        log.info("query_gallery_recall: %d queries with labels absent from the gallery",
                 np.count_nonzero(~valid))
    if not valid.any():
        raise ValueError("no query label occurs in the gallery")
    result = RecallResult(ks, n_queries=int(valid.sum()),
                          n_excluded=int((~valid).sum()))
    for dist in _as_distances(distance):
        D = distance_matrix(Q[valid], G, dist)
        result.recall[dist] = _hits(D, qy[valid], gy, ks)
    return result
