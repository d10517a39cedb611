"""Agglomerative clustering on squared distances and pairwise F1 scoring."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, LabelMismatch
from .geometry import pairwise_sqdist

LINKAGES = ("single", "average", "complete")


@dataclass
class Clustering:
    assignments: np.ndarray  # cluster id per sample, contiguous from 0
    num_clusters: int

    def write_csv(self, path, sample_ids=None):
        ids = np.arange(len(self.assignments)) if sample_ids is None else sample_ids
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "cluster_id"])
            for s, c in zip(np.asarray(ids).tolist(), self.assignments.tolist()):
                w.writerow([s, c])


def canonical_labels(assignments):
    """Relabel so cluster ids appear in order of each cluster's first sample."""
    assignments = np.asarray(assignments)
    _, first, inverse = np.unique(assignments, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse.ravel()]


def agglomerative_cluster(embeddings, cutoff, linkage="average"):
    """Merge the closest pair of clusters until every pair is farther than ``cutoff``.

    Cluster distance is the single/average/complete linkage of squared
    distances between members. Ties go to the lowest ``(slot, slot)`` pair,
    where a merged cluster keeps the lower slot. Naive O(n^3); fine for a
    few thousand points.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput("need at least one embedding")
    if not cutoff >= 0:
        raise ValueError(f"cutoff must be nonnegative, got {cutoff}")
    n = x.shape[0]
    dist = pairwise_sqdist(x)
    dist[np.tril_indices(n)] = np.inf  # only i < j is live
    size = np.ones(n)
    slot = np.arange(n)  # sample -> slot
    for _ in range(n - 1):
        flat = int(np.argmin(dist))
        i, j = divmod(flat, n)
        if not dist[i, j] <= cutoff:
            break
        # row/column views of every other slot's distance to i and to j
        di = np.minimum(dist[i, :], dist[:, i])
        dj = np.minimum(dist[j, :], dist[:, j])
        if linkage == "single":
            merged = np.minimum(di, dj)
        elif linkage == "complete":
            merged = np.maximum(di, dj)
        else:
            merged = (size[i] * di + size[j] * dj) / (size[i] + size[j])
        live = np.isfinite(di) & np.isfinite(dj)
        merged[~live] = np.inf
        dist[i, i + 1:] = merged[i + 1:]
        dist[:i, i] = merged[:i]
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        size[i] += size[j]
        slot[slot == j] = i
    labels = canonical_labels(slot)
    return Clustering(labels, int(labels.max()) + 1)


def pairwise_f1(predicted, truth):
    """Precision, recall and F1 over all unordered sample pairs.

    A pair counts as predicted-positive when both samples share a cluster and
    as truly positive when they share an identity. 0/0 is taken as 1 for
    precision and recall.
    """
    pred = np.asarray(getattr(predicted, "assignments", predicted))
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise LabelMismatch(f"{pred.shape} predictions vs {truth.shape} labels")

    def pairs(counts):
        counts = counts.astype(np.int64)
        return int(np.sum(counts * (counts - 1) // 2))

    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    pi, ti = pi.ravel(), ti.ravel()
    both = pairs(np.bincount(pi * (ti.max() + 1) + ti)) if len(pred) else 0
    same_cluster = pairs(np.bincount(pi)) if len(pred) else 0
    same_identity = pairs(np.bincount(ti)) if len(pred) else 0
    precision = both / same_cluster if same_cluster else 1.0
    recall = both / same_identity if same_identity else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
