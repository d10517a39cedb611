"""Verification metrics: VAL/FAR sweeps, k-fold threshold selection, int8 codes.

A pair is accepted as "same" when its squared distance is ``<= d``.
Distances can be given either as a matrix indexed by the pair members or as
a mapping from ``(i, j)`` tuples to distances.
"""

import csv
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BadPartition, CorruptFile, EmptyPairSet, EmptyReport, MissingDistance
from .geometry import l2_normalize

QUANT_MAGIC = b"TQ08"
QUANT_SCALE = 127


def default_grid(step=0.001, upper=4.0):
    n = int(round(upper / step))
    return np.round(np.arange(n + 1) * step, 6)


@dataclass
class PairSet:
    same: np.ndarray  # (S, 2) sample indices with equal identity
    diff: np.ndarray  # (D, 2) sample indices with different identity

    def __post_init__(self):
        self.same = np.asarray(self.same, dtype=np.int64).reshape(-1, 2)
        self.diff = np.asarray(self.diff, dtype=np.int64).reshape(-1, 2)
        for name, p in (("same", self.same), ("diff", self.diff)):
            if np.any(p[:, 0] == p[:, 1]):
                raise ValueError(f"{name} pairs contain a self-pair")
        if len(self.same) and len(self.diff):
            n = int(max(self.same.max(), self.diff.max())) + 1
            key_s = self.same.min(1) * n + self.same.max(1)
            key_d = self.diff.min(1) * n + self.diff.max(1)
            if np.isin(key_d, key_s).any():
                raise ValueError("a pair is listed as both same and diff")

    def members(self):
        return np.unique(np.concatenate([self.same.ravel(), self.diff.ravel()]))


def all_pairs(labels, rows=None):
    """Every unordered pair among ``rows`` (default: all samples), split by label."""
    labels = np.asarray(labels)
    rows = np.arange(len(labels)) if rows is None else np.asarray(rows)
    i, j = np.triu_indices(len(rows), 1)
    i, j = rows[i], rows[j]
    same = labels[i] == labels[j]
    return PairSet(np.stack([i[same], j[same]], 1), np.stack([i[~same], j[~same]], 1))


def balanced_pairs(labels, rng, rows=None, max_per_class=None):
    """All same pairs (or ``max_per_class`` of them) and as many random diff pairs."""
    full = all_pairs(labels, rows)
    n = min(len(full.same), len(full.diff))
    if max_per_class is not None:
        n = min(n, max_per_class)
    s = np.sort(rng.choice(len(full.same), size=n, replace=False))
    d = np.sort(rng.choice(len(full.diff), size=n, replace=False))
    return PairSet(full.same[s], full.diff[d])


def pair_distances(dists, pairs):
    """Return ``(same_dists, diff_dists)`` as float arrays."""
    out = []
    for p in (pairs.same, pairs.diff):
        if isinstance(dists, Mapping):
            vals = []
            for i, j in p.tolist():
                if (i, j) in dists:
                    vals.append(dists[(i, j)])
                elif (j, i) in dists:
                    vals.append(dists[(j, i)])
                else:
                    raise MissingDistance(f"no distance for pair ({i}, {j})")
            out.append(np.asarray(vals, dtype=np.float64))
        else:
            m = np.asarray(dists, dtype=np.float64)
            if p.size and (p.min() < 0 or p[:, 0].max() >= m.shape[0]
                           or p[:, 1].max() >= m.shape[1]):
                raise MissingDistance("pair index outside the distance matrix")
            out.append(m[p[:, 0], p[:, 1]])
    return out[0], out[1]


def _check_nonempty(same_d, diff_d):
    if len(same_d) == 0 or len(diff_d) == 0:
        raise EmptyPairSet(f"{len(same_d)} same pairs, {len(diff_d)} diff pairs")


def compute_val_far(dists, pairs, d):
    """``(VAL(d), FAR(d))``: accepted fractions of same and diff pairs."""
    same_d, diff_d = pair_distances(dists, pairs)
    _check_nonempty(same_d, diff_d)
    return float(np.mean(same_d <= d)), float(np.mean(diff_d <= d))


@dataclass
class VerificationReport:
    thresholds: np.ndarray
    val: np.ndarray
    far: np.ndarray

    def __len__(self):
        return len(self.thresholds)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "val", "far"])
            for t, v, f in zip(self.thresholds.tolist(), self.val.tolist(), self.far.tolist()):
                w.writerow([repr(t), repr(v), repr(f)])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(*(np.array([float(r[k]) for r in rows]) for k in ("threshold", "val", "far")))


def accept_counts(sorted_dists, thresholds):
    """Number of entries ``<= t`` for each threshold (input must be sorted)."""
    return np.searchsorted(sorted_dists, thresholds, side="right")


def roc_sweep(dists, pairs, thresholds):
    t = np.asarray(thresholds, dtype=np.float64).ravel()
    if t.size == 0 or np.any(np.diff(t) < 0):
        raise ValueError("thresholds must be a nonempty ascending sequence")
    same_d, diff_d = pair_distances(dists, pairs)
    _check_nonempty(same_d, diff_d)
    val = accept_counts(np.sort(same_d), t) / len(same_d)
    far = accept_counts(np.sort(diff_d), t) / len(diff_d)
    return VerificationReport(t, val, far)


class OperatingPoint(NamedTuple):
    val: float
    threshold: float
    qualified: bool  # False when no threshold reached far <= target


def val_at_far(report, target_far):
    """VAL at the largest threshold whose FAR does not exceed ``target_far``."""
    if len(report) == 0:
        raise EmptyReport("report has no thresholds")
    ok = np.flatnonzero(report.far <= target_far)
    if ok.size == 0:
        return OperatingPoint(0.0, float(report.thresholds[0]), False)
    k = ok[-1]
    return OperatingPoint(float(report.val[k]), float(report.thresholds[k]), True)


class TenfoldResult(NamedTuple):
    mean_accuracy: float
    standard_error: float
    thresholds: np.ndarray  # selected threshold per fold
    accuracies: np.ndarray  # held-out accuracy per fold


def make_folds(pairs, rng, k=10):
    """Random fold ids for same and diff pairs, each class spread evenly."""
    def assign(n):
        ids = np.arange(n) % k
        return rng.permutation(ids)
    return assign(len(pairs.same)), assign(len(pairs.diff))


def _accuracy_curve(same_d, diff_d, grid):
    """Accuracy of "same iff D <= d" at every grid value, plus pair count."""
    tp = accept_counts(np.sort(same_d), grid)
    fa = accept_counts(np.sort(diff_d), grid)
    correct = tp + (len(diff_d) - fa)
    return correct, len(same_d) + len(diff_d)


def tenfold_accuracy(dists, pairs, folds, threshold_grid=None):
    """Hold out each fold in turn, pick the threshold on the rest, score the fold.

    ``folds`` is ``(same_fold_ids, diff_fold_ids)`` with ids ``0..k-1``.
    Ties in training accuracy go to the lowest threshold.
    """
    grid = default_grid() if threshold_grid is None else np.asarray(threshold_grid, float)
    if grid.size == 0:
        raise BadPartition("threshold grid is empty")
    grid = np.sort(grid)
    same_d, diff_d = pair_distances(dists, pairs)
    fs, fd = (np.asarray(f, dtype=np.int64) for f in folds)
    if fs.shape != same_d.shape or fd.shape != diff_d.shape:
        raise BadPartition("fold ids do not match the pair lists")
    k = int(max(fs.max(initial=-1), fd.max(initial=-1))) + 1
    if k < 2 or min(fs.min(initial=0), fd.min(initial=0)) < 0:
        raise BadPartition(f"need at least 2 folds with ids from 0, got {k}")
    chosen, accs = np.empty(k), np.empty(k)
    for f in range(k):
        test_s, test_d = fs == f, fd == f
        if not (test_s.any() or test_d.any()):
            raise BadPartition(f"fold {f} is empty")
        if not ((~test_s).any() or (~test_d).any()):
            raise BadPartition(f"no training pairs outside fold {f}")
        correct, total = _accuracy_curve(same_d[~test_s], diff_d[~test_d], grid)
        best = int(np.argmax(correct))
        chosen[f] = grid[best]
        hits = np.count_nonzero(same_d[test_s] <= chosen[f]) + \
            np.count_nonzero(diff_d[test_d] > chosen[f])
        accs[f] = hits / (np.count_nonzero(test_s) + np.count_nonzero(test_d))
    stderr = float(np.std(accs, ddof=1) / np.sqrt(k))
    return TenfoldResult(float(np.mean(accs)), stderr, chosen, accs)


def quantize(e):
    """Symmetric linear int8 codes: ``clip(round(127 * c), -127, 127)``."""
    e = np.asarray(e, dtype=np.float64)
    return np.clip(np.rint(e * QUANT_SCALE), -QUANT_SCALE, QUANT_SCALE).astype(np.int8)


def dequantize(codes):
    return l2_normalize(np.asarray(codes, dtype=np.float64) / QUANT_SCALE)


def encode_quantized(codes):
    c = np.asarray(codes, dtype=np.int8)
    if c.ndim != 2:
        raise ValueError(f"expected (count, dim) codes, got shape {c.shape}")
    return QUANT_MAGIC + struct.pack("<II", *c.shape) + c.tobytes()


def decode_quantized(data):
    data = bytes(data)
    if len(data) < 12 or data[:4] != QUANT_MAGIC:
        raise CorruptFile("bad TQ08 magic or file too short")
    count, dim = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + count * dim:
        raise CorruptFile(f"TQ08 body is {len(data) - 12} bytes, header implies {count * dim}")
    return np.frombuffer(data, np.int8, count * dim, 12).reshape(count, dim).copy()


def write_pairs(path, pairs):
    with open(path, "w") as fh:
        for tag, p in (("same", pairs.same), ("diff", pairs.diff)):
            for i, j in p.tolist():
                fh.write(f"{i},{j},{tag}\n")


def read_pairs(path):
    same, diff = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                i, j, tag = line.split(",")
                pair = (int(i), int(j))
            except ValueError:
                raise CorruptFile(f"pairs line {lineno}: {line!r}") from None
            if tag == "same":
                same.append(pair)
            elif tag == "diff":
                diff.append(pair)
            else:
                raise CorruptFile(f"pairs line {lineno}: tag must be same or diff, got {tag!r}")
    return PairSet(same, diff)
