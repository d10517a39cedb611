"""Identity-quota mini-batches and triplet selection within a batch."""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientIdentities, InsufficientSamples, NoNegatives
from .geometry import pairwise_sqdist
from .loss import DEFAULT_MARGIN, check_margin
from .model import embed

NEGATIVE_MODES = ("semi_hard", "hardest", "random")
POSITIVE_MODES = ("all_pairs", "hardest")


@dataclass(frozen=True)
class BatchSpec:
    faces_per_identity: int = 40
    identities_per_batch: int = 45
    random_negatives: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.faces_per_identity < 1 or self.identities_per_batch < 1:
            raise ValueError("faces_per_identity and identities_per_batch must be positive")
        if self.random_negatives < 0:
            raise ValueError("random_negatives must be nonnegative")

    @property
    def batch_size(self):
        return self.identities_per_batch * self.faces_per_identity + self.random_negatives


@dataclass(frozen=True)
class MiningPolicy:
    negative_mode: str = "semi_hard"
    positive_mode: str = "all_pairs"

    def __post_init__(self):
        if self.negative_mode not in NEGATIVE_MODES:
            raise ValueError(f"negative_mode must be one of {NEGATIVE_MODES}")
        if self.positive_mode not in POSITIVE_MODES:
            raise ValueError(f"positive_mode must be one of {POSITIVE_MODES}")


@dataclass
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray
    source_indices: np.ndarray
    negative_only: np.ndarray  # True for the randomly added negative fillers

    def __len__(self):
        return len(self.labels)


def identity_groups(labels):
    """Map identity id -> ascending row indices."""
    labels = np.asarray(labels)
    order = np.argsort(labels, kind="stable")
    ids, starts = np.unique(labels[order], return_index=True)
    return dict(zip(ids.tolist(), np.split(order, starts[1:])))


def assemble_batch(dataset, spec, rng):
    """Draw a batch with ``spec.faces_per_identity`` faces per sampled identity.

    Identities are sampled uniformly without replacement, then faces within
    each identity (clamped to what is available), then ``random_negatives``
    filler rows from identities that were not sampled.
    """
    groups = identity_groups(dataset.labels)
    ids = np.array(sorted(groups))
    if len(ids) < spec.identities_per_batch:
        raise InsufficientIdentities(
            f"need {spec.identities_per_batch} identities, dataset has {len(ids)}")
    chosen = rng.choice(ids, size=spec.identities_per_batch, replace=False)
    rows = []
    for ident in chosen.tolist():
        members = groups[ident]
        if len(members) < 2:
            raise InsufficientSamples(f"identity {ident} has {len(members)} sample(s)")
        take = min(spec.faces_per_identity, len(members))
        rows.append(rng.choice(members, size=take, replace=False))
    n_core = sum(len(r) for r in rows)
    if spec.random_negatives:
        chosen_set = set(chosen.tolist())
        pool = np.sort(np.concatenate(
            [groups[i] for i in ids.tolist() if i not in chosen_set] or [np.zeros(0, np.int64)]))
        take = min(spec.random_negatives, len(pool))
        rows.append(rng.choice(pool, size=take, replace=False))
    src = np.concatenate(rows).astype(np.int64)
    neg_only = np.zeros(len(src), dtype=bool)
    neg_only[n_core:] = True
    return LabeledBatch(np.asarray(dataset.inputs)[src], np.asarray(dataset.labels)[src],
                        src, neg_only)


def select_triplets(dists, labels, margin=DEFAULT_MARGIN, policy=MiningPolicy(), *,
                    anchor_mask=None, rng=None):
    """Pick one negative per anchor-positive pair.

    Anchor-positive pairs are ordered ``(a, p)``, ``a != p``, equal labels,
    emitted in ascending ``(a, p)`` order; ``positive_mode="hardest"`` keeps
    only the farthest positive per anchor. Negatives:

    * ``semi_hard``: the closest negative with ``d(a, n) > d(a, p)``; if none,
      the farthest negative.
    * ``hardest``: the closest negative.
    * ``random``: the ``k``-th negative of the anchor in index order, with
      ``k = rng.integers(0, counts)`` drawn once for all pairs in pair order.

    Ties go to the lowest batch index. ``margin`` is accepted for interface
    symmetry; it does not filter candidates. Returns an ``(T, 3)`` int array.
    """
    check_margin(margin)
    d = np.asarray(dists, dtype=np.float64)
    labels = np.asarray(labels)
    b = len(labels)
    if d.shape != (b, b):
        raise ValueError(f"distance matrix {d.shape} does not match {b} labels")
    same = labels[:, None] == labels[None, :]
    if same.all():
        raise NoNegatives("batch contains a single identity")
    if policy.negative_mode == "random" and rng is None:
        raise ValueError("random negative mode needs an rng")
    neg = ~same
    pos = same.copy()
    np.fill_diagonal(pos, False)
    if anchor_mask is not None:
        pos[~np.asarray(anchor_mask, dtype=bool)] = False
    if policy.positive_mode == "hardest":
        has_pos = pos.any(axis=1)
        far = np.argmax(np.where(pos, d, -np.inf), axis=1)
        pos = np.zeros_like(pos)
        pos[np.flatnonzero(has_pos), far[has_pos]] = True
    a_idx, p_idx = np.nonzero(pos)
    if a_idx.size == 0:
        return np.zeros((0, 3), dtype=np.int64)

    if policy.negative_mode == "hardest":
        n_idx = np.argmin(np.where(neg, d, np.inf), axis=1)[a_idx]
    elif policy.negative_mode == "random":
        counts = neg.sum(axis=1)
        by_index = np.argsort(same, axis=1, kind="stable")  # negatives first, ascending
        n_idx = by_index[a_idx, rng.integers(0, counts[a_idx])]
    else:
        key = np.where(neg, d, np.inf)
        order = np.argsort(key, axis=1, kind="stable")
        ranked = np.take_along_axis(key, order, axis=1)
        fallback = np.argmax(np.where(neg, d, -np.inf), axis=1)
        counts = neg.sum(axis=1)
        d_ap = d[a_idx, p_idx]
        # rank of the first negative strictly farther than the positive;
        # pairs come grouped by anchor, so search each anchor's row once
        rank = np.empty(len(a_idx), dtype=np.int64)
        anchors, starts = np.unique(a_idx, return_index=True)
        bounds = np.append(starts, len(a_idx))
        for k, a in enumerate(anchors.tolist()):
            lo, hi = bounds[k], bounds[k + 1]
            rank[lo:hi] = np.searchsorted(ranked[a, :counts[a]], d_ap[lo:hi], side="right")
        ok = rank < counts[a_idx]
        n_idx = np.where(ok, order[a_idx, np.minimum(rank, b - 1)], fallback[a_idx])
    return np.stack([a_idx, p_idx, n_idx], axis=1).astype(np.int64)


def offline_mine(net, inputs, labels, row_ids, margin=DEFAULT_MARGIN, policy=MiningPolicy(),
                 *, rng=None):
    """Embed a whole subset with ``net`` and mine it as one batch.

    Returns triplets of dataset row ids (``row_ids[k]`` names subset row k).
    """
    emb = embed(net, inputs)
    local = select_triplets(pairwise_sqdist(emb), labels, margin, policy, rng=rng)
    return np.asarray(row_ids, dtype=np.int64)[local]


def write_triplet_dump(path, triplets):
    with open(path, "w") as fh:
        for a, p, n in np.asarray(triplets).reshape(-1, 3).tolist():
            fh.write(f"{a},{p},{n}\n")


def read_triplet_dump(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append([int(x) for x in line.split(",")])
    return np.array(rows, dtype=np.int64).reshape(-1, 3)
