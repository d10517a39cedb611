"""Triplet hinge loss on squared distances, with closed-form gradients.

Gradients are taken with respect to the normalized embeddings; the
normalization Jacobian is applied later by ``model.backprop``. At the hinge
kink (argument exactly zero) the subgradient is zero.
"""

from typing import NamedTuple

import numpy as np

from .errors import DimMismatch, IndexOutOfRange
from .geometry import rowwise_sqdist, squared_distance

DEFAULT_MARGIN = 0.2


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


def check_margin(margin):
    margin = float(margin)
    if not margin >= 0.0:
        raise ValueError(f"margin must be nonnegative, got {margin}")
    return margin


def triplet_loss(a, p, n, margin=DEFAULT_MARGIN):
    margin = check_margin(margin)
    return max(0.0, squared_distance(a, p) - squared_distance(a, n) + margin)


def triplet_loss_grads(a, p, n, margin=DEFAULT_MARGIN):
    """Return ``(ga, gp, gn, loss)`` for a single triplet."""
    a, p, n = (np.asarray(x, dtype=np.float64) for x in (a, p, n))
    if not a.shape == p.shape == n.shape:
        raise DimMismatch(f"triplet dims differ: {a.shape}, {p.shape}, {n.shape}")
    margin = check_margin(margin)
    arg = squared_distance(a, p) - squared_distance(a, n) + margin
    if not arg > 0.0:
        zero = np.zeros_like(a)
        return zero, zero.copy(), zero.copy(), max(arg, 0.0)
    return 2.0 * (n - p), 2.0 * (p - a), 2.0 * (a - n), arg


def as_triplet_array(triplets):
    t = np.asarray(triplets, dtype=np.int64)
    if t.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if t.ndim != 2 or t.shape[1] != 3:
        raise ValueError(f"triplets must have shape (T, 3), got {t.shape}")
    return t


def hinge_arguments(embeddings, triplets, margin=DEFAULT_MARGIN):
    """``d(a, p) - d(a, n) + margin`` for each triplet."""
    e = np.asarray(embeddings, dtype=np.float64)
    t = as_triplet_array(triplets)
    a, p, n = e[t[:, 0]], e[t[:, 1]], e[t[:, 2]]
    return rowwise_sqdist(a, p) - rowwise_sqdist(a, n) + margin


def _scatter_rows(rows, values, n_rows):
    """Sum ``values[k]`` into output row ``rows[k]`` (sequential, deterministic order)."""
    out = np.empty((n_rows, values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.bincount(rows, weights=values[:, c], minlength=n_rows)
    return out


def batch_triplet_loss(embeddings, triplets, margin=DEFAULT_MARGIN):
    """Summed loss over ``triplets`` (rows of batch indices).

    Returns ``(total, grad, active_count)`` where ``grad`` has the shape of
    ``embeddings`` and accumulates each triplet's gradient into the rows of
    its three members.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    margin = check_margin(margin)
    t = as_triplet_array(triplets)
    grad = np.zeros_like(e)
    if t.shape[0] == 0:
        return 0.0, grad, 0
    if t.min() < 0 or t.max() >= e.shape[0]:
        raise IndexOutOfRange(f"triplet index outside batch of {e.shape[0]}")
    args = hinge_arguments(e, t, margin)
    active = args > 0.0
    total = float(np.sum(args[active]))
    ta = t[active]
    a, p, n = e[ta[:, 0]], e[ta[:, 1]], e[ta[:, 2]]
    for rows, g in ((ta[:, 0], n - p), (ta[:, 1], p - a), (ta[:, 2], a - n)):
        grad += 2.0 * _scatter_rows(rows, g, e.shape[0])
    return total, grad, int(np.count_nonzero(active))
