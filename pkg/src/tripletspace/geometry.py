"""Vector geometry on the unit hypersphere.

Embeddings are plain float64 numpy arrays: a single embedding is a 1-D array
of length ``d`` and a batch is a ``(B, d)`` array with one embedding per row.
"""

import numpy as np

from .errors import DimMismatch, ZeroVector

ZERO_NORM = 1e-12


def l2_normalize(v):
    """Scale ``v`` (or every row of a 2-D ``v``) to unit Euclidean norm.

    Raises ZeroVector when a norm is below 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        norm = np.sqrt(np.dot(v, v))
        if not norm >= ZERO_NORM:
            raise ZeroVector(f"vector norm {norm:.3g} below {ZERO_NORM}")
        return v / norm
    if v.ndim != 2:
        raise DimMismatch(f"expected 1-D or 2-D input, got {v.ndim}-D")
    norms = np.sqrt(np.einsum("ij,ij->i", v, v))
    bad = np.flatnonzero(~(norms >= ZERO_NORM))
    if bad.size:
        raise ZeroVector(f"row {bad[0]} has norm {norms[bad[0]]:.3g} below {ZERO_NORM}")
    return v / norms[:, None]


def squared_distance(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimMismatch(f"dims differ: {u.shape} vs {v.shape}")
    diff = u - v
    return float(np.dot(diff, diff))


def pairwise_sqdist(batch):
    """Squared distances between all rows of ``batch``.

    Uses ``|x|^2 + |y|^2 - 2 x.y`` (``2 - 2 x.y`` for unit rows). Negative
    round-off is clamped to zero, the diagonal is exactly zero and the
    result is exactly symmetric.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimMismatch(f"expected a nonempty (B, d) batch, got shape {x.shape}")
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    d = np.triu(d, 1)
    d = d + d.T
    np.maximum(d, 0.0, out=d)
    return d


def cross_sqdist(a, b):
    """Squared distances between every row of ``a`` and every row of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimMismatch(f"incompatible shapes {a.shape} and {b.shape}")
    d = (np.einsum("ij,ij->i", a, a)[:, None] + np.einsum("ij,ij->i", b, b)[None, :]
         - 2.0 * (a @ b.T))
    np.maximum(d, 0.0, out=d)
    return d


def rowwise_sqdist(a, b):
    """Squared distance between ``a[k]`` and ``b[k]`` for each ``k``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    return np.einsum("ij,ij->i", diff, diff)
