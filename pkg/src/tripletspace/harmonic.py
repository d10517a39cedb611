"""Cross-version compatible ("harmonic") embeddings.

A new network (v2) is trained so that its embeddings can be compared
directly with those of a frozen older network (v1). Each batch is mined over
the union of both versions: rows ``0..B-1`` are the v2 embeddings and rows
``B..2B-1`` the v1 embeddings of the same samples. v1 rows are constants.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, MissingEmbedding, StageOrderViolation
from .evaluation import roc_sweep
from .geometry import cross_sqdist, pairwise_sqdist
from .loss import DEFAULT_MARGIN, batch_triplet_loss
from .mining import MiningPolicy, assemble_batch, select_triplets
from .model import backprop, reinit_last_layer
from .trainer import forward_checked, run_loop, step_rng

V1, V2 = 1, 2
STAGES = ("last_layer_only", "full_network")


@dataclass
class HarmonicTriplets:
    indices: np.ndarray  # (T, 3) rows of the stacked [v2; v1] union
    batch_size: int

    def __len__(self):
        return len(self.indices)

    @property
    def samples(self):
        """Batch sample index of each slot."""
        return self.indices % self.batch_size

    @property
    def versions(self):
        """V1 or V2 tag of each slot."""
        return np.where(self.indices < self.batch_size, V2, V1)

    def subset(self, anchor=V2, positive=V2, negative=None):
        v = self.versions
        keep = (v[:, 0] == anchor) & (v[:, 1] == positive)
        if negative is not None:
            keep &= v[:, 2] == negative
        return self.indices[keep]


def generate_harmonic_triplets(labels, v2_embeddings, v1_embeddings, margin=DEFAULT_MARGIN,
                               policy=MiningPolicy(), *, v1_anchors=False, rng=None):
    """Mine triplets over both versions of a batch.

    Anchors are v2 embeddings (plus v1 ones when ``v1_anchors``); positives
    are every other same-identity point of either version, including the
    anchor sample's own v1 embedding; negatives follow ``policy`` over the
    union of both versions.
    """
    v2 = np.asarray(v2_embeddings, dtype=np.float64)
    v1 = np.asarray(v1_embeddings, dtype=np.float64)
    if v1.shape != v2.shape:
        raise DimMismatch(f"v1 {v1.shape} and v2 {v2.shape} embeddings differ in shape")
    labels = np.asarray(labels)
    b = len(labels)
    union = np.concatenate([v2, v1])
    anchors = np.zeros(2 * b, dtype=bool)
    anchors[:b] = True
    if v1_anchors:
        anchors[b:] = True
    trip = select_triplets(pairwise_sqdist(union), np.concatenate([labels, labels]), margin,
                           policy, anchor_mask=anchors, rng=rng)
    return HarmonicTriplets(trip, b)


def harmonic_loss(v2_embeddings, v1_embeddings, triplets, margin=DEFAULT_MARGIN):
    """Triplet loss over the union; gradient is returned for the v2 rows only."""
    union = np.concatenate([v2_embeddings, v1_embeddings])
    total, grad, active = batch_triplet_loss(union, triplets.indices, margin)
    return total, grad[:triplets.batch_size], active


def stage_mask(net, stage):
    """Per-array trainable flags in ``net.arrays()`` order."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    n = net.num_layers
    if stage == "full_network":
        return [True] * (2 * n)
    return [k == n - 1 for k in range(n)] * 2


def harmonic_train(v2_net, v1_embeddings, dataset, cfg, stage, *, staged=True,
                   last_layer_steps_done=0, v1_anchors=False, state=None, callback=None):
    """Train ``v2_net`` in place against frozen v1 embeddings of ``dataset`` rows.

    ``last_layer_only`` leaves every array except the final affine layer
    bit-identical. With ``staged`` (the default), ``full_network`` is refused
    until some last-layer steps have been run. Returns ``(net, log)``.
    """
    v1_all = np.array(v1_embeddings, dtype=np.float64)
    v1_all.setflags(write=False)
    if v1_all.shape != (len(dataset), v2_net.embedding_dim):
        raise DimMismatch(f"v1 embeddings {v1_all.shape} do not cover the dataset "
                          f"({len(dataset)} x {v2_net.embedding_dim})")
    mask = stage_mask(v2_net, stage)
    if stage == "full_network" and staged and last_layer_steps_done <= 0:
        raise StageOrderViolation("full_network stage requested before any last_layer_only steps")

    def step_fn(net, step):
        batch = assemble_batch(dataset, cfg.batch, step_rng(cfg.batch.seed, step, 2))
        emb, trace = forward_checked(net, batch.inputs)
        v1 = v1_all[batch.source_indices]
        rng = step_rng(cfg.seed, step, 3) if cfg.policy.negative_mode == "random" else None
        trip = generate_harmonic_triplets(batch.labels, emb, v1, cfg.margin, cfg.policy,
                                          v1_anchors=v1_anchors, rng=rng)
        total, g, active = harmonic_loss(emb, v1, trip, cfg.margin)
        n = len(trip)
        if n:
            g /= n
        return backprop(net, trace, g), total / max(n, 1), active, n

    net, history, _ = run_loop(v2_net, cfg, step_fn, state=state, trainable=mask,
                               callback=callback)
    return net, history


def harmonic_retrain(v2_net, v1_embeddings, dataset, last_layer_cfg, full_cfg, *,
                     reinit_seed=None, v1_anchors=False):
    """Both stages in order: optional fresh last layer, last layer only, then everything.

    Returns ``(net, (last_layer_log, full_log))``.
    """
    net = v2_net if reinit_seed is None else reinit_last_layer(v2_net, reinit_seed)
    net, log1 = harmonic_train(net, v1_embeddings, dataset, last_layer_cfg, "last_layer_only",
                               v1_anchors=v1_anchors)
    net, log2 = harmonic_train(net, v1_embeddings, dataset, full_cfg, "full_network",
                               last_layer_steps_done=last_layer_cfg.steps,
                               v1_anchors=v1_anchors)
    return net, (log1, log2)


def _as_matrix(embs, members):
    if isinstance(embs, dict):
        missing = [m for m in members.tolist() if m not in embs]
        if missing:
            raise MissingEmbedding(f"no embedding for sample {missing[0]}")
        dim = len(next(iter(embs.values())))
        out = np.full((int(members.max()) + 1, dim), np.nan)
        for m in members.tolist():
            out[m] = embs[m]
        return out
    m = np.asarray(embs, dtype=np.float64)
    if members.size and members.max() >= m.shape[0]:
        raise MissingEmbedding(f"sample {int(members.max())} beyond {m.shape[0]} embeddings")
    return m


def cross_version_report(v1_embeddings, v2_embeddings, pairs, thresholds):
    """ROC sweeps for v1-v1, v2-v2 and mixed pairs (first member v1, second v2)."""
    members = pairs.members()
    v1 = _as_matrix(v1_embeddings, members)
    v2 = _as_matrix(v2_embeddings, members)
    return (roc_sweep(pairwise_sqdist(v1), pairs, thresholds),
            roc_sweep(pairwise_sqdist(v2), pairs, thresholds),
            roc_sweep(cross_sqdist(v1, v2), pairs, thresholds))
