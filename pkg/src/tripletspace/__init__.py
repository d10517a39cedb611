"""Triplet-loss embedding learning on the unit hypersphere.

Small numpy implementation of a triplet-trained embedding network with
online semi-hard mining, AdaGrad training, verification metrics, int8
quantization, agglomerative clustering and cross-version compatible
("harmonic") retraining. Data is synthetic: identities are latent unit
vectors pushed through a fixed random nonlinear lift.
"""

from .cluster import Clustering, agglomerative_cluster, pairwise_f1
from .dataio import (Dataset, SyntheticSpec, generate_synthetic, read_vectors,
                     split_by_identity, write_vectors)
from .errors import TripletSpaceError
from .evaluation import (PairSet, VerificationReport, all_pairs, compute_val_far, default_grid,
                         roc_sweep, tenfold_accuracy, val_at_far)
from .geometry import l2_normalize, pairwise_sqdist, squared_distance
from .harmonic import cross_version_report, generate_harmonic_triplets, harmonic_train
from .loss import batch_triplet_loss, triplet_loss
from .mining import BatchSpec, MiningPolicy, assemble_batch, select_triplets
from .model import EmbeddingNet, NetConfig, embed, new_network
from .trainer import TrainConfig, TrainLog, train

__all__ = [
    "BatchSpec", "Clustering", "Dataset", "EmbeddingNet", "MiningPolicy", "NetConfig",
    "PairSet", "SyntheticSpec", "TrainConfig", "TrainLog", "TripletSpaceError",
    "VerificationReport", "agglomerative_cluster", "all_pairs", "assemble_batch",
    "batch_triplet_loss", "compute_val_far", "cross_version_report", "default_grid", "embed",
    "generate_harmonic_triplets", "generate_synthetic", "harmonic_train", "l2_normalize",
    "new_network", "pairwise_f1", "pairwise_sqdist", "read_vectors", "roc_sweep",
    "select_triplets", "split_by_identity", "squared_distance", "tenfold_accuracy", "train",
    "triplet_loss", "val_at_far", "write_vectors",
]
