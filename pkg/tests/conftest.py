import time
from dataclasses import dataclass

import numpy as np
import pytest

from tripletspace.dataio import HOLDOUT, TRAIN, SyntheticSpec, generate_synthetic, split_by_identity
from tripletspace.evaluation import all_pairs, default_grid, roc_sweep, val_at_far
from tripletspace.geometry import pairwise_sqdist
from tripletspace.mining import BatchSpec, MiningPolicy
from tripletspace.model import NetConfig, embed, new_network
from tripletspace.trainer import TrainConfig, train

# The fixed end-to-end recipe shared by the learning, quantization, tenfold
# and clustering checks.
RECIPE_SEED = 0
HOLDOUT_FRACTION = 0.2
NET_HIDDEN = (64, 64)
EMBEDDING_DIM = 16
TARGET_FAR = 1e-2


def recipe_config(seed=RECIPE_SEED, negative_mode="semi_hard"):
    return TrainConfig(
        learning_rate=0.05, margin=0.2, steps=600,
        batch=BatchSpec(faces_per_identity=5, identities_per_batch=30, seed=seed),
        policy=MiningPolicy(negative_mode, "all_pairs"),
        lr_schedule=((300, 0.01), (450, 0.002)), seed=seed)


def recipe_dataset(seed=RECIPE_SEED):
    spec = SyntheticSpec(num_identities=50, samples_per_identity=30, latent_dim=8,
                         input_dim=64, noise_sigma=0.15, distortion_layers=2, seed=seed)
    return split_by_identity(generate_synthetic(spec), HOLDOUT_FRACTION, seed)


def recipe_network(seed=RECIPE_SEED, input_dim=64):
    return new_network(NetConfig(input_dim, NET_HIDDEN, EMBEDDING_DIM, seed=seed))


def holdout_val(net, holdout, pairs=None):
    pairs = pairs or all_pairs(holdout.labels)
    report = roc_sweep(pairwise_sqdist(embed(net, holdout.inputs)), pairs, default_grid())
    return val_at_far(report, TARGET_FAR).val


@dataclass
class RecipeRun:
    dataset: object
    train_part: object
    holdout: object
    net: object
    log: object
    untrained_val: float
    trained_val: float
    seconds: float

    @property
    def holdout_embeddings(self):
        return embed(self.net, self.holdout.inputs)


@pytest.fixture(scope="session")
def recipe_run():
    ds = recipe_dataset()
    tr, ho = ds.part(TRAIN), ds.part(HOLDOUT)
    net = recipe_network()
    untrained = holdout_val(net, ho)
    t0 = time.perf_counter()
    net, log = train(net, tr, recipe_config())
    seconds = time.perf_counter() - t0
    return RecipeRun(ds, tr, ho, net, log, untrained, holdout_val(net, ho), seconds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda l: int(l.split()[1][:-1])):
            terminalreporter.write_line(line)
