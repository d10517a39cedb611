"""AdaGrad training loop: batch -> embed -> mine -> loss -> backprop -> update."""

import csv
import logging
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import CollapseDetected, ConfigError, ShapeMismatch, ZeroVector
from .geometry import pairwise_sqdist
from .loss import DEFAULT_MARGIN, batch_triplet_loss, check_margin
from .mining import BatchSpec, MiningPolicy, assemble_batch, select_triplets
from .model import backprop, embed_batch, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

COLLAPSE_NORM = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    margin: float = DEFAULT_MARGIN
    steps: int = 1000
    batch: BatchSpec = BatchSpec()
    policy: MiningPolicy = MiningPolicy()
    adagrad_epsilon: float = 1e-8
    lr_schedule: tuple = ()
    checkpoint_every: int = 0
    eval_every: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lr_schedule",
                           tuple((int(s), float(r)) for s, r in self.lr_schedule))
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.steps < 0:
            raise ConfigError(f"steps must be nonnegative, got {self.steps}")
        if not self.adagrad_epsilon > 0:
            raise ConfigError("adagrad_epsilon must be positive")
        check_margin(self.margin)
        steps = [s for s, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError(f"lr_schedule steps must be strictly increasing: {steps}")

    def rate_at(self, step):
        """Learning rate for 1-based ``step``; a schedule entry applies from its step on."""
        rate = self.learning_rate
        for s, r in self.lr_schedule:
            if step >= s:
                rate = r
        return rate


@dataclass
class AdaGradState:
    accumulators: list

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(a) for a in net.arrays()])


@dataclass
class StepRecord:
    step: int
    loss: float
    active: int
    triplets: int
    lr: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    evals: list = field(default_factory=list)  # (step, value) from the eval callback

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def active_fraction(self):
        trip = self.column("triplets")
        return self.column("active") / np.maximum(trip, 1)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss", "active", "triplets", "lr", "seconds"])
            for r in self.records:
                w.writerow([r.step, repr(r.loss), r.active, r.triplets, repr(r.lr),
                            f"{r.seconds:.6f}"])


def adagrad_step(params, grads, state, lr, eps=1e-8, trainable=None):
    """In-place AdaGrad: ``G += g**2; theta -= lr * g / (sqrt(G) + eps)``.

    ``params``, ``grads`` and ``state.accumulators`` are parallel lists of
    arrays. Arrays whose ``trainable`` flag is False are left untouched.
    """
    if not len(params) == len(grads) == len(state.accumulators):
        raise ShapeMismatch("parameter, gradient and accumulator lists differ in length")
    for k, (theta, g, acc) in enumerate(zip(params, grads, state.accumulators)):
        if theta.shape != g.shape or theta.shape != acc.shape:
            raise ShapeMismatch(f"array {k}: {theta.shape} / {g.shape} / {acc.shape}")
        if trainable is not None and not trainable[k]:
            continue
        acc += g * g
        theta -= lr * g / (np.sqrt(acc) + eps)
    return params, state


def step_rng(seed, step, stream):
    return np.random.default_rng([int(seed), int(step), stream])


def forward_checked(net, inputs):
    try:
        emb, trace = embed_batch(net, inputs)
    except ZeroVector as exc:
        raise CollapseDetected(str(exc)) from None
    mean_norm = float(np.mean(trace.norms))
    if mean_norm < COLLAPSE_NORM:
        raise CollapseDetected(f"mean pre-normalization norm {mean_norm:.3g} < {COLLAPSE_NORM}")
    return emb, trace


def triplet_step(net, batch, cfg, step):
    """Loss and parameter gradients for one batch, normalized per triplet."""
    emb, trace = forward_checked(net, batch.inputs)
    mining_rng = step_rng(cfg.seed, step, 1) if cfg.policy.negative_mode == "random" else None
    triplets = select_triplets(pairwise_sqdist(emb), batch.labels, cfg.margin, cfg.policy,
                               anchor_mask=~batch.negative_only, rng=mining_rng)
    total, g, active = batch_triplet_loss(emb, triplets, cfg.margin)
    n = len(triplets)
    if n:
        g /= n
    return backprop(net, trace, g), total / max(n, 1), active, n


def save_state(directory, step, net, state):
    """Write ``net_<step>.tnet`` and ``adagrad_<step>.tnet`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    net_path = os.path.join(directory, f"net_{step:06d}.tnet")
    with open(net_path, "wb") as fh:
        fh.write(save_checkpoint(net))
    acc = net.copy()
    n = net.num_layers
    acc.weights, acc.biases = state.accumulators[:n], state.accumulators[n:]
    with open(os.path.join(directory, f"adagrad_{step:06d}.tnet"), "wb") as fh:
        fh.write(save_checkpoint(acc))
    return net_path


def load_state(directory, step):
    with open(os.path.join(directory, f"net_{step:06d}.tnet"), "rb") as fh:
        net = load_checkpoint(fh.read())
    with open(os.path.join(directory, f"adagrad_{step:06d}.tnet"), "rb") as fh:
        acc = load_checkpoint(fh.read())
    return net, AdaGradState(acc.arrays())


def run_loop(net, cfg, step_fn, *, state=None, start_step=0, trainable=None,
             checkpoint_dir=None, callback=None):
    """Shared loop; ``step_fn(net, step)`` returns ``(grads, loss, active, triplets)``."""
    state = AdaGradState.zeros_like(net) if state is None else state
    history = TrainLog()
    t0 = time.perf_counter()
    for step in range(start_step + 1, cfg.steps + 1):
        grads, loss, active, n = step_fn(net, step)
        lr = cfg.rate_at(step)
        adagrad_step(net.arrays(), grads.arrays(), state, lr, cfg.adagrad_epsilon, trainable)
        history.records.append(StepRecord(step, float(loss), int(active), int(n), lr,
                                          time.perf_counter() - t0))
        if checkpoint_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_state(checkpoint_dir, step, net, state)
        if callback is not None and cfg.eval_every and step % cfg.eval_every == 0:
            history.evals.append((step, callback(net)))
        if step % 500 == 0:
            log.info("step %d loss %.4f active %d/%d", step, loss, active, n)
    return net, history, state


def train(net, dataset, cfg, *, state=None, start_step=0, checkpoint_dir=None, callback=None):
    """Train ``net`` in place on ``dataset`` and return ``(net, log)``.

    Each step draws its batch from an rng keyed by ``(batch.seed, step)``,
    so resuming from a saved step with the saved AdaGrad state replays the
    run exactly. Raises CollapseDetected when the mean pre-normalization
    norm of a batch falls below 1e-6.
    """
    def step_fn(net, step):
        batch = assemble_batch(dataset, cfg.batch, step_rng(cfg.batch.seed, step, 0))
        return triplet_step(net, batch, cfg, step)

    net, history, _ = run_loop(net, cfg, step_fn, state=state, start_step=start_step,
                               checkpoint_dir=checkpoint_dir, callback=callback)
    return net, history


# flat key=value configuration

_BATCH_KEYS = {"faces_per_identity": "faces_per_identity",
               "identities_per_batch": "identities_per_batch",
               "random_negatives": "random_negatives", "batch_seed": "seed"}
_POLICY_KEYS = ("negative_mode", "positive_mode")


def parse_kv(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_schedule(value):
    """``"1000:0.01, 2000:0.005"`` -> ``((1000, 0.01), (2000, 0.005))``."""
    if isinstance(value, (list, tuple)):
        return tuple(value)
    pairs = []
    for item in str(value).replace(";", ",").split(","):
        if item.strip():
            s, r = item.split(":")
            pairs.append((int(s), float(r)))
    return tuple(pairs)


def train_config_from_mapping(values, base=None):
    """Build a TrainConfig from flat string keys; unknown keys are returned.

    Returns ``(config, leftover)``.
    """
    base = base or TrainConfig()
    top, batch, policy, leftover = {}, {}, {}, {}
    scalar = {f.name: f.type for f in fields(TrainConfig)}
    try:
        for key, value in values.items():
            if key in _BATCH_KEYS:
                batch[_BATCH_KEYS[key]] = int(value)
            elif key in _POLICY_KEYS:
                policy[key] = str(value)
            elif key == "lr_schedule":
                top[key] = parse_schedule(value)
            elif key in ("learning_rate", "margin", "adagrad_epsilon"):
                top[key] = float(value)
            elif key in ("steps", "checkpoint_every", "eval_every", "seed") and key in scalar:
                top[key] = int(value)
            else:
                leftover[key] = value
        cfg = replace(base, batch=replace(base.batch, **batch),
                      policy=replace(base.policy, **policy), **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg, leftover


def train_config_to_mapping(cfg):
    return {
        "learning_rate": cfg.learning_rate, "margin": cfg.margin, "steps": cfg.steps,
        "faces_per_identity": cfg.batch.faces_per_identity,
        "identities_per_batch": cfg.batch.identities_per_batch,
        "random_negatives": cfg.batch.random_negatives, "batch_seed": cfg.batch.seed,
        "negative_mode": cfg.policy.negative_mode, "positive_mode": cfg.policy.positive_mode,
        "adagrad_epsilon": cfg.adagrad_epsilon,
        "lr_schedule": ",".join(f"{s}:{r!r}" for s, r in cfg.lr_schedule),
        "checkpoint_every": cfg.checkpoint_every, "eval_every": cfg.eval_every,
        "seed": cfg.seed,
    }
