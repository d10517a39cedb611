"""Dense embedding network with an L2-normalization head.

The network is ``affine -> relu -> ... -> affine -> l2_normalize``. Forward
passes return a trace that holds everything backprop needs, and backprop
is written out by hand (no autograd).
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptCheckpoint, DimMismatch, InvalidConfig, ShapeMismatch, ZeroVector
from .geometry import ZERO_NORM

CHECKPOINT_MAGIC = b"TNET"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    hidden_dims: tuple = ()
    embedding_dim: int = 128
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim <= 0 or any(h <= 0 for h in self.hidden_dims):
            raise InvalidConfig(f"layer dims must be positive: {self.layer_dims}")
        if self.embedding_dim < 2:
            raise InvalidConfig(f"embedding_dim must be >= 2, got {self.embedding_dim}")
        if not self.init_scale > 0:
            raise InvalidConfig(f"init_scale must be positive, got {self.init_scale}")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.embedding_dim)


@dataclass
class ParamGrads:
    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def arrays(self):
        return [*self.weights, *self.biases]

    def max_abs(self):
        return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in self.arrays())


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    preacts: list  # affine outputs of every hidden layer, before relu
    hiddens: list  # relu outputs; hiddens[k] feeds layer k + 1
    raw: np.ndarray  # output of the last affine layer
    norms: np.ndarray  # row norms of raw
    embeddings: np.ndarray


@dataclass
class EmbeddingNet:
    weights: list
    biases: list
    config: NetConfig = field(default=None)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidConfig("need matching, nonempty weight and bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidConfig(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise InvalidConfig(f"layer {k} input {w.shape[1]} != previous output "
                                    f"{self.weights[k - 1].shape[0]}")
        dims = (self.weights[0].shape[1], *(w.shape[0] for w in self.weights))
        if self.config is None:
            self.config = NetConfig(dims[0], dims[1:-1], dims[-1])
        elif self.config.layer_dims != dims:
            raise InvalidConfig(f"config dims {self.config.layer_dims} != layer dims {dims}")

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def embedding_dim(self):
        return self.weights[-1].shape[0]

    @property
    def num_layers(self):
        return len(self.weights)

    def arrays(self):
        """Parameter arrays in the same order as ``ParamGrads.arrays``."""
        return [*self.weights, *self.biases]

    def copy(self):
        return EmbeddingNet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                            self.config)

    def same_params(self, other):
        return all(a.shape == b.shape and np.array_equal(a, b)
                   for a, b in zip(self.arrays(), other.arrays()))


def new_network(config):
    """Fan-in scaled uniform weights, zero biases, seeded by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    dims = config.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = config.init_scale / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EmbeddingNet(weights, biases, config)


def reinit_last_layer(net, seed):
    """Copy of ``net`` whose final affine layer is drawn afresh (same init rule)."""
    out = net.copy()
    w = out.weights[-1]
    bound = net.config.init_scale / np.sqrt(w.shape[1])
    out.weights[-1] = np.random.default_rng(seed).uniform(-bound, bound, size=w.shape)
    out.biases[-1] = np.zeros_like(out.biases[-1])
    return out


def embed_batch(net, inputs):
    """Forward pass. Returns ``(embeddings, trace)``; embeddings are unit rows."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimMismatch(f"inputs of shape {x.shape} do not match input_dim {net.input_dim}")
    preacts, hiddens = [], []
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w.T + b
        preacts.append(z)
        h = np.maximum(z, 0.0)
        hiddens.append(h)
    raw = h @ net.weights[-1].T + net.biases[-1]
    norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
    bad = np.flatnonzero(~(norms >= ZERO_NORM))
    if bad.size:
        raise ZeroVector(f"network output for row {bad[0]} has norm {norms[bad[0]]:.3g} "
                         "(collapsed model)")
    emb = raw / norms[:, None]
    return emb, ForwardTrace(x, preacts, hiddens, raw, norms, emb)


def embed(net, inputs, chunk=4096):
    """Embeddings only, computed in chunks to bound trace memory."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[0] == 0:
        return np.zeros((0, net.embedding_dim))
    return np.concatenate([embed_batch(net, x[i:i + chunk])[0]
                           for i in range(0, x.shape[0], chunk)])


def backprop(net, trace, grad_wrt_embeddings):
    """Parameter gradients given d(loss)/d(embeddings).

    Through the normalization head the gradient is ``(I - y y^T) g / |x|``;
    relu passes gradient only where the pre-activation is strictly positive.
    """
    g = np.asarray(grad_wrt_embeddings, dtype=np.float64)
    if g.shape != trace.embeddings.shape:
        raise ShapeMismatch(f"gradient shape {g.shape} != embeddings {trace.embeddings.shape}")
    if len(trace.preacts) != net.num_layers - 1 or trace.inputs.shape[1] != net.input_dim:
        raise ShapeMismatch("trace was not produced by this network")
    y = trace.embeddings
    radial = np.einsum("ij,ij->i", y, g)
    delta = (g - y * radial[:, None]) / trace.norms[:, None]

    grads = ParamGrads([None] * net.num_layers, [None] * net.num_layers)
    layer_inputs = [trace.inputs, *trace.hiddens]
    for k in range(net.num_layers - 1, -1, -1):
        grads.weights[k] = delta.T @ layer_inputs[k]
        grads.biases[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ net.weights[k]) * (trace.preacts[k - 1] > 0.0)
    return grads


def save_checkpoint(net):
    """Serialize to bytes: magic, version, layer count, layers, CRC32 of payload."""
    parts = [struct.pack("<II", CHECKPOINT_VERSION, net.num_layers)]
    for w, b in zip(net.weights, net.biases):
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    payload = b"".join(parts)
    return CHECKPOINT_MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


def load_checkpoint(data, config=None):
    """Inverse of ``save_checkpoint``; raises CorruptCheckpoint on any damage."""
    data = bytes(data)
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("bad magic or file too short")
    payload, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise CorruptCheckpoint("CRC mismatch")
    version, count = struct.unpack_from("<II", payload, 0)
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"unsupported version {version}")
    if count == 0:
        raise CorruptCheckpoint("no layers")
    pos = 8
    weights, biases = [], []
    try:
        for _ in range(count):
            out, inp = struct.unpack_from("<II", payload, pos)
            pos += 8
            n = out * inp * 8
            if pos + n + out * 8 > len(payload):
                raise CorruptCheckpoint("truncated layer data")
            weights.append(np.frombuffer(payload, "<f8", out * inp, pos).reshape(out, inp)
                           .astype(np.float64))
            pos += n
            biases.append(np.frombuffer(payload, "<f8", out, pos).astype(np.float64))
            pos += out * 8
    except struct.error as exc:
        raise CorruptCheckpoint(f"truncated header: {exc}") from None
    if pos != len(payload):
        raise CorruptCheckpoint(f"{len(payload) - pos} trailing bytes")
    try:
        return EmbeddingNet(weights, biases, config)
    except InvalidConfig as exc:
        raise CorruptCheckpoint(f"layer shapes do not chain: {exc}") from None


def write_checkpoint(path, net):
    with open(path, "wb") as fh:
        fh.write(save_checkpoint(net))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        return load_checkpoint(fh.read())
