"""Synthetic identity data, identity-disjoint splits and the TVEC vector format."""

import csv
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CorruptFile, InvalidSpec, TooFewIdentities
from .geometry import l2_normalize

VECTOR_MAGIC = b"TVEC"
VECTOR_VERSION = 1
TRAIN, HOLDOUT = "train", "holdout"

# The first lift layer stretches LIFT_STRETCHED latent directions by
# LIFT_ANISOTROPY; those directions swamp input-space distances, so raw
# Euclidean geometry is a poor identity signal until a network undoes it.
LIFT_ANISOTROPY = 30.0
LIFT_STRETCHED = 2
# Bias offset in units of each unit's weight norm; keeps most relus active
# so the lift is close to affine on the data.
LIFT_BIAS = 5.0
LIFT_REFERENCE = 4096


@dataclass(frozen=True)
class SyntheticSpec:
    num_identities: int = 50
    samples_per_identity: int = 30
    latent_dim: int = 8
    input_dim: int = 64
    noise_sigma: float = 0.15
    distortion_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_identities < 1 or self.samples_per_identity < 1:
            raise InvalidSpec("num_identities and samples_per_identity must be positive")
        if self.latent_dim < 2:
            raise InvalidSpec("latent_dim must be at least 2")
        if self.input_dim < self.latent_dim:
            raise InvalidSpec("input_dim must be >= latent_dim")
        if not self.noise_sigma >= 0:
            raise InvalidSpec("noise_sigma must be nonnegative")
        if self.distortion_layers < 1:
            raise InvalidSpec("distortion_layers must be at least 1")


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: np.ndarray = None  # per-sample TRAIN / HOLDOUT tag, or None before splitting
    latents: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or len(self.labels) != self.inputs.shape[0]:
            raise InvalidSpec(f"{self.inputs.shape} inputs vs {self.labels.shape} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def identities(self):
        return np.unique(self.labels)

    def subset(self, rows):
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return Dataset(self.inputs[rows], self.labels[rows],
                       None if self.split is None else self.split[rows],
                       None if self.latents is None else self.latents[rows])

    def rows(self, tag):
        if self.split is None:
            raise TooFewIdentities("dataset has not been split")
        return np.flatnonzero(self.split == tag)

    def part(self, tag):
        return self.subset(self.rows(tag))


def _lift(spec, rng):
    """Random affine+relu layers mapping latent space into input space."""
    layers = []
    fan_in = spec.latent_dim
    for k in range(spec.distortion_layers):
        if k == 0:
            q, _ = np.linalg.qr(rng.standard_normal((spec.input_dim, fan_in)))
            r, _ = np.linalg.qr(rng.standard_normal((fan_in, fan_in)))
            s = np.ones(fan_in)
            s[fan_in - min(LIFT_STRETCHED, fan_in):] = LIFT_ANISOTROPY
            w = np.sqrt(spec.input_dim / fan_in) * (q * s) @ r
        else:
            w = rng.standard_normal((spec.input_dim, fan_in)) * np.sqrt(2.0 / fan_in)
        b = rng.standard_normal(spec.input_dim) * 0.5 + LIFT_BIAS * np.sqrt(np.sum(w * w, axis=1))
        layers.append((w, b))
        fan_in = spec.input_dim
    # fixed output standardization, measured on a reference draw of latents
    ref = _apply(layers, l2_normalize(rng.standard_normal((LIFT_REFERENCE, spec.latent_dim))))
    return layers, ref.mean(axis=0), ref.std(axis=0) + 1e-3


def _apply(layers, h):
    for w, b in layers:
        h = np.maximum(h @ w.T + b, 0.0)
    return h


def generate_synthetic(spec):
    """Identities as random latent unit vectors, samples as noisy copies pushed
    through a fixed random relu lift into input space.

    ``noise_sigma`` is the RMS length of the latent perturbation, so each
    latent component gets ``sigma / sqrt(latent_dim)``.
    """
    rng = np.random.default_rng(spec.seed)
    layers, shift, scale = _lift(spec, rng)
    centers = l2_normalize(rng.standard_normal((spec.num_identities, spec.latent_dim)))
    labels = np.repeat(np.arange(spec.num_identities), spec.samples_per_identity)
    noise = rng.standard_normal((len(labels), spec.latent_dim))
    latents = l2_normalize(centers[labels] + noise * (spec.noise_sigma / np.sqrt(spec.latent_dim)))
    inputs = (_apply(layers, latents) - shift) / scale
    return Dataset(inputs, labels, None, latents)


def split_by_identity(dataset, holdout_fraction, seed):
    """Tag whole identities as holdout; the rest are train.

    The holdout count is ``round(fraction * identities)`` clamped so both
    sides keep at least one identity.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise InvalidSpec(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    ids = dataset.identities
    if len(ids) < 2:
        raise TooFewIdentities(f"need at least 2 identities, got {len(ids)}")
    n_hold = min(max(int(round(holdout_fraction * len(ids))), 1), len(ids) - 1)
    held = np.random.default_rng(seed).choice(ids, size=n_hold, replace=False)
    split = np.where(np.isin(dataset.labels, held), HOLDOUT, TRAIN)
    return replace(dataset, split=split)


def encode_vectors(matrix, labels=None):
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1 and m.size == 0:
        m = m.reshape(0, 0)
    if m.ndim != 2:
        raise InvalidSpec(f"expected a 2-D matrix, got shape {m.shape}")
    has_labels = labels is not None
    parts = [struct.pack("<IIIB", VECTOR_VERSION, m.shape[0], m.shape[1], int(has_labels)),
             np.ascontiguousarray(m, dtype="<f4").tobytes()]
    if has_labels:
        lab = np.asarray(labels)
        if lab.shape != (m.shape[0],) or (lab.size and lab.min() < 0):
            raise InvalidSpec("labels must be one nonnegative id per row")
        parts.append(lab.astype("<u4").tobytes())
    payload = b"".join(parts)
    return VECTOR_MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


def decode_vectors(data):
    """Return ``(matrix as float64, labels or None)``; raises CorruptFile."""
    data = bytes(data)
    if len(data) < 4 + 13 + 4 or data[:4] != VECTOR_MAGIC:
        raise CorruptFile("bad magic or file too short")
    payload, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise CorruptFile("CRC mismatch")
    version, count, dim, has_labels = struct.unpack_from("<IIIB", payload, 0)
    if version != VECTOR_VERSION or has_labels not in (0, 1):
        raise CorruptFile(f"unsupported header (version {version}, labels flag {has_labels})")
    expected = 13 + 4 * count * dim + 4 * count * has_labels
    if len(payload) != expected:
        raise CorruptFile(f"payload is {len(payload)} bytes, header implies {expected}")
    m = np.frombuffer(payload, "<f4", count * dim, 13).reshape(count, dim).astype(np.float64)
    labels = None
    if has_labels:
        labels = np.frombuffer(payload, "<u4", count, 13 + 4 * count * dim).astype(np.int64)
    return m, labels


def write_vectors(path, matrix, labels=None):
    with open(path, "wb") as fh:
        fh.write(encode_vectors(matrix, labels))


def read_vectors(path):
    with open(path, "rb") as fh:
        return decode_vectors(fh.read())


def write_manifest(path, labels, split=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "identity_id"] + (["split"] if split is not None else []))
        for i, lab in enumerate(np.asarray(labels).tolist()):
            w.writerow([i, lab] + ([split[i]] if split is not None else []))


def read_manifest(path):
    """Return ``(labels, split or None)`` indexed by sample id."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        ids = [int(r["sample_id"]) for r in rows]
        labels = np.array([int(r["identity_id"]) for r in rows], dtype=np.int64)
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"bad manifest row: {exc}") from None
    if ids != list(range(len(ids))):
        raise CorruptFile("manifest sample ids must be 0..N-1 in order")
    split = None
    if rows and "split" in rows[0]:
        split = np.array([r["split"] for r in rows])
    return labels, split


def save_dataset(prefix, dataset):
    """Write ``<prefix>.tvec`` (inputs + labels) and ``<prefix>.csv`` manifest."""
    write_vectors(f"{prefix}.tvec", dataset.inputs, dataset.labels)
    write_manifest(f"{prefix}.csv", dataset.labels, dataset.split)
    return [f"{prefix}.tvec", f"{prefix}.csv"]


def load_dataset(vectors_path, manifest_path=None):
    inputs, labels = read_vectors(vectors_path)
    split = None
    if manifest_path is not None:
        m_labels, split = read_manifest(manifest_path)
        if labels is None:
            labels = m_labels
        elif not np.array_equal(labels, m_labels):
            raise CorruptFile("manifest labels disagree with vector file labels")
    if labels is None:
        raise CorruptFile("no labels in vector file and no manifest given")
    return Dataset(inputs, labels, split)
