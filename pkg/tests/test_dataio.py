import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripletspace.dataio import (HOLDOUT, TRAIN, Dataset, SyntheticSpec, decode_vectors,
                                 encode_vectors, generate_synthetic, load_dataset, read_manifest,
                                 read_vectors, save_dataset, split_by_identity, write_manifest,
                                 write_vectors)
from tripletspace.errors import CorruptFile, InvalidSpec, TooFewIdentities


class TestSynthetic:
    def test_shapes(self):
        ds = generate_synthetic(SyntheticSpec(num_identities=4, samples_per_identity=3,
                                              latent_dim=3, input_dim=7))
        assert ds.inputs.shape == (12, 7)
        assert ds.labels.tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]

    def test_zero_noise_collapses_identity(self):
        ds = generate_synthetic(SyntheticSpec(num_identities=3, samples_per_identity=4,
                                              noise_sigma=0.0))
        for ident in range(3):
            rows = ds.inputs[ds.labels == ident]
            np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))

    def test_deterministic(self):
        spec = SyntheticSpec(num_identities=5, samples_per_identity=4, seed=11)
        np.testing.assert_array_equal(generate_synthetic(spec).inputs,
                                      generate_synthetic(spec).inputs)

    def test_latents_cluster_by_identity(self):
        ds = generate_synthetic(SyntheticSpec())
        lat, labels = ds.latents, ds.labels
        d = np.sum((lat[:, None] - lat[None]) ** 2, axis=-1)
        same = labels[:, None] == labels[None]
        off = ~np.eye(len(labels), dtype=bool)
        assert d[same & off].mean() < d[~same].mean()

    def test_latents_on_sphere(self):
        ds = generate_synthetic(SyntheticSpec(num_identities=5, samples_per_identity=4))
        np.testing.assert_allclose(np.linalg.norm(ds.latents, axis=1), 1.0)

    def test_sigma_sets_latent_spread(self):
        # sigma is the RMS length of the latent perturbation before renormalizing
        ds = generate_synthetic(SyntheticSpec(num_identities=200, samples_per_identity=20,
                                              noise_sigma=0.1))
        centers = np.array([ds.latents[ds.labels == k].mean(0) for k in range(200)])
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        rms = np.sqrt(np.mean(np.sum((ds.latents - centers[ds.labels]) ** 2, axis=1)))
        assert 0.08 < rms < 0.12

    @pytest.mark.parametrize("kw", [dict(num_identities=0), dict(latent_dim=1),
                                    dict(input_dim=4, latent_dim=8), dict(noise_sigma=-0.1),
                                    dict(distortion_layers=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidSpec):
            SyntheticSpec(**kw)


class TestSplit:
    def test_half(self):
        ds = generate_synthetic(SyntheticSpec(num_identities=10, samples_per_identity=2))
        out = split_by_identity(ds, 0.5, 3)
        held = np.unique(out.labels[out.split == HOLDOUT])
        kept = np.unique(out.labels[out.split == TRAIN])
        assert len(held) == len(kept) == 5
        assert not set(held) & set(kept)

    def test_deterministic(self):
        ds = generate_synthetic(SyntheticSpec(num_identities=10, samples_per_identity=2))
        np.testing.assert_array_equal(split_by_identity(ds, 0.3, 1).split,
                                      split_by_identity(ds, 0.3, 1).split)

    @settings(max_examples=40)
    @given(st.integers(2, 30), st.floats(0.01, 0.99), st.integers(0, 1000))
    def test_disjoint(self, n_ids, frac, seed):
        ds = Dataset(np.zeros((n_ids * 2, 1)), np.repeat(np.arange(n_ids), 2))
        out = split_by_identity(ds, frac, seed)
        held = set(out.labels[out.split == HOLDOUT].tolist())
        kept = set(out.labels[out.split == TRAIN].tolist())
        assert held and kept and not held & kept

    def test_single_identity(self):
        with pytest.raises(TooFewIdentities):
            split_by_identity(Dataset(np.zeros((3, 1)), np.zeros(3)), 0.5, 0)

    def test_bad_fraction(self):
        with pytest.raises(InvalidSpec):
            split_by_identity(Dataset(np.zeros((3, 1)), np.arange(3)), 1.0, 0)

    def test_part(self):
        ds = split_by_identity(generate_synthetic(SyntheticSpec(num_identities=6,
                                                                samples_per_identity=2)), 0.5, 0)
        assert len(ds.part(TRAIN)) + len(ds.part(HOLDOUT)) == len(ds)


class TestVectorFile:
    def test_round_trip_f32_exact(self, tmp_path, rng):
        m = rng.standard_normal((6, 5))
        write_vectors(tmp_path / "v.tvec", m, np.arange(6))
        back, labels = read_vectors(tmp_path / "v.tvec")
        np.testing.assert_array_equal(back, m.astype(np.float32).astype(np.float64))
        assert labels.tolist() == list(range(6))

    def test_without_labels(self, rng):
        back, labels = decode_vectors(encode_vectors(rng.standard_normal((2, 3))))
        assert labels is None and back.shape == (2, 3)

    def test_empty(self):
        back, labels = decode_vectors(encode_vectors(np.zeros((0, 4))))
        assert back.shape == (0, 4) and labels is None

    def test_layout(self):
        blob = encode_vectors(np.ones((2, 3)), [1, 2])
        assert blob[:4] == b"TVEC"
        assert len(blob) == 4 + 13 + 24 + 8 + 4

    def test_every_payload_flip_detected(self, rng):
        blob = encode_vectors(rng.standard_normal((3, 2)), [0, 1, 2])
        for pos in range(4, len(blob)):
            bad = bytearray(blob)
            bad[pos] ^= 0x01
            with pytest.raises(CorruptFile):
                decode_vectors(bytes(bad))

    def test_truncation(self, rng):
        blob = encode_vectors(rng.standard_normal((3, 2)))
        with pytest.raises(CorruptFile):
            decode_vectors(blob[:-3])


class TestManifest:
    def test_round_trip(self, tmp_path):
        write_manifest(tmp_path / "m.csv", [3, 3, 1], np.array([TRAIN, TRAIN, HOLDOUT]))
        assert (tmp_path / "m.csv").read_text().splitlines()[0] == "sample_id,identity_id,split"
        labels, split = read_manifest(tmp_path / "m.csv")
        assert labels.tolist() == [3, 3, 1] and split.tolist() == [TRAIN, TRAIN, HOLDOUT]

    def test_out_of_order_ids(self, tmp_path):
        (tmp_path / "m.csv").write_text("sample_id,identity_id\n1,0\n0,0\n")
        with pytest.raises(CorruptFile):
            read_manifest(tmp_path / "m.csv")

    def test_dataset_round_trip(self, tmp_path):
        ds = split_by_identity(generate_synthetic(SyntheticSpec(num_identities=4,
                                                                samples_per_identity=3)), 0.5, 0)
        vec, man = save_dataset(tmp_path / "d", ds)
        back = load_dataset(vec, man)
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.split, ds.split)

    def test_disagreeing_labels(self, tmp_path):
        write_vectors(tmp_path / "v.tvec", np.zeros((2, 2)), [0, 1])
        write_manifest(tmp_path / "m.csv", [1, 1])
        with pytest.raises(CorruptFile):
            load_dataset(tmp_path / "v.tvec", tmp_path / "m.csv")
