import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import linkage_loop, pair_counts_f1, same_partition
from tripletspace.cluster import agglomerative_cluster, canonical_labels, pairwise_f1
from tripletspace.errors import EmptyInput, LabelMismatch
from tripletspace.geometry import l2_normalize


def blobs(rng, n_per=6, spread=0.05):
    a = l2_normalize(np.array([1.0, 0.0, 0.0]) + spread * rng.standard_normal((n_per, 3)))
    b = l2_normalize(np.array([-1.0, 0.0, 0.0]) + spread * rng.standard_normal((n_per, 3)))
    return np.concatenate([a, b]), np.repeat([0, 1], n_per)


class TestAgglomerative:
    def test_cutoff_zero_gives_singletons(self, rng):
        x = l2_normalize(rng.standard_normal((7, 3)))
        res = agglomerative_cluster(x, 0.0)
        assert res.num_clusters == 7

    def test_one_sample(self):
        res = agglomerative_cluster(np.array([[1.0, 0.0]]), 1.0)
        assert res.num_clusters == 1 and res.assignments.tolist() == [0]

    def test_antipodal_blobs(self, rng):
        x, truth = blobs(rng)
        res = agglomerative_cluster(x, 1.0, "average")
        assert res.num_clusters == 2
        assert same_partition(res.assignments, truth)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            agglomerative_cluster(np.zeros((0, 3)), 1.0)

    def test_unknown_linkage(self, rng):
        with pytest.raises(ValueError):
            agglomerative_cluster(rng.standard_normal((3, 2)), 1.0, "ward")

    def test_labels_canonical(self):
        assert canonical_labels([5, 5, 2, 9, 2]).tolist() == [0, 0, 1, 2, 1]

    @pytest.mark.parametrize("linkage", ["single", "average", "complete"])
    def test_matches_recomputing_oracle(self, rng, linkage):
        for _ in range(10):
            x = l2_normalize(rng.standard_normal((14, 3)))
            cutoff = rng.uniform(0.2, 2.5)
            res = agglomerative_cluster(x, cutoff, linkage)
            np.testing.assert_array_equal(res.assignments, linkage_loop(x, cutoff, linkage))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["single", "average", "complete"]))
    def test_larger_cutoff_coarsens(self, seed, linkage):
        r = np.random.default_rng(seed)
        x = l2_normalize(r.standard_normal((20, 3)))
        lo, hi = np.sort(r.uniform(0, 3, 2))
        fine = agglomerative_cluster(x, lo, linkage).assignments
        coarse = agglomerative_cluster(x, hi, linkage).assignments
        # every fine cluster lies inside one coarse cluster
        for c in np.unique(fine):
            assert len(np.unique(coarse[fine == c])) == 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, seed):
        r = np.random.default_rng(seed)
        x = l2_normalize(r.standard_normal((20, 3)))
        perm = r.permutation(20)
        a = agglomerative_cluster(x, 1.0).assignments
        b = agglomerative_cluster(x[perm], 1.0).assignments
        assert same_partition(a[perm], b)

    def test_csv(self, tmp_path, rng):
        res = agglomerative_cluster(l2_normalize(rng.standard_normal((3, 2))), 0.0)
        res.write_csv(tmp_path / "c.csv", [10, 11, 12])
        assert (tmp_path / "c.csv").read_text() == "sample_id,cluster_id\n10,0\n11,1\n12,2\n"


class TestPairwiseF1:
    def test_identical_partition(self):
        assert pairwise_f1([3, 3, 1, 1, 2], [0, 0, 5, 5, 7]) == (1.0, 1.0, 1.0)

    def test_singletons(self):
        assert pairwise_f1([0, 1, 2, 3], [0, 0, 1, 1]) == (1.0, 0.0, 0.0)

    def test_hand_enumeration(self):
        p, r, f1 = pairwise_f1([0, 0, 0, 1], ["a", "a", "b", "b"])
        assert (p, r, f1) == pytest.approx((1 / 3, 1 / 2, 2 / 5))

    def test_label_mismatch(self):
        with pytest.raises(LabelMismatch):
            pairwise_f1([0, 1], [0, 1, 2])

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=25))
    def test_matches_pair_enumeration(self, rows):
        pred, truth = map(list, zip(*rows))
        assert pairwise_f1(pred, truth) == pytest.approx(pair_counts_f1(pred, truth))
