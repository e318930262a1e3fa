import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import spearmanr

from quadloss.core import pairwise_dissimilarity, semantic_dissimilarity
from quadloss.data import (Dataset, DatasetFormatError, DatasetHeader, SplitWarning, SyntheticSpec,
                           generate_synthetic, load_dataset, save_dataset, split)

HEADER = DatasetHeader(2, (3, 2), ("ID", "gender"))


def small():
    return Dataset(HEADER, [0, 1, 2], [[0, 1], [1, 0], [2, 1]],
                   [[0.5, -1.0], [1e-17, 3.0], [2.25, 0.1]])


def write(tmp_path, rows, n=2, cards="3,2", names="ID,gender"):
    text = ["#quadloss-dataset v1", f"n={n}", "t=2", f"cardinalities={cards}",
            f"names={names}", f"rows={len(rows)}", "id,ID,gender,f0,f1", *rows]
    path = tmp_path / "d.txt"
    path.write_text("\n".join(text) + "\n")
    return path


def upper(a):
    return a[np.triu_indices(len(a), 1)]


class TestFileFormat:
    def test_three_rows(self, tmp_path):
        ds = load_dataset(write(tmp_path, ["0,0,1,0.5,1", "1,1,0,2,3", "2,2,1,4,5"]))
        assert len(ds) == 3
        assert ds[1].labels.labels == (1, 0)

    def test_round_trip(self, tmp_path):
        ds = small()
        save_dataset(ds, tmp_path / "x.txt")
        assert load_dataset(tmp_path / "x.txt") == ds

    def test_cardinality_violation_names_row_and_dim(self, tmp_path):
        path = write(tmp_path, ["0,0,1,0.5,1", "1,1,2,2,3"])
        with pytest.raises(DatasetFormatError, match=r"line 9.*gender") as info:
            load_dataset(path)
        assert "dimension 1" in str(info.value)

    def test_duplicate_id(self, tmp_path):
        with pytest.raises(DatasetFormatError, match="line 9.*duplicate"):
            load_dataset(write(tmp_path, ["0,0,1,0.5,1", "0,1,0,2,3"]))

    def test_field_count(self, tmp_path):
        with pytest.raises(DatasetFormatError, match="line 8"):
            load_dataset(write(tmp_path, ["0,0,1,0.5"]))

    def test_non_finite(self, tmp_path):
        with pytest.raises(DatasetFormatError, match="line 8"):
            load_dataset(write(tmp_path, ["0,0,1,nan,1"]))

    def test_header_names_id(self):
        with pytest.raises(ValueError):
            DatasetHeader(2, (3, 2), ("person", "gender"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "absent.txt")

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 1000), st.integers(2, 6), st.integers(1, 4))
    def test_round_trip_generated(self, tmp_path_factory, seed, ids, per):
        ds = generate_synthetic(SyntheticSpec(identities=ids, samples_per_identity=per,
                                              feature_dim=5), seed).dataset
        path = tmp_path_factory.mktemp("rt") / "d.txt"
        save_dataset(ds, path)
        assert load_dataset(path) == ds


class TestSynthetic:
    def test_counts(self):
        ds = generate_synthetic(SyntheticSpec(identities=4, samples_per_identity=5), 0).dataset
        assert len(ds) == 20
        assert ds.header.t == 3

    def test_deterministic(self):
        a = generate_synthetic(SyntheticSpec(), 3).dataset
        b = generate_synthetic(SyntheticSpec(), 3).dataset
        assert a == b
        assert not (a == generate_synthetic(SyntheticSpec(), 4).dataset)

    def test_semantic_centroids_when_rho_one(self):
        syn = generate_synthetic(SyntheticSpec(identities=30, rho=1.0), 0)
        diff = syn.centroids[:, None] - syn.centroids[None]
        d = np.einsum("ijk,ijk->ij", diff, diff)
        rho, _ = spearmanr(upper(d), upper(syn.identity_phi()))
        assert rho > 0.5

    def test_rho_zero_ignores_labels(self):
        rhos = []
        for seed in range(5):
            syn = generate_synthetic(SyntheticSpec(identities=30, rho=0.0), seed)
            diff = syn.centroids[:, None] - syn.centroids[None]
            d = np.einsum("ijk,ijk->ij", diff, diff)
            rhos.append(spearmanr(upper(d), upper(syn.identity_phi()))[0])
        assert abs(np.mean(rhos)) < 0.15

    def test_recorded_labels_reproduce_phi(self):
        syn = generate_synthetic(SyntheticSpec(identities=12), 1)
        phi = syn.identity_phi()
        ds = syn.dataset
        for a in range(12):
            for b in range(12):
                ra = ds.labels[ds.identities == a][0]
                rb = ds.labels[ds.identities == b][0]
                assert phi[a, b] == semantic_dissimilarity(ra, rb)
        # every sample carries its identity's label vector
        np.testing.assert_array_equal(ds.labels, syn.identity_labels[ds.identities])

    def test_balanced_rule_covers_combinations(self):
        syn = generate_synthetic(SyntheticSpec(identities=12, soft_cardinalities=(2, 3)), 0)
        combos = {tuple(r) for r in syn.identity_labels[:, 1:]}
        assert len(combos) == 6

    def test_needs_two_identities(self):
        with pytest.raises(ValueError):
            SyntheticSpec(identities=1)
        with pytest.raises(ValueError):
            SyntheticSpec(rho=1.5)


class TestSplit:
    def test_half(self):
        ds = generate_synthetic(SyntheticSpec(identities=2, samples_per_identity=5), 0).dataset
        tr, te = split(ds, 0.5, stratify_by_identity=False, seed=0)
        assert (len(tr), len(te)) == (5, 5)

    @pytest.mark.parametrize("stratify", [True, False])
    def test_partition(self, stratify):
        ds = generate_synthetic(SyntheticSpec(identities=5, samples_per_identity=7), 0).dataset
        tr, te = split(ds, 0.7, stratify, seed=1)
        assert set(tr.ids).isdisjoint(te.ids)
        assert sorted([*tr.ids, *te.ids]) == list(ds.ids)

    def test_deterministic(self):
        ds = generate_synthetic(SyntheticSpec(identities=5, samples_per_identity=7), 0).dataset
        a, _ = split(ds, 0.6, seed=4)
        b, _ = split(ds, 0.6, seed=4)
        assert a == b

    def test_stratified_keeps_each_identity_on_both_sides(self):
        ds = generate_synthetic(SyntheticSpec(identities=6, samples_per_identity=3), 0).dataset
        tr, te = split(ds, 0.95, seed=0)
        assert set(tr.identities) == set(te.identities) == set(range(6))

    def test_single_sample_identity_goes_to_train(self):
        ds = Dataset(DatasetHeader(1, (2,), ("ID",)), [0, 1, 2], [[0], [0], [1]], [[0.0], [1.0], [2.0]])
        with pytest.warns(SplitWarning):
            tr, te = split(ds, 0.5, seed=0)
        assert 2 in tr.ids and 2 not in te.ids

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            split(small(), 1.0)
