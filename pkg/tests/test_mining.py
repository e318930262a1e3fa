import numpy as np
import pytest

from quadloss.data import SyntheticSpec, generate_synthetic
from quadloss.mining import Batch, ConfigError, sample_batch, sample_minibatch, sample_triplets

import oracles


def support(mb):
    return {(frozenset(q[:2].tolist()), frozenset(q[2:].tolist())) for q in mb.quads}


class TestSampleBatch:
    def test_exhaustive(self):
        b = sample_batch(4, 4, np.random.default_rng(0))
        assert sorted(b.sample_indices.tolist()) == [0, 1, 2, 3]

    def test_distinct(self):
        b = sample_batch(1000, 64, np.random.default_rng(0))
        assert b.b == 64 and len(set(b.sample_indices.tolist())) == 64

    def test_deterministic(self):
        a = sample_batch(100, 10, np.random.default_rng(5)).sample_indices
        b = sample_batch(100, 10, np.random.default_rng(5)).sample_indices
        np.testing.assert_array_equal(a, b)

    def test_too_large(self):
        with pytest.raises(ConfigError):
            sample_batch(3, 4, np.random.default_rng(0))


class TestSampleMinibatch:
    def test_uniform_labels_degenerate(self):
        labels = np.zeros((6, 3), dtype=int)
        mb = sample_minibatch(Batch(np.arange(6)), labels, 8, np.random.default_rng(0))
        assert mb.degenerate and len(mb) == 0
        assert mb.attempts == 50 * 8

    def test_only_valid_pairing(self):
        # pairing {0,1}|{2,3} gives phi 0 vs 3; the other two pairings give 3 vs 3
        labels = np.array([[0, 0, 0], [0, 0, 0], [1, 1, 1], [2, 2, 2]])
        mb = sample_minibatch(Batch(np.arange(4)), labels, 5, np.random.default_rng(0))
        assert support(mb) == {(frozenset((2, 3)), frozenset((0, 1)))}
        assert support(mb) == oracles.valid_structures(labels.tolist())
        np.testing.assert_array_equal(mb.phi, [[3, 0]])

    def test_full_minibatch_on_synthetic(self):
        ds = generate_synthetic(SyntheticSpec(identities=10, samples_per_identity=10), 0).dataset
        rng = np.random.default_rng(1)
        mb = sample_minibatch(sample_batch(len(ds), 64, rng), ds.labels, 64, rng)
        assert len(mb) == 64 and not mb.degenerate

    def test_positions_are_batch_local(self):
        labels = np.random.default_rng(0).integers(0, 3, size=(50, 3))
        batch = Batch(np.arange(40, 48))
        mb = sample_minibatch(batch, labels, 20, np.random.default_rng(0))
        assert mb.quads.max() < 8
        local = labels[batch.sample_indices]
        for (i, j, p, q), (a, b) in zip(mb.quads, mb.phi):
            assert oracles.hamming(local[i], local[j]) == a
            assert oracles.hamming(local[p], local[q]) == b

    @pytest.mark.parametrize("seed", range(25))
    def test_support_equals_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        b = int(rng.integers(4, 9))
        labels = rng.integers(0, 2, size=(b, 3))
        expected = oracles.valid_structures(labels.tolist())
        mb = sample_minibatch(Batch(np.arange(b)), labels, max(len(expected), 1), rng,
                              max_attempts=200_000)
        assert support(mb) == expected
        assert np.all(mb.phi[:, 0] > mb.phi[:, 1])
        assert all(len(set(q.tolist())) == 4 for q in mb.quads)

    def test_deterministic(self):
        labels = np.random.default_rng(0).integers(0, 3, size=(30, 3))
        a = sample_minibatch(Batch(np.arange(30)), labels, 16, np.random.default_rng(9))
        b = sample_minibatch(Batch(np.arange(30)), labels, 16, np.random.default_rng(9))
        np.testing.assert_array_equal(a.quads, b.quads)

    def test_small_batch_degenerate(self):
        mb = sample_minibatch(Batch(np.arange(3)), np.array([[0], [1], [2]]), 4, np.random.default_rng(0))
        assert mb.degenerate

    def test_bad_s(self):
        with pytest.raises(ConfigError):
            sample_minibatch(Batch(np.arange(4)), np.zeros((4, 1)), 0, np.random.default_rng(0))


class TestSampleTriplets:
    def test_identity_structure(self):
        ident = np.repeat(np.arange(4), 3)
        labels = np.column_stack([ident, np.zeros(12, int)])
        tb = sample_triplets(Batch(np.arange(12)), labels, 20, np.random.default_rng(0))
        a, p, n = tb.triplets.T
        assert np.all(ident[a] == ident[p]) and np.all(a != p) and np.all(ident[a] != ident[n])

    def test_no_positive_pairs(self):
        labels = np.arange(5)[:, None]
        assert sample_triplets(Batch(np.arange(5)), labels, 4, np.random.default_rng(0)).degenerate

    def test_semi_hard_band(self):
        ident = np.array([0, 0, 1, 1, 2])
        emb = np.array([[0.0], [1.0], [1.05], [5.0], [0.5]])
        tb = sample_triplets(Batch(np.arange(5)), ident[:, None], 30, np.random.default_rng(0),
                             embeddings=emb, margin=0.5, semi_hard=True)
        for a, p, n in tb.triplets:
            d_ap = (emb[a] - emb[p]) ** 2
            d_an = (emb[a] - emb[n]) ** 2
            band = [(emb[a] - emb[k]) ** 2 for k in range(5) if ident[k] != ident[a]]
            if any(d_ap < x < d_ap + 0.5 for x in band):
                assert d_ap < d_an < d_ap + 0.5

    def test_semi_hard_needs_embeddings(self):
        with pytest.raises(ConfigError):
            sample_triplets(Batch(np.arange(4)), np.array([[0], [0], [1], [1]]), 2,
                            np.random.default_rng(0), semi_hard=True)
