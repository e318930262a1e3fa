import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadloss.core import DimensionError
from quadloss.evaluation import (EvalReport, EvaluationWarning, GalleryProbeSplit, ProtocolError,
                                 average_precision, bootstrap_eval, cmc_curve, dir_at_rank1,
                                 format_mean_std, knn_soft_labels, labelling_error, map_from_split,
                                 map_score, read_curve, semantic_retrieval, top_fraction,
                                 verification_roc, write_report)

import oracles


def random_split(seed, open_set=False):
    return GalleryProbeSplit(*oracles.random_instance(seed, open_set), open_set=open_set)


def as_lists(sp):
    return (sp.probe_embeddings.tolist(), sp.probe_labels[:, 0].tolist(),
            sp.gallery_embeddings.tolist(), sp.gallery_labels[:, 0].tolist())


SEEDS = range(50)


class TestROC:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_oracle(self, seed):
        sp = random_split(seed)
        try:
            curve = verification_roc(sp)
        except ProtocolError:
            pytest.skip("no impostor pair")
        assert curve.points() == oracles.roc(*as_lists(sp))
        assert np.all(np.diff(curve.x) >= 0) and np.all(np.diff(curve.y) >= 0)

    def test_perfect_separation(self):
        sp = GalleryProbeSplit([[0.0], [10.0]], [[0], [1]], [[0.1], [10.1]], [[0], [1]])
        assert (0.0, 1.0) in verification_roc(sp).points()

    def test_constant_scores(self):
        sp = GalleryProbeSplit([[0.0], [0.0]], [[0], [1]], [[0.0], [0.0]], [[0], [1]])
        assert verification_roc(sp).points() == [(0.0, 0.0), (1.0, 1.0)]

    def test_needs_both_kinds(self):
        with pytest.raises(ProtocolError):
            verification_roc(GalleryProbeSplit([[0.0]], [[0]], [[1.0]], [[0]]))


class TestCMC:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_oracle(self, seed):
        sp = random_split(seed)
        cmc = cmc_curve(sp)
        assert cmc.tolist() == oracles.cmc(*as_lists(sp))
        assert np.all(np.diff(cmc) >= 0) and cmc[-1] == 1.0

    def test_exact_mate_is_rank1(self):
        sp = GalleryProbeSplit([[0.0], [3.0]], [[0], [1]], [[3.0]], [[1]])
        assert cmc_curve(sp)[0] == 1.0

    def test_tie_breaks_by_gallery_index(self):
        sp = GalleryProbeSplit([[1.0], [-1.0]], [[0], [1]], [[0.0], [0.0]], [[0], [1]])
        np.testing.assert_array_equal(cmc_curve(sp), [0.5, 1.0])

    def test_missing_identity_closed_set(self):
        with pytest.raises(ProtocolError, match="not enrolled"):
            cmc_curve(GalleryProbeSplit([[0.0]], [[0]], [[1.0]], [[5]]))

    def test_top_fraction(self):
        cmc = np.linspace(0.1, 1.0, 25)
        assert top_fraction(cmc) == cmc[2]  # rank ceil(2.5) = 3


class TestDIR:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_oracle(self, seed):
        sp = random_split(seed, open_set=True)
        curve = dir_at_rank1(sp)
        nn = [min(oracles.sqdist(p, g) for g in sp.gallery_embeddings) for p in sp.probe_embeddings]
        grid = sorted({0.0, *nn})
        assert curve.points() == oracles.dir_curve(*as_lists(sp), grid)

    def test_limits(self):
        sp = random_split(3, open_set=True)
        closed = sp.probes(sp.genuine)
        far, dir_ = dir_at_rank1(sp, [np.inf]).points()[0]
        assert far == 1.0 and dir_ == cmc_curve(closed)[0]
        sp = GalleryProbeSplit([[0.0], [2.0]], [[0], [1]], [[0.5], [5.0]], [[0], [9]], open_set=True)
        assert dir_at_rank1(sp, [0.0]).points() == [(0.0, 0.0)]

    def test_needs_open_set(self):
        with pytest.raises(ProtocolError):
            dir_at_rank1(random_split(0))

    def test_open_set_needs_impostors(self):
        with pytest.raises(ProtocolError):
            GalleryProbeSplit([[0.0]], [[0]], [[1.0]], [[0]], open_set=True)


class TestMAP:
    def test_perfect(self):
        assert map_score([[1, 1, 0, 0], [1, 0, 0]]) == 1.0

    def test_single_relevant_at_rank_two(self):
        assert average_precision([0, 1]) == 0.5

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_oracle(self, seed):
        sp = random_split(seed)
        assert map_from_split(sp) == pytest.approx(oracles.mean_ap(*as_lists(sp)), rel=1e-12)

    def test_query_without_relevant_items_is_excluded(self):
        with pytest.warns(EvaluationWarning):
            assert map_score([[0, 1], [0, 0]]) == 0.5


class TestSoftLabels:
    def test_exact_match(self):
        sp = GalleryProbeSplit([[0.0], [5.0]], [[0, 1], [1, 0]], [[5.0]], [[1, 0]])
        assert knn_soft_labels(sp, [1]).tolist() == [[0]]

    def test_tie_lower_index(self):
        sp = GalleryProbeSplit([[1.0], [-1.0]], [[0, 1], [1, 0]], [[0.0]], [[0, 0]])
        assert knn_soft_labels(sp, [1]).tolist() == [[1]]

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_oracle(self, seed):
        sp = random_split(seed)
        pred = knn_soft_labels(sp, [1, 2])
        ref = oracles.nn_labels(sp.probe_embeddings.tolist(), sp.gallery_embeddings.tolist(),
                                sp.gallery_labels.tolist(), [1, 2])
        assert pred.tolist() == ref
        truth = sp.probe_labels[:, [1, 2]]
        assert labelling_error(pred, truth) == oracles.labelling_error(ref, truth.tolist())

    def test_labelling_error_examples(self):
        assert labelling_error([[1, 2]], [[1, 2]]) == 0.0
        assert labelling_error([[0, 0], [0, 0]], [[1, 1], [1, 1]]) == 1.0
        assert labelling_error([[0, 1], [0, 0]], [[0, 0], [1, 1]]) == 0.75

    def test_labelling_error_shape(self):
        with pytest.raises(DimensionError):
            labelling_error([[0, 1]], [[0]])


class TestBootstrap:
    def test_constant(self):
        res = bootstrap_eval(lambda s: 0.7, np.arange(20), trials=10, seed=1)
        assert res.mean == pytest.approx(0.7) and res.std == 0.0

    def test_single_trial(self):
        res = bootstrap_eval(np.mean, np.arange(10.0), trials=1, seed=0)
        assert res.std == 0.0 and res.mean == res.values[0]

    def test_matches_hand_resampling(self):
        data = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0])
        res = bootstrap_eval(np.mean, data, trials=10, fraction=0.9, seed=42)
        rng = np.random.default_rng(42)
        expected = [float(np.mean(data[rng.integers(0, 10, size=9)])) for _ in range(10)]
        assert list(res.values) == expected
        assert res.mean == pytest.approx(sum(expected) / 10)
        assert res.std == pytest.approx(oracles.sample_std(expected))

    def test_deterministic_and_list_input(self):
        a = bootstrap_eval(len, list(range(7)), seed=3)
        b = bootstrap_eval(len, list(range(7)), seed=3)
        assert a == b and a.values[0] == 6

    def test_format(self):
        assert format_mean_std(0.958, 0.003) == "0.958 ± 3e-3"
        assert format_mean_std(0.5, 0.0) == "0.500 ± 0"
        assert format_mean_std(0.812, 0.0234) == "0.812 ± 0.023"


class TestSemanticRetrieval:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_oracle(self, seed):
        sp = random_split(seed)
        rng = np.random.default_rng(seed + 1000)
        criteria = [{1: int(rng.integers(0, 2))} if rng.random() < 0.7 else {} for _ in sp.probe_labels]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EvaluationWarning)
            hp = semantic_retrieval(sp, criteria)
        pen, hit = oracles.hit_penetration(sp.probe_embeddings.tolist(), sp.probe_labels.tolist(),
                                           sp.gallery_embeddings.tolist(), sp.gallery_labels.tolist(),
                                           criteria)
        assert hp.penetration.tolist() == pen and hp.hit.tolist() == hit
        base = semantic_retrieval(sp)
        ref = oracles.hit_penetration(sp.probe_embeddings.tolist(), sp.probe_labels.tolist(),
                                      sp.gallery_embeddings.tolist(), sp.gallery_labels.tolist(), None)
        assert base.hit.tolist() == ref[1]
        assert np.all((0 <= base.hit) & (base.hit <= 1))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_truthful_filter_dominates(self, seed):
        sp = random_split(seed)
        # soft label 1 becomes a function of identity, as with real attributes
        g_lab, p_lab = sp.gallery_labels.copy(), sp.probe_labels.copy()
        g_lab[:, 1], p_lab[:, 1] = g_lab[:, 0] % 2, p_lab[:, 0] % 2
        sp = GalleryProbeSplit(sp.gallery_embeddings, g_lab, sp.probe_embeddings, p_lab)
        truthful = [{1: int(r[1])} for r in p_lab]
        assert np.all(semantic_retrieval(sp, truthful).hit >= semantic_retrieval(sp).hit)

    def test_vacuous_filter_is_identical(self):
        sp = random_split(7)
        base = semantic_retrieval(sp)
        for vacuous in ({}, [{}] * len(sp.probe_labels)):
            hp = semantic_retrieval(sp, vacuous)
            assert np.array_equal(hp.hit, base.hit) and np.array_equal(hp.penetration, base.penetration)

    def test_empty_filtered_gallery_is_flagged(self):
        sp = GalleryProbeSplit([[0.0], [1.0]], [[0, 0], [1, 0]], [[0.0]], [[0, 1]])
        with pytest.warns(EvaluationWarning):
            hp = semantic_retrieval(sp, {1: 1})
        assert hp.flagged.tolist() == [0] and np.all(hp.hit == 0)

    def test_hit_at(self):
        sp = GalleryProbeSplit([[0.0], [1.0], [2.0], [3.0]], [[0], [1], [2], [3]], [[2.9]], [[2]])
        hp = semantic_retrieval(sp)
        assert hp.hit_at(0.25) == 0.0 and hp.hit_at(0.5) == 1.0


class TestReport:
    def test_files_round_trip(self, tmp_path):
        sp = random_split(1, open_set=True)
        closed = sp.probes(sp.genuine)
        rep = EvalReport(roc=verification_roc(sp), cmc=cmc_curve(sp), dir_rank1=dir_at_rank1(sp),
                         hit_penetration=semantic_retrieval(closed),
                         scalars={"map": map_from_split(closed)},
                         bootstrap={"x": bootstrap_eval(np.mean, np.arange(5.0))})
        paths = write_report(rep, tmp_path)
        assert {p.name for p in paths} == {"roc.csv", "cmc.csv", "dir.csv", "hit_penetration.csv",
                                           "scalars.txt"}
        header, x, y = read_curve(tmp_path / "roc.csv")
        assert header == ("far", "vr")
        np.testing.assert_array_equal(x, rep.roc.x)
        np.testing.assert_array_equal(y, rep.roc.y)
        _, ranks, rates = read_curve(tmp_path / "cmc.csv")
        assert ranks[0] == 1 and rates[-1] == 1.0
        text = (tmp_path / "scalars.txt").read_text()
        assert "map=" in text and "x_mean=" in text and "x_table=" in text

    def test_dimension_checks(self):
        with pytest.raises(DimensionError):
            GalleryProbeSplit([[0.0, 1.0]], [[0]], [[0.0]], [[0]])
        with pytest.raises(ProtocolError):
            GalleryProbeSplit(np.empty((0, 2)), np.empty((0, 1)), [[0.0, 0.0]], [[0]])
