import itertools

import numpy as np
import pytest

from smhd.metrics import (
    auprc,
    best_dice,
    dice,
    evaluate,
    paired_permutation_test,
    permutation_test,
)


def _brute_force_auprc(scores, labels):
    """O(V^2) enumeration of precision/recall at every distinct-score cut."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = labels.sum()
    area = 0.0
    prev_recall = 0.0
    for value in sorted(set(scores), reverse=True):
        pred = scores >= value
        tp = np.sum(pred & labels)
        precision = tp / pred.sum()
        recall = tp / n_pos
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def _brute_force_best_dice(scores, labels):
    """Enumerate every achievable prediction set (all top-k cuts incl. empty/full)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = labels.sum()
    thresholds = sorted(set(scores), reverse=True) + [-np.inf]
    best = (-1.0, None)
    for t in reversed(thresholds):  # lowest threshold wins ties
        pred = scores > t
        value = 2.0 * np.sum(pred & labels) / (pred.sum() + n_pos)
        if value > best[0]:
            best = (value, t)
    return best


class TestDice:
    def test_identical_nonempty(self):
        m = np.array([[1, 0], [1, 1]], dtype=bool)
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = np.array([1, 1, 0, 0], dtype=bool)
        b = np.array([0, 0, 1, 1], dtype=bool)
        assert dice(a, b) == 0.0

    def test_partial_overlap(self):
        a = np.array([1, 1, 0, 0], dtype=bool)
        b = np.array([0, 1, 1, 0], dtype=bool)
        assert dice(a, b) == 0.5

    def test_both_empty_convention(self):
        z = np.zeros((3, 3), dtype=bool)
        assert dice(z, z) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice(np.zeros((2, 2), dtype=bool), np.zeros((2, 3), dtype=bool))


class TestBestDice:
    def test_scores_equal_to_labels(self):
        labels = np.array([0, 1, 1, 0, 1], dtype=bool)
        value, threshold = best_dice(labels.astype(float), labels)
        assert value == 1.0
        assert 0.0 <= threshold < 1.0

    def test_four_point_example_against_brute_force(self):
        scores = np.array([0.9, 0.8, 0.3, 0.1])
        labels = np.array([1, 0, 1, 0], dtype=bool)
        oracle_value, oracle_threshold = _brute_force_best_dice(scores, labels)
        value, threshold = best_dice(scores, labels)
        assert value == oracle_value == 0.8
        assert threshold == oracle_threshold == 0.1

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(2, 60))
            scores = rng.choice([0.1, 0.2, 0.5, 0.8, 1.0], size=n)
            labels = rng.random(n) < 0.4
            if not labels.any():
                labels[0] = True
            oracle = _brute_force_best_dice(scores, labels)
            assert best_dice(scores, labels) == oracle

    def test_quantile_close_to_exact(self):
        for seed in range(5):
            r = np.random.default_rng(seed)
            scores = r.standard_normal(10000)
            labels = r.random(10000) < 0.05
            scores[labels] += r.uniform(0.5, 1.5)
            exact, _ = best_dice(scores, labels, "exact")
            approx, _ = best_dice(scores, labels, "quantile")
            assert abs(exact - approx) < 0.005

    def test_beats_any_fixed_threshold(self):
        rng = np.random.default_rng(7)
        scores = rng.standard_normal(500)
        labels = rng.random(500) < 0.2
        best, _ = best_dice(scores, labels)
        for _ in range(100):
            t = rng.uniform(scores.min() - 1, scores.max() + 1)
            assert best >= dice(scores > t, labels)

    def test_rank_invariance(self):
        rng = np.random.default_rng(8)
        scores = rng.standard_normal(200)
        labels = rng.random(200) < 0.3
        base = best_dice(scores, labels)[0]
        assert best_dice(2 * scores + 1, labels)[0] == base
        assert best_dice(np.exp(scores), labels)[0] == base

    def test_no_positives_warns(self):
        with pytest.warns(UserWarning):
            value, threshold = best_dice(np.array([0.1, 0.2]),
                                         np.zeros(2, dtype=bool))
        assert value == 1.0
        assert threshold == np.inf


class TestAuprc:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([1, 1, 0, 0], dtype=bool)
        assert auprc(scores, labels) == 1.0

    def test_all_equal_scores_give_prevalence(self):
        labels = np.array([1, 0, 0, 0, 1], dtype=bool)
        assert auprc(np.full(5, 0.5), labels) == pytest.approx(2 / 5, abs=1e-15)

    def test_four_point_example(self):
        scores = np.array([0.9, 0.8, 0.7, 0.6])
        labels = np.array([1, 0, 1, 0], dtype=bool)
        expected = _brute_force_auprc(scores, labels)
        assert abs(expected - 5 / 6) < 1e-12
        assert abs(auprc(scores, labels) - expected) < 1e-12

    def test_matches_brute_force_up_to_500(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            n = int(rng.integers(5, 501))
            scores = np.round(rng.standard_normal(n), 2)  # force ties
            labels = rng.random(n) < 0.3
            if not labels.any():
                labels[rng.integers(0, n)] = True
            assert abs(auprc(scores, labels)
                       - _brute_force_auprc(scores, labels)) < 1e-12

    def test_rank_invariance(self):
        rng = np.random.default_rng(10)
        scores = rng.standard_normal(300)
        labels = rng.random(300) < 0.25
        base = auprc(scores, labels)
        assert auprc(2 * scores + 1, labels) == base
        assert auprc(np.exp(scores), labels) == base

    def test_no_positives_is_an_error(self):
        with pytest.raises(ValueError):
            auprc(np.array([0.1, 0.2]), np.zeros(2, dtype=bool))


class TestPermutationTest:
    def test_identical_samples_give_p_one(self):
        a = np.array([1.0, 2.0, 3.0, 4.0])
        assert permutation_test(a, a.copy(), rounds=500, seed=0) == 1.0

    def test_complete_separation_matches_enumeration(self):
        a = np.zeros(5)
        b = np.full(5, 10.0)
        pooled = np.concatenate([a, b])
        observed = abs(a.mean() - b.mean())
        hits = 0
        total = 0
        for idx in itertools.combinations(range(10), 5):
            sel = np.zeros(10, dtype=bool)
            sel[list(idx)] = True
            stat = abs(pooled[sel].mean() - pooled[~sel].mean())
            hits += stat >= observed
            total += 1
        exact = hits / total
        assert abs(exact - 2 / 252) < 1e-12
        p = permutation_test(a, b, rounds=10000, seed=7)
        assert p < 0.01
        assert abs(p - exact) < 0.003

    def test_deterministic_in_seed(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal(20)
        b = rng.standard_normal(20) + 0.3
        p1 = permutation_test(a, b, rounds=2000, seed=5)
        p2 = permutation_test(a, b, rounds=2000, seed=5)
        assert p1 == p2
        assert 0.0 < p1 <= 1.0

    def test_null_p_values_roughly_uniform(self):
        rng = np.random.default_rng(99)
        low = 0
        for trial in range(200):
            a = rng.standard_normal(12)
            b = rng.standard_normal(12)
            low += permutation_test(a, b, rounds=1000, seed=trial) < 0.05
        assert 4 <= low <= 16

    def test_empty_input(self):
        with pytest.raises(ValueError):
            permutation_test([], [1.0], rounds=10, seed=0)


class TestPairedPermutationTest:
    def test_identical_pairs_give_p_one(self):
        a = np.array([0.2, 0.4, 0.9])
        assert paired_permutation_test(a, a.copy(), rounds=100, seed=0) == 1.0

    def test_consistent_improvement_is_significant(self):
        rng = np.random.default_rng(12)
        b = rng.random(30)
        a = b + rng.uniform(0.05, 0.1, 30)
        assert paired_permutation_test(a, b, rounds=10000, seed=1) < 0.01

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            paired_permutation_test([1.0], [1.0, 2.0], rounds=10, seed=0)


class TestEvaluate:
    def test_perfect_scores(self):
        gt = np.zeros((8, 8), dtype=bool)
        gt[2:4, 3:6] = True
        res = evaluate(gt.astype(float), gt)
        assert res.auprc == 1.0
        assert res.dice_best == 1.0
        assert res.n_pos == 6
        assert res.n_pos + res.n_neg == 64

    def test_mask_restricts_voxels(self):
        rng = np.random.default_rng(13)
        scores = rng.random((10, 10))
        gt = np.zeros((10, 10), dtype=bool)
        gt[4:6, 4:6] = True
        keep = np.zeros((10, 10), dtype=bool)
        keep[2:8, 2:8] = True
        res = evaluate(scores, gt, mask=keep)
        assert res.n_pos + res.n_neg == 36
        full = evaluate(scores, gt)
        assert full.n_pos + full.n_neg == 100
