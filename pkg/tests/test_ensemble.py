import numpy as np
import pytest

from treeids.cart import TreeParams, fit_tree
from treeids.ensemble import (
    BoostParams,
    ensemble_feature_importance,
    fit_boosted,
    fit_extra_trees,
    fit_random_forest,
    leaf_weight,
    majority_vote,
    predict_boosted,
    split_gain,
)
from treeids.errors import InputError

from conftest import make_dataset, random_dataset


def boosted_logloss(model, rows, labels, n_rounds=None):
    scores = model.decision_scores(rows, n_rounds=n_rounds)
    shifted = scores - scores.max(axis=1, keepdims=True)
    proba = np.exp(shifted)
    proba /= proba.sum(axis=1, keepdims=True)
    picked = np.clip(proba[np.arange(len(labels)), labels], 1e-300, None)
    return float(-np.log(picked).mean())


class TestRandomForest:
    def test_degenerate_forest_equals_single_tree(self, separable_dataset):
        params = TreeParams(min_samples_split=2, min_samples_leaf=1, seed=4)
        forest = fit_random_forest(separable_dataset, 1, params, seed=4, bootstrap=False,
                                   threads=1)
        # subset defaults to sqrt(P); match it explicitly for the single tree
        single = fit_tree(separable_dataset,
                          TreeParams(min_samples_split=2, min_samples_leaf=1, seed=4,
                                     feature_subset_size=forest.feature_subset_size))
        test_rows = separable_dataset.rows
        assert np.array_equal(forest.predict_classes(test_rows),
                              single.predict_classes(test_rows))

    def test_thread_count_invariance(self, separable_dataset):
        models = [
            fit_random_forest(separable_dataset, 12, TreeParams(), seed=5, threads=t)
            for t in (1, 3)
        ]
        a, b = models
        for ta, tb in zip(a.trees, b.trees):
            assert np.array_equal(ta.feature, tb.feature)
            assert np.array_equal(ta.threshold, tb.threshold)
            assert np.array_equal(ta.class_counts, tb.class_counts)

    def test_training_accuracy_on_separable_data(self, separable_dataset):
        forest = fit_random_forest(separable_dataset, 10,
                                   TreeParams(min_samples_split=2, min_samples_leaf=1),
                                   seed=0)
        acc = (forest.predict_classes(separable_dataset.rows)
               == separable_dataset.labels).mean()
        assert acc == 1.0

    def test_out_of_bag_rows_exist(self):
        rng = np.random.default_rng(31)
        ds = random_dataset(rng, 40, 3, 2)
        from treeids.seeding import derived_rng

        for seed in range(10):
            # reproduce each tree's bootstrap draw and confirm rows were left out
            for i in range(3):
                tree_rng = derived_rng(seed, "tree", i)
                sample = tree_rng.integers(0, ds.n_rows, size=ds.n_rows)
                assert len(set(sample.tolist())) < ds.n_rows

    def test_vote_distribution_and_tie_rule(self, separable_dataset):
        forest = fit_random_forest(separable_dataset, 7, TreeParams(), seed=1)
        cls, dist = majority_vote(forest, separable_dataset.rows[0])
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)
        assert cls == int(np.argmax(dist))

    def test_vote_winner_invariant_under_tree_reordering(self, separable_dataset):
        from dataclasses import replace

        forest = fit_random_forest(separable_dataset, 9, TreeParams(), seed=2)
        reordered = replace(forest, trees=tuple(reversed(forest.trees)))
        rows = separable_dataset.rows[:20]
        assert np.array_equal(forest.predict_classes(rows), reordered.predict_classes(rows))

    def test_invalid_tree_count(self, separable_dataset):
        with pytest.raises(InputError):
            fit_random_forest(separable_dataset, 0, TreeParams(), seed=0)


class TestExtraTrees:
    def test_all_trees_see_all_rows(self, separable_dataset):
        forest = fit_extra_trees(separable_dataset, 5, TreeParams(), seed=0)
        assert not forest.bootstrap
        for tree in forest.trees:
            assert tree.n_node_samples[0] == separable_dataset.n_rows

    def test_matches_single_random_threshold_tree(self, separable_dataset):
        forest = fit_extra_trees(separable_dataset, 1, TreeParams(seed=6), seed=6)
        single = fit_tree(separable_dataset,
                          TreeParams(seed=6, split_mode="random_threshold",
                                     feature_subset_size=forest.feature_subset_size))
        assert np.array_equal(forest.trees[0].feature, single.feature)
        assert np.array_equal(forest.trees[0].threshold, single.threshold)

    def test_training_accuracy_on_separable_data(self, separable_dataset):
        forest = fit_extra_trees(separable_dataset, 20,
                                 TreeParams(min_samples_split=2, min_samples_leaf=1),
                                 seed=3)
        acc = (forest.predict_classes(separable_dataset.rows)
               == separable_dataset.labels).mean()
        assert acc == 1.0


class TestBoostingMath:
    def test_leaf_weight_zero_gradient(self):
        assert leaf_weight(0.0, 0.5, 1.0) == 0.0

    def test_leaf_weight_vanishes_with_large_lambda(self):
        assert abs(leaf_weight(3.0, 1.0, 1e12)) < 1e-11

    def test_hand_computed_four_row_example(self):
        # p = 0.5 initialization gives g = +/-0.5, h = 0.25 per row
        ds = make_dataset([[0.0], [1.0], [2.0], [3.0]], [0, 0, 1, 1])
        model = fit_boosted(ds, BoostParams(rounds=1, max_depth=1, lam=0.0, gamma=0.0,
                                            learning_rate=1.0))
        tree0, tree1 = model.stages[0]
        # class-0 tree: left leaf G=-1 H=0.5 -> +2; right leaf G=1 H=0.5 -> -2
        assert tree0.threshold[0] == 1.5
        left0 = tree0.leaf_weight[tree0.left[0]]
        right0 = tree0.leaf_weight[tree0.right[0]]
        assert (left0, right0) == (2.0, -2.0)
        left1 = tree1.leaf_weight[tree1.left[0]]
        right1 = tree1.leaf_weight[tree1.right[0]]
        assert (left1, right1) == (-2.0, 2.0)

    def test_gain_matches_objective_difference(self):
        # Obj = -1/2 sum G^2/(H+lam) + gamma * leaves, evaluated directly
        rng = np.random.default_rng(37)
        for _ in range(100):
            g = rng.normal(size=20)
            h = rng.random(20) + 0.01
            lam = float(rng.random() * 2)
            gamma = float(rng.random() * 0.5)
            cut = int(rng.integers(1, 19))
            gl, hl = g[:cut].sum(), h[:cut].sum()
            gr, hr = g[cut:].sum(), h[cut:].sum()

            def obj(parts):
                return sum(-0.5 * pg ** 2 / (ph + lam) for pg, ph in parts) + gamma * len(parts)

            brute = obj([(gl, hl), (gr, hr)])
            parent = obj([(g.sum(), h.sum())])
            assert split_gain(gl, hl, gr, hr, lam, gamma) == pytest.approx(
                parent - brute, abs=1e-9)


class TestBoostedModel:
    def test_class_count_mismatch_errors(self, separable_dataset):
        with pytest.raises(InputError):
            fit_boosted(separable_dataset, BoostParams(rounds=1, class_count=5))

    def test_uniform_probabilities_before_any_round(self, separable_dataset):
        model = fit_boosted(separable_dataset, BoostParams(rounds=1, max_depth=1))
        proba = model.predict_proba(separable_dataset.rows[:3, :])
        scores = model.decision_scores(separable_dataset.rows[:3, :], n_rounds=0)
        uniform = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
        assert np.allclose(uniform, 0.5)
        assert proba.shape == (3, 2)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(41)
        ds = random_dataset(rng, 60, 3, 3)
        model = fit_boosted(ds, BoostParams(rounds=5, max_depth=3))
        proba = model.predict_proba(rng.random((30, 3)))
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)

    def test_training_loss_non_increasing(self):
        rng = np.random.default_rng(43)
        ds = random_dataset(rng, 50, 3, 3)
        model = fit_boosted(ds, BoostParams(rounds=15, max_depth=3, learning_rate=0.3))
        losses = [boosted_logloss(model, ds.rows, ds.labels, n_rounds=r)
                  for r in range(16)]
        for before, after in zip(losses, losses[1:]):
            assert after <= before + 1e-12

    def test_argmax_invariant_to_score_shift(self):
        rng = np.random.default_rng(47)
        ds = random_dataset(rng, 60, 3, 3)
        model = fit_boosted(ds, BoostParams(rounds=3, max_depth=2))
        rows = rng.random((20, 3))
        scores = model.decision_scores(rows)
        assert np.array_equal(np.argmax(scores, axis=1),
                              np.argmax(scores + 7.5, axis=1))

    def test_thread_count_invariance(self):
        rng = np.random.default_rng(53)
        ds = random_dataset(rng, 80, 3, 3)
        a = fit_boosted(ds, BoostParams(rounds=4, max_depth=3), threads=1)
        b = fit_boosted(ds, BoostParams(rounds=4, max_depth=3), threads=4)
        for sa, sb in zip(a.stages, b.stages):
            for ta, tb in zip(sa, sb):
                assert np.array_equal(ta.threshold, tb.threshold)
                assert np.array_equal(ta.leaf_weight, tb.leaf_weight)

    def test_predict_boosted_single_row(self, separable_dataset):
        model = fit_boosted(separable_dataset, BoostParams(rounds=3, max_depth=2))
        cls, proba = predict_boosted(model, separable_dataset.rows[0])
        assert proba.sum() == pytest.approx(1.0, abs=1e-9)
        assert cls == int(np.argmax(proba))


class TestEnsembleImportance:
    def test_forest_single_feature_one_hot(self):
        rows = np.column_stack([np.zeros(40), np.concatenate([np.zeros(20), np.ones(20)])])
        labels = np.concatenate([np.zeros(20, int), np.ones(20, int)])
        ds = make_dataset(rows, labels)
        forest = fit_random_forest(ds, 5, TreeParams(min_samples_split=2, min_samples_leaf=1,
                                                     feature_subset_size=2), seed=0)
        imp = ensemble_feature_importance(forest)
        assert imp[1] == pytest.approx(1.0)
        assert imp[0] == 0.0

    def test_importance_sums_to_one(self):
        rng = np.random.default_rng(59)
        ds = random_dataset(rng, 120, 4, 3)
        forest = fit_random_forest(ds, 8, TreeParams(), seed=1)
        assert ensemble_feature_importance(forest).sum() == pytest.approx(1.0, abs=1e-9)
        boosted = fit_boosted(ds, BoostParams(rounds=3, max_depth=3))
        assert ensemble_feature_importance(boosted).sum() == pytest.approx(1.0, abs=1e-9)

    def test_unsplit_feature_scores_zero(self, separable_dataset):
        boosted = fit_boosted(separable_dataset, BoostParams(rounds=2, max_depth=1))
        imp = ensemble_feature_importance(boosted)
        assert imp[1] == 0.0
