import numpy as np
import pytest

from treeids.errors import InputError
from treeids.resample import (
    ResamplePlan,
    random_oversample,
    resolve_targets,
    smote_oversample,
)

from conftest import make_dataset


def imbalanced_dataset(rng, minority=10, majority=40, p=3):
    rows = np.vstack([
        rng.random((majority, p)),
        rng.random((minority, p)) + 2.0,  # minority lives in its own region
    ])
    labels = np.array([0] * majority + [1] * minority)
    return make_dataset(rows, labels)


class TestTargets:
    def test_default_equalizes_to_largest(self):
        rng = np.random.default_rng(0)
        ds = imbalanced_dataset(rng)
        targets = resolve_targets(ds, ResamplePlan(method="random"))
        assert targets == {0: 40, 1: 40}

    def test_explicit_target_below_count_errors(self):
        rng = np.random.default_rng(0)
        ds = imbalanced_dataset(rng)
        plan = ResamplePlan(method="random", targets={1: 5})
        with pytest.raises(InputError):
            random_oversample(ds, plan)


class TestRandomOversample:
    def test_pads_to_target(self):
        rng = np.random.default_rng(1)
        ds = imbalanced_dataset(rng)
        plan = ResamplePlan(method="random", targets={1: 25}, seed=0)
        out = random_oversample(ds, plan)
        assert out.n_rows == 40 + 25
        assert (out.labels == 1).sum() == 25

    def test_target_equal_to_count_is_identity(self):
        rng = np.random.default_rng(2)
        ds = imbalanced_dataset(rng)
        out = random_oversample(ds, ResamplePlan(method="random", targets={1: 10}))
        assert out.n_rows == ds.n_rows
        assert np.array_equal(out.rows, ds.rows)

    def test_added_rows_are_copies_of_same_class(self):
        rng = np.random.default_rng(3)
        ds = imbalanced_dataset(rng)
        out = random_oversample(ds, ResamplePlan(method="random", seed=7))
        originals = {tuple(r) for r in ds.rows[ds.labels == 1]}
        added = out.rows[ds.n_rows:]
        assert (out.labels[ds.n_rows:] == 1).all()
        for row in added:
            assert tuple(row) in originals

    def test_originals_precede_synthetics_verbatim(self):
        rng = np.random.default_rng(4)
        ds = imbalanced_dataset(rng)
        out = random_oversample(ds, ResamplePlan(method="random", seed=1))
        assert np.array_equal(out.rows[: ds.n_rows], ds.rows)
        assert np.array_equal(out.labels[: ds.n_rows], ds.labels)


class TestSmote:
    def test_counts_hit_targets_exactly(self):
        rng = np.random.default_rng(5)
        ds = imbalanced_dataset(rng)
        out = smote_oversample(ds, ResamplePlan(method="smote", targets={1: 20}, seed=0))
        assert (out.labels == 1).sum() == 20
        assert (out.labels == 0).sum() == 40

    def test_identical_points_reproduce_themselves(self):
        rows = np.vstack([np.random.default_rng(6).random((6, 2)),
                          [[0.5, 0.5], [0.5, 0.5]]])
        labels = np.array([0] * 6 + [1, 1])
        ds = make_dataset(rows, labels)
        out = smote_oversample(ds, ResamplePlan(method="smote", targets={1: 6}, seed=0))
        added = out.rows[out.labels == 1][2:]
        assert np.allclose(added, 0.5)

    def test_synthetics_on_segments_and_in_bounding_box(self):
        rng = np.random.default_rng(7)
        ds = imbalanced_dataset(rng, minority=10, majority=40)
        k = 5
        out = smote_oversample(ds, ResamplePlan(method="smote", targets={1: 20},
                                                k_neighbors=k, seed=3))
        members = ds.rows[ds.labels == 1]
        added = out.rows[ds.n_rows:]
        lo, hi = members.min(axis=0), members.max(axis=0)
        assert (added >= lo - 1e-12).all() and (added <= hi + 1e-12).all()
        for s in added:
            assert _on_some_knn_segment(s, members, k)

    def test_tiny_class_shrinks_k(self):
        rng = np.random.default_rng(8)
        rows = np.vstack([rng.random((30, 2)), rng.random((3, 2)) + 2.0])
        labels = np.array([0] * 30 + [1] * 3)
        ds = make_dataset(rows, labels)
        out = smote_oversample(ds, ResamplePlan(method="smote", k_neighbors=5, seed=0))
        assert (out.labels == 1).sum() == 30

    def test_singleton_class_errors_with_advice(self):
        rng = np.random.default_rng(9)
        rows = np.vstack([rng.random((10, 2)), [[5.0, 5.0]]])
        labels = np.array([0] * 10 + [1])
        ds = make_dataset(rows, labels)
        with pytest.raises(InputError, match="random oversampling"):
            smote_oversample(ds, ResamplePlan(method="smote"))

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(10)
        ds = imbalanced_dataset(rng)
        plan = ResamplePlan(method="smote", seed=21)
        a = smote_oversample(ds, plan)
        b = smote_oversample(ds, plan)
        assert np.array_equal(a.rows, b.rows)


def _on_some_knn_segment(point, members, k, tol=1e-9):
    """True if the point lies on a segment from a member to one of its k-NN.

    Neighbor sets are recomputed by brute force; ties at the k-th distance
    admit every tied candidate.
    """
    m = members.shape[0]
    d2 = ((members[:, None, :] - members[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    for i in range(m):
        kth = np.sort(d2[i])[k - 1]
        neighbors = np.nonzero(d2[i] <= kth + 1e-12)[0]
        base = members[i]
        d_base = np.linalg.norm(point - base)
        for j in neighbors:
            partner = members[j]
            seg = np.linalg.norm(partner - base)
            residual = d_base + np.linalg.norm(point - partner) - seg
            if abs(residual) < tol and d_base <= seg + tol:
                return True
    return False
