"""The four classifier kinds behind the shared train/predict contract."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpckit.classifiers import (
    ClassifierSpec,
    KnnParams,
    classifier_from_json,
    classifier_to_json,
    fit,
    forest_spec,
    knn_spec,
    neighbors,
    softmax_spec,
    svm_spec,
    with_seed,
)
from cpckit.dataset import LabeledDataset
from cpckit.errors import BadHyperparams, BadSpec, DimMismatch, EmptyDataset


def blobs(n=150, d=2, C=3, seed=0, margin=6.0):
    """Gaussian clusters on a circle, min center distance = margin sigmas."""
    rng = np.random.default_rng(seed)
    ang = 2 * np.pi * np.arange(C) / C
    r = margin / (2 * np.sin(np.pi / C))
    centers = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    if d > 2:
        centers = np.column_stack([centers, np.zeros((C, d - 2))])
    labels = np.arange(n) % C
    feats = rng.standard_normal((n, d)) + centers[labels]
    return LabeledDataset(feats, labels, C)


ALL_SPECS = [
    softmax_spec(seed=0),
    svm_spec(seed=0),
    forest_spec(seed=0),
    knn_spec(k=5),
]


class TestSpecValidation:
    def test_kind_param_mismatch(self):
        with pytest.raises(BadSpec):
            ClassifierSpec("softmax", KnnParams(k=3))

    def test_unknown_kind(self):
        with pytest.raises(BadSpec):
            ClassifierSpec("boosting", KnnParams(k=3))

    def test_bad_hyperparams(self):
        ds = blobs(30)
        for spec in (
            softmax_spec(learning_rate=0.0),
            softmax_spec(epochs=-1),
            softmax_spec(batch_size=0),
            softmax_spec(l2=-0.1),
            softmax_spec(momentum=1.0),
            svm_spec(hinge_margin=0.0),
            forest_spec(tree_count=0),
            forest_spec(max_depth=0),
            knn_spec(k=0),
        ):
            with pytest.raises(BadHyperparams):
                fit(spec, ds)

    def test_with_seed(self):
        assert with_seed(softmax_spec(seed=0), 7).hyperparams.seed == 7
        base = knn_spec(k=3)
        assert with_seed(base, 7) is base  # seedless kind passes through


class TestFitContract:
    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
    def test_separable_training_accuracy(self, spec):
        ds = blobs(150, 2, 3, seed=1)
        clf = fit(spec, ds)
        acc = float(np.mean(clf.predict_many(ds.features) == ds.labels))
        assert acc >= 0.99

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
    def test_deterministic(self, spec):
        ds = blobs(60, 3, 3, seed=2)
        probe = np.random.default_rng(3).normal(size=(20, 3)) * 4.0
        a = fit(spec, ds).predict_many(probe)
        b = fit(spec, ds).predict_many(probe)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
    def test_predictions_use_original_label_ids(self, spec):
        # training labels {1, 3} must come back as 1 or 3, never 0 or 2
        ds = blobs(40, 2, 2, seed=4)
        shifted = LabeledDataset(ds.features, ds.labels * 2 + 1, class_count=4)
        preds = fit(spec, shifted).predict_many(ds.features)
        assert set(np.unique(preds).tolist()) <= {1, 3}

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
    def test_dim_mismatch(self, spec):
        clf = fit(spec, blobs(30, 2, 2))
        with pytest.raises(DimMismatch):
            clf.predict_many(np.zeros((5, 3)))
        with pytest.raises(DimMismatch):
            clf.decision_scores(np.zeros((5, 3)))

    def test_empty_dataset(self):
        empty = LabeledDataset(np.zeros((0, 2)), np.zeros(0, dtype=int), class_count=2)
        with pytest.raises(EmptyDataset):
            fit(softmax_spec(), empty)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
    def test_single_class_training(self, spec):
        ds = LabeledDataset(np.random.default_rng(5).normal(size=(10, 2)),
                            np.full(10, 2, dtype=int), class_count=3)
        clf = fit(spec, ds)
        assert np.all(clf.predict_many(np.zeros((4, 2))) == 2)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
    def test_decision_scores_align_with_predictions(self, spec):
        ds = blobs(90, 2, 3, seed=6)
        clf = fit(spec, ds)
        probe = ds.features[:25]
        scores = clf.decision_scores(probe)
        assert scores.shape == (25, 3)
        picked = clf.classes_seen[np.argmax(scores, axis=1)]
        assert np.array_equal(picked, clf.predict_many(probe))


class TestSgd:
    def test_full_batch_loss_monotone(self):
        # plain gradient descent on a convex objective with a small step
        ds = blobs(200, 2, 2, seed=0)
        spec = softmax_spec(
            learning_rate=0.01, epochs=200, batch_size=4096, momentum=0.0, l2=0.0
        )
        trace = np.array(fit(spec, ds).state.loss_trace)
        assert len(trace) == 200
        assert np.all(np.diff(trace) <= 1e-9)

    def test_svm_loss_decreases(self):
        ds = blobs(200, 2, 2, seed=1)
        spec = svm_spec(learning_rate=0.01, epochs=100, batch_size=4096, momentum=0.0)
        trace = fit(spec, ds).state.loss_trace
        assert trace[-1] < trace[0] * 0.5

    def test_zero_epochs_keeps_zero_weights(self):
        ds = blobs(30, 2, 2)
        clf = fit(softmax_spec(epochs=0), ds)
        assert clf.state.loss_trace == []
        assert np.all(clf.state.weights == 0.0)

    def test_minibatch_path_deterministic(self):
        ds = blobs(100, 2, 2, seed=2)
        spec = softmax_spec(batch_size=16, epochs=20, seed=9)
        a = fit(spec, ds)
        b = fit(spec, ds)
        assert np.array_equal(a.state.weights, b.state.weights)
        assert a.state.loss_trace == b.state.loss_trace

    def test_minibatch_order_matters_via_seed(self):
        # different shuffles should give (slightly) different weights,
        # confirming the mini-batch path actually permutes
        ds = blobs(100, 2, 2, seed=2)
        a = fit(softmax_spec(batch_size=16, epochs=5, seed=0), ds)
        b = fit(softmax_spec(batch_size=16, epochs=5, seed=1), ds)
        assert not np.array_equal(a.state.weights, b.state.weights)

    def test_l2_shrinks_weights(self):
        ds = blobs(100, 2, 2, seed=3)
        w_free = fit(softmax_spec(l2=0.0, seed=0), ds).state.weights
        w_reg = fit(softmax_spec(l2=1.0, seed=0), ds).state.weights
        assert np.linalg.norm(w_reg) < np.linalg.norm(w_free)


class TestForest:
    def test_memorizes_training_set(self):
        ds = blobs(150, 2, 3, seed=1)
        clf = fit(forest_spec(seed=0), ds)
        assert float(np.mean(clf.predict_many(ds.features) == ds.labels)) == 1.0

    def test_max_depth_one_is_a_stump_ensemble(self):
        ds = blobs(60, 2, 2, seed=7)
        clf = fit(forest_spec(max_depth=1, seed=0), ds)
        for tree in clf.state.trees:
            if "leaf" in tree:
                continue
            assert "leaf" in tree["left"] and "leaf" in tree["right"]

    def test_single_tree_no_subsample_is_deterministic(self):
        ds = blobs(60, 4, 3, seed=8)
        spec = forest_spec(tree_count=1, feature_subsample=4, seed=5)
        a = fit(spec, ds).predict_many(ds.features)
        b = fit(spec, ds).predict_many(ds.features)
        assert np.array_equal(a, b)

    def test_duplicate_points_with_conflicting_labels_terminate(self):
        X = np.array([[1.0, 1.0]] * 6 + [[2.0, 2.0]] * 2)
        y = np.array([0, 1, 0, 1, 0, 0, 1, 1])
        ds = LabeledDataset(X, y, class_count=2)
        clf = fit(forest_spec(tree_count=5, seed=0), ds)
        preds = clf.predict_many(X)
        assert preds.shape == (8,)

    def test_vote_counts_sum_to_tree_count(self):
        ds = blobs(40, 2, 2, seed=9)
        clf = fit(forest_spec(tree_count=31, seed=0), ds)
        votes = clf.decision_scores(ds.features[:10])
        assert np.all(votes.sum(axis=1) == 31)


class TestKnn:
    def test_distance_tie_breaks_to_lower_index(self):
        # query equidistant from both points; index 0 must win the tie
        X = np.array([[1.0, 0.0], [0.0, 0.0]])
        y = np.array([1, 0])
        clf = fit(knn_spec(k=2), LabeledDataset(X, y, class_count=2))
        assert clf.predict(np.array([0.5, 0.0])) == 1

    def test_vote_tie_goes_to_class_of_nearest(self):
        # two votes each; the nearest neighbor belongs to class 1
        X = np.array([[1.0, 0.0], [2.0, 0.0], [-1.5, 0.0], [-2.5, 0.0]])
        y = np.array([1, 1, 0, 0])
        clf = fit(knn_spec(k=4), LabeledDataset(X, y, class_count=2))
        assert clf.predict(np.array([0.0, 0.0])) == 1

    def test_k_one_copies_nearest_label(self):
        ds = blobs(50, 2, 3, seed=10)
        clf = fit(knn_spec(k=1), ds)
        assert float(np.mean(clf.predict_many(ds.features) == ds.labels)) == 1.0

    def test_k_clamps_to_sample_count(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        y = np.array([0, 0, 1])
        clf = fit(knn_spec(k=50), LabeledDataset(X, y, class_count=2))
        assert clf.predict(np.array([0.0, 0.0])) == 0  # majority of all three

    def test_neighbors_rejects_bad_query(self):
        ds = blobs(20, 2, 2)
        with pytest.raises(DimMismatch):
            neighbors(ds, np.zeros(3), 2)
        with pytest.raises(BadHyperparams):
            neighbors(ds, np.zeros(2), 0)

    @given(
        n=st.integers(1, 40),
        k=st.integers(1, 50),
        seed=st.integers(0, 10_000),
    )
    @settings(max_examples=80, deadline=None)
    def test_neighbors_match_brute_force(self, n, k, seed):
        # integer grid coordinates make distance ties common and exact
        rng = np.random.default_rng(seed)
        X = rng.integers(-3, 4, size=(n, 2)).astype(np.float64)
        q = rng.integers(-3, 4, size=2).astype(np.float64)
        ds = LabeledDataset(X, np.zeros(n, dtype=int), class_count=1)
        got = neighbors(ds, q, k)
        d2 = np.sum((X - q) ** 2, axis=1)
        want = sorted(range(n), key=lambda i: (d2[i], i))[: min(k, n)]
        assert got.tolist() == want


class TestSerialization:
    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
    def test_round_trip_preserves_predictions(self, spec):
        ds = blobs(80, 3, 3, seed=11)
        clf = fit(spec, ds)
        back = classifier_from_json(classifier_to_json(clf))
        probe = np.random.default_rng(12).normal(size=(30, 3)) * 4.0
        assert np.array_equal(back.predict_many(probe), clf.predict_many(probe))
        assert back.spec == clf.spec

    def test_json_is_plain_data(self):
        import json

        clf = fit(softmax_spec(epochs=3), blobs(20, 2, 2))
        text = json.dumps(classifier_to_json(clf))
        assert "weights" in text
