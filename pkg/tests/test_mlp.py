"""Feature-extractor MLP: width algebra, exact gradients, training loop."""

import copy

import numpy as np
import pytest

from cpckit.dataset import LabeledDataset
from cpckit.errors import BadArch, DimMismatch, Divergence
from cpckit.mlp import (
    IDENTITY,
    PLAIN,
    RELU,
    RESIDUAL_ADD,
    RESIDUAL_CONCAT,
    BlockSpec,
    MlpModel,
    TrainConfig,
    block_widths,
    build_mlp,
    extract_features,
    format_arch,
    forward,
    load_mlp,
    loss_and_gradients,
    mlp_from_json,
    mlp_to_json,
    parse_arch,
    save_mlp,
    train,
)


def blobs(n=150, d=2, C=3, seed=0, margin=6.0):
    rng = np.random.default_rng(seed)
    ang = 2 * np.pi * np.arange(C) / C
    r = margin / (2 * np.sin(np.pi / C))
    centers = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    if d > 2:
        centers = np.column_stack([centers, np.zeros((C, d - 2))])
    labels = np.arange(n) % C
    feats = rng.standard_normal((n, d)) + centers[labels]
    return LabeledDataset(feats, labels, C)


class TestWidthAlgebra:
    def test_plain_replaces_width(self):
        assert block_widths(8, [BlockSpec(PLAIN, 32)]) == [32]

    def test_add_preserves_width(self):
        assert block_widths(8, [BlockSpec(RESIDUAL_ADD, 8)]) == [8]

    def test_concat_sums_widths(self):
        specs = [BlockSpec(RESIDUAL_CONCAT, 16), BlockSpec(RESIDUAL_CONCAT, 4)]
        assert block_widths(8, specs) == [24, 28]

    def test_add_width_mismatch(self):
        with pytest.raises(BadArch):
            block_widths(8, [BlockSpec(RESIDUAL_ADD, 16)])

    def test_mixed_chain(self):
        specs = [
            BlockSpec(RESIDUAL_CONCAT, 8),  # 8 -> 16
            BlockSpec(RESIDUAL_ADD, 16),  # stays 16
            BlockSpec(PLAIN, 5),  # -> 5
        ]
        assert block_widths(8, specs) == [16, 16, 5]

    def test_bad_block_spec(self):
        with pytest.raises(BadArch):
            BlockSpec("conv", 8)
        with pytest.raises(BadArch):
            BlockSpec(PLAIN, 0)


class TestArchStrings:
    def test_parse(self):
        d, blocks, C = parse_arch("in:8 concat:16 add:24 fc:32 head:4")
        assert d == 8 and C == 4
        assert [b.kind for b in blocks] == [RESIDUAL_CONCAT, RESIDUAL_ADD, PLAIN]
        assert [b.hidden_width for b in blocks] == [16, 24, 32]

    def test_format_round_trip(self):
        text = "in:3 fc:7 concat:2 head:2"
        d, blocks, C = parse_arch(text)
        m = build_mlp(d, blocks, C, seed=0)
        assert format_arch(m) == text

    @pytest.mark.parametrize(
        "bad",
        [
            "in:8 head:4",  # no blocks
            "fc:8 fc:4 head:2",  # missing in:
            "in:8 fc:4",  # missing head:
            "in:8 conv:4 head:2",  # unknown block
            "in:8 fc:x head:2",  # non-integer width
        ],
    )
    def test_rejects_malformed(self, bad):
        with pytest.raises(BadArch):
            parse_arch(bad)


class TestBuild:
    def test_glorot_bounds_and_zero_biases(self):
        m = build_mlp(6, [BlockSpec(PLAIN, 10)], 3, seed=1)
        bound = np.sqrt(6.0 / (6 + 10))
        assert np.all(np.abs(m.weights[0]) <= bound)
        assert np.any(np.abs(m.weights[0]) > bound / 2)  # not degenerate
        assert np.all(m.biases[0] == 0.0)
        assert np.all(m.head_b == 0.0)

    def test_feature_tap_defaults_to_last(self):
        m = build_mlp(4, [BlockSpec(PLAIN, 8), BlockSpec(PLAIN, 6)], 2)
        assert m.feature_tap == 1
        assert m.feature_width == 6

    def test_feature_tap_validated(self):
        with pytest.raises(BadArch):
            build_mlp(4, [BlockSpec(PLAIN, 8)], 2, feature_tap=1)

    def test_minimum_shape(self):
        with pytest.raises(BadArch):
            build_mlp(4, [], 2)
        with pytest.raises(BadArch):
            build_mlp(4, [BlockSpec(PLAIN, 8)], 1)
        with pytest.raises(BadArch):
            build_mlp(0, [BlockSpec(PLAIN, 8)], 2)


def random_model_and_batch(seed, activation):
    """A model containing all three block kinds, plus inputs that keep every
    pre-activation at least 1e-3 from the ReLU kink so a 1e-5 parameter
    perturbation cannot cross it."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 6))
    C = int(rng.integers(2, 5))
    kinds = [PLAIN, RESIDUAL_ADD, RESIDUAL_CONCAT]
    rng.shuffle(kinds)
    extra = int(rng.integers(0, 2))
    for _ in range(extra):
        kinds.append([PLAIN, RESIDUAL_CONCAT][int(rng.integers(0, 2))])
    blocks = []
    w = d
    for kind in kinds:
        if kind == RESIDUAL_ADD:
            h = w
        else:
            h = int(rng.integers(2, 6))
        blocks.append(BlockSpec(kind, h))
        w = block_widths(d, blocks)[-1]
    m = build_mlp(d, blocks, C, seed=seed, activation=activation)
    for _ in range(200):
        X = rng.normal(size=(3, d))
        ok = True
        xi = X
        for spec, W, b in zip(m.block_specs, m.weights, m.biases):
            z = xi @ W.T + b
            if np.min(np.abs(z)) < 1e-3:
                ok = False
                break
            a = np.maximum(z, 0.0) if activation == RELU else z
            if spec.kind == PLAIN:
                xi = a
            elif spec.kind == RESIDUAL_ADD:
                xi = a + xi
            else:
                xi = np.concatenate([a, xi], axis=1)
        if ok:
            y = rng.integers(0, C, size=3)
            return m, X, y
    raise AssertionError("could not find kink-clear inputs")


def numeric_gradients(m, X, y, step=1e-5):
    """Central finite differences over every parameter."""

    def loss_of(model):
        return loss_and_gradients(model, X, y)[0]

    grads = {"weights": [], "biases": [], "head_w": None, "head_b": None}

    def diff_array(getter):
        arr = getter(m)
        out = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_of(m)
            flat[i] = orig - step
            lo = loss_of(m)
            flat[i] = orig
            out.reshape(-1)[i] = (hi - lo) / (2 * step)
        return out

    for bi in range(len(m.weights)):
        grads["weights"].append(diff_array(lambda mm, bi=bi: mm.weights[bi]))
        grads["biases"].append(diff_array(lambda mm, bi=bi: mm.biases[bi]))
    grads["head_w"] = diff_array(lambda mm: mm.head_w)
    grads["head_b"] = diff_array(lambda mm: mm.head_b)
    return grads


def max_relative_error(analytic, numeric):
    pairs = []
    for a, n in zip(analytic.weights, numeric["weights"]):
        pairs.append((a, n))
    for a, n in zip(analytic.biases, numeric["biases"]):
        pairs.append((a, n))
    pairs.append((analytic.head_w, numeric["head_w"]))
    pairs.append((analytic.head_b, numeric["head_b"]))
    scale = max(max(np.max(np.abs(a)), np.max(np.abs(n))) for a, n in pairs)
    scale = max(scale, 1e-8)
    worst = max(np.max(np.abs(a - n)) for a, n in pairs)
    return worst / scale


class TestGradients:
    @pytest.mark.parametrize("seed", range(10))
    def test_relu_matches_finite_differences(self, seed):
        m, X, y = random_model_and_batch(seed, RELU)
        _, analytic = loss_and_gradients(m, X, y)
        numeric = numeric_gradients(m, X, y)
        assert max_relative_error(analytic, numeric) <= 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_identity_matches_finite_differences(self, seed):
        m, X, y = random_model_and_batch(100 + seed, IDENTITY)
        _, analytic = loss_and_gradients(m, X, y)
        numeric = numeric_gradients(m, X, y)
        assert max_relative_error(analytic, numeric) <= 1e-8

    def test_saturated_softmax_has_tiny_gradients(self):
        # when the head already assigns the true class overwhelming mass the
        # loss surface is flat
        m, X, y = random_model_and_batch(7, IDENTITY)
        m = copy.deepcopy(m)
        m.head_w[:] = 0.0
        m.head_b[:] = -50.0
        m.head_b[int(y[0])] = 50.0
        y_all = np.full_like(y, y[0])
        _, g = loss_and_gradients(m, X, y_all)
        worst = max(
            max(np.max(np.abs(a)) for a in g.weights),
            max(np.max(np.abs(a)) for a in g.biases),
            np.max(np.abs(g.head_w)),
            np.max(np.abs(g.head_b)),
        )
        assert worst <= 1e-6


class TestForward:
    def test_single_sample_matches_batch(self):
        m, X, y = random_model_and_batch(3, RELU)
        ds = LabeledDataset(X, y, class_count=m.class_count)
        batch_feats = extract_features(m, ds).features
        for i in range(len(X)):
            _, acts = forward(m, X[i])
            np.testing.assert_allclose(
                acts[m.feature_tap], batch_feats[i], rtol=1e-12, atol=1e-12
            )
            assert acts[-1].shape == (m.feature_width,)

    def test_dim_mismatch(self):
        m = build_mlp(4, [BlockSpec(PLAIN, 8)], 2)
        with pytest.raises(DimMismatch):
            forward(m, np.zeros(5))

    def test_dropout_zeroes_or_rescales(self):
        m = build_mlp(4, [BlockSpec(PLAIN, 50)], 2, seed=2)
        x = np.random.default_rng(5).normal(size=4)
        _, eval_acts = forward(m, x)
        _, train_acts = forward(m, x, train_mode=True, seed=11, dropout=0.5)
        kept = train_acts[0] != 0.0
        assert 0 < kept.sum() < 50  # both branches exercised
        np.testing.assert_allclose(
            train_acts[0][kept], eval_acts[0][kept] * 2.0, rtol=1e-12
        )

    def test_eval_mode_ignores_dropout_seed(self):
        m = build_mlp(4, [BlockSpec(PLAIN, 8)], 2, seed=3)
        x = np.ones(4)
        a, _ = forward(m, x, seed=1)
        b, _ = forward(m, x, seed=2)
        assert np.array_equal(a, b)


class TestTrain:
    def test_loss_decreases_and_fits(self):
        ds = blobs()
        m = build_mlp(2, [BlockSpec(RESIDUAL_CONCAT, 16)], 3, seed=0)
        m2, trace = train(m, ds, TrainConfig(epochs=30, dropout=0.0, seed=0))
        assert len(trace) == 30
        assert trace[-1] < trace[0]
        assert trace[-1] < 0.15
        scores = np.stack([forward(m2, x)[0] for x in ds.features])
        acc = float(np.mean(np.argmax(scores, axis=1) == ds.labels))
        assert acc >= 0.99

    def test_original_model_untouched(self):
        ds = blobs(60)
        m = build_mlp(2, [BlockSpec(PLAIN, 8)], 3, seed=1)
        before = [w.copy() for w in m.weights]
        train(m, ds, TrainConfig(epochs=3, seed=0))
        assert all(np.array_equal(a, b) for a, b in zip(before, m.weights))

    def test_zero_epochs_returns_copy(self):
        ds = blobs(60)
        m = build_mlp(2, [BlockSpec(PLAIN, 8)], 3, seed=1)
        m2, trace = train(m, ds, TrainConfig(epochs=0))
        assert trace == []
        assert m2 is not m
        assert all(np.array_equal(a, b) for a, b in zip(m.weights, m2.weights))

    def test_deterministic_per_seed(self):
        ds = blobs(80)
        m = build_mlp(2, [BlockSpec(PLAIN, 8)], 3, seed=4)
        a, _ = train(m, ds, TrainConfig(epochs=5, seed=9))
        b, _ = train(m, ds, TrainConfig(epochs=5, seed=9))
        c, _ = train(m, ds, TrainConfig(epochs=5, seed=10))
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        assert not all(np.array_equal(x, y) for x, y in zip(a.weights, c.weights))

    def test_divergence_raises_with_epoch(self):
        ds = blobs(60)
        m = build_mlp(2, [BlockSpec(PLAIN, 8)], 3, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(Divergence) as exc:
                train(m, ds, TrainConfig(learning_rate=1e6, epochs=60, dropout=0.0))
        assert exc.value.epoch >= 0

    def test_label_exceeding_head_raises(self):
        ds = blobs(30, 2, 3)
        m = build_mlp(2, [BlockSpec(PLAIN, 8)], 2, seed=0)
        with pytest.raises(DimMismatch):
            train(m, ds, TrainConfig(epochs=1))


class TestExtractFeatures:
    def test_tap_width_and_metadata(self):
        ds = blobs(40, 2, 2)
        m = build_mlp(
            2, [BlockSpec(RESIDUAL_CONCAT, 6), BlockSpec(PLAIN, 5)], 2, feature_tap=0
        )
        feats = extract_features(m, ds)
        assert feats.features.shape == (40, 8)  # concat: 6 + 2
        assert np.array_equal(feats.labels, ds.labels)
        assert feats.class_count == ds.class_count

    def test_deterministic(self):
        ds = blobs(20, 2, 2)
        m = build_mlp(2, [BlockSpec(PLAIN, 7)], 2, seed=5)
        a = extract_features(m, ds)
        b = extract_features(m, ds)
        assert np.array_equal(a.features, b.features)


class TestSerialization:
    def test_round_trip_exact(self, tmp_path):
        m, X, y = random_model_and_batch(6, RELU)
        back = mlp_from_json(mlp_to_json(m))
        s1, _ = forward(m, X[0])
        s2, _ = forward(back, X[0])
        assert np.array_equal(s1, s2)
        assert back.feature_tap == m.feature_tap

        path = tmp_path / "model.json"
        save_mlp(m, path)
        loaded = load_mlp(path)
        s3, _ = forward(loaded, X[0])
        assert np.array_equal(s1, s3)
