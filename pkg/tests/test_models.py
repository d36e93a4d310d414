import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xai_concord.dataset import SyntheticSpec, standardize, synthesize
from xai_concord.errors import ModelError
from xai_concord.models import (
    Dense,
    LinearModel,
    NeuralNet,
    ReLU,
    TrainConfig,
    TreeEnsemble,
    predict_proba,
    raw_score,
    train_gbt,
    train_l1_logistic,
    train_nn,
    training_logloss,
)
from xai_concord.models.gbt import RegressionTree, staged_raw
from xai_concord.models.io import load_model, model_from_dict, model_to_dict, save_model
from xai_concord.models.linear import deactivation_threshold, l1_objective
from xai_concord.models.nn import Conv1d, build_network, loss_and_grads

from conftest import make_dataset
from oracles import central_difference, grid_minimum_2d, l1_objective_profile, logloss, mlp_forward

L1_CFG = TrainConfig(max_iterations=20000, tolerance=1e-12, learning_rate=1.0)


class TestRawScoreAndProba:
    def test_linear(self):
        assert raw_score(LinearModel([1.0, -2.0], 0.5), [2.0, 1.0]) == 0.5

    def test_empty_ensemble(self):
        m = TreeEnsemble((), 0.1, 0.3, 1.0, d=3)
        assert raw_score(m, [5.0, -1.0, 2.0]) == 0.3
        np.testing.assert_array_equal(raw_score(m, np.ones((4, 3))), np.full(4, 0.3))

    def test_zero_network(self):
        net = build_network(4, [{"type": "dense", "units": 3}, {"type": "relu"}, {"type": "dense", "units": 1}],
                            None, init="zeros")
        assert raw_score(net, [1.0, -2.0, 3.0, 4.0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ModelError, match="expects 2"):
            raw_score(LinearModel([1.0, 1.0], 0.0), [1.0, 2.0, 3.0])

    def test_proba_at_zero(self):
        assert predict_proba(LinearModel([0.0], 0.0), [1.0]) == 0.5

    def test_proba_tail_no_overflow(self):
        with np.errstate(over="raise"):
            p = predict_proba(LinearModel([1.0], 0.0), [40.0])
            q = predict_proba(LinearModel([1.0], 0.0), [-800.0])
        assert 1 - 1e-15 < p <= 1.0
        assert 0.0 <= q < 1e-300

    @pytest.mark.parametrize("s", [-5.0, -1.0, 0.0, 1.0, 5.0])
    def test_proba_matches_formula(self, s):
        assert abs(predict_proba(LinearModel([1.0], 0.0), [s]) - 1.0 / (1.0 + np.exp(-s))) < 1e-12


class TestL1Logistic:
    def test_above_threshold_all_zero(self, six_feature_data):
        lam = deactivation_threshold(six_feature_data.rows, six_feature_data.labels)
        for scale in (1.0, 1.5, 10.0):
            m = train_l1_logistic(six_feature_data, lam * scale, L1_CFG)
            assert np.all(m.weights == 0.0)
        # just below the threshold at least one coefficient activates
        assert np.any(train_l1_logistic(six_feature_data, lam * 0.9, L1_CFG).weights != 0.0)

    def test_intercept_only_solution_matches_label_rate(self, six_feature_data):
        m = train_l1_logistic(six_feature_data, 1e3, L1_CFG)
        assert abs(1 / (1 + np.exp(-m.intercept)) - six_feature_data.labels.mean()) < 1e-9

    def test_positive_association_gives_positive_weight(self, rng):
        x = rng.normal(size=300)
        y = (rng.random(300) < 1 / (1 + np.exp(-1.5 * x))).astype(int)
        X = x[:, None]
        data = make_dataset(X, y)
        # oracle: objective profile over a weight grid has its minimum at w > 0
        grid = np.linspace(-3, 3, 601)[:, None]
        F, _ = l1_objective_profile(grid, X, y.astype(float), 0.01)
        assert grid[np.argmin(F), 0] > 0
        assert train_l1_logistic(data, 0.01, L1_CFG).weights[0] > 0

    def test_two_feature_grid_oracle(self, rng):
        X = rng.normal(size=(60, 2))
        y = (rng.random(60) < 1 / (1 + np.exp(-(1.2 * X[:, 0] - 0.7 * X[:, 1] + 0.3)))).astype(float)
        lam = 0.02
        m = train_l1_logistic(make_dataset(X, y.astype(int)), lam, L1_CFG)
        _, f_grid = grid_minimum_2d(X, y, lam)
        f_ours = l1_objective(m, X, y)
        assert abs(f_ours - f_grid) <= 1e-6
        assert f_ours <= f_grid + 1e-9

    def test_objective_monotone(self, six_feature_data):
        trace = []
        train_l1_logistic(six_feature_data, 0.01, L1_CFG, callback=lambda i, f: trace.append(f))
        assert len(trace) > 5
        assert np.all(np.diff(trace) <= 0.0)

    def test_l1_norm_shrinks_with_lambda(self, six_feature_data):
        lams = [0.001, 0.005, 0.02, 0.05, 0.1, 0.2]
        norms = [np.abs(train_l1_logistic(six_feature_data, l, L1_CFG).weights).sum() for l in lams]
        for a, b in zip(norms, norms[1:]):
            assert b <= a + 1e-8

    def test_deterministic(self, six_feature_data):
        a = train_l1_logistic(six_feature_data, 0.01, L1_CFG)
        b = train_l1_logistic(six_feature_data, 0.01, L1_CFG)
        assert a.weights.tobytes() == b.weights.tobytes() and a.intercept == b.intercept

    def test_errors(self, six_feature_data):
        with pytest.raises(ModelError, match="empty"):
            train_l1_logistic(six_feature_data.subset(slice(0, 0)), 0.1)
        with pytest.raises(ModelError, match="nonnegative"):
            train_l1_logistic(six_feature_data, -1.0)


class TestGradientBoosting:
    def test_zero_rounds(self):
        data = make_dataset([[0.0], [1.0], [2.0], [3.0]], [0, 1, 0, 1])
        m = train_gbt(data, rounds=0, max_depth=2)
        assert m.base_score == 0.0
        np.testing.assert_array_equal(predict_proba(m, data.rows), np.full(4, 0.5))

    def test_single_stump_hand_computed(self):
        # base 0 -> p = 0.5, g = [.5, .5, -.5, -.5], h = .25 each, lambda = 1.
        # Best cut between x=1 and x=2: left G=1, H=.5 -> w=-1/1.5; right w=+1/1.5.
        data = make_dataset([[0.0], [1.0], [2.0], [3.0]], [0, 0, 1, 1])
        m = train_gbt(data, rounds=1, max_depth=1, cfg=TrainConfig(learning_rate=0.1), reg_lambda=1.0)
        (tree,) = m.trees
        assert tree.feature.tolist() == [0, -1, -1]
        assert tree.threshold[0] == 1.5
        assert tree.value[tree.left[0]] == pytest.approx(-2.0 / 3.0, abs=1e-15)
        assert tree.value[tree.right[0]] == pytest.approx(2.0 / 3.0, abs=1e-15)
        np.testing.assert_allclose(raw_score(m, data.rows), 0.1 * np.array([-2, -2, 2, 2]) / 3, atol=1e-15)

    def test_logloss_non_increasing(self, six_feature_data):
        trace = []
        train_gbt(six_feature_data, rounds=20, max_depth=3, callback=lambda r, l: trace.append(l))
        assert len(trace) == 21
        assert np.all(np.diff(trace) <= 0.0)

    def test_leaf_weights_closed_form(self, six_feature_data):
        X, y = six_feature_data.rows, six_feature_data.labels.astype(float)
        m = train_gbt(six_feature_data, rounds=8, max_depth=3, reg_lambda=0.7)
        for tree, raw in zip(m.trees, staged_raw(m, X)):
            p = 0.5 * (1 + np.tanh(0.5 * raw))
            g, h = p - y, p * (1 - p)
            leaves = tree.apply(X)
            for leaf in np.unique(leaves):
                mask = leaves == leaf
                assert tree.value[leaf] == -g[mask].sum() / (h[mask].sum() + 0.7)

    def test_depth_limits(self, six_feature_data):
        m = train_gbt(six_feature_data, rounds=5, max_depth=2)
        assert all(t.depth <= 2 for t in m.trees)
        stumps = train_gbt(six_feature_data, rounds=3, max_depth=0)
        assert all(t.n_nodes == 1 for t in stumps.trees)

    @pytest.mark.parametrize("label", [0, 1])
    def test_single_class_clips_base_score(self, label):
        data = make_dataset([[0.0], [1.0], [2.0]], [label] * 3)
        m = train_gbt(data, rounds=3, max_depth=2)
        assert m.base_score == (10.0 if label else -10.0)
        assert np.all(np.isfinite(raw_score(m, data.rows)))

    def test_stacked_prediction_matches_per_tree(self, six_feature_data):
        m = train_gbt(six_feature_data, rounds=10, max_depth=3)
        X = six_feature_data.rows
        per_tree = m.base_score + m.learning_rate * sum(t.predict(X) for t in m.trees)
        np.testing.assert_allclose(raw_score(m, X), per_tree, rtol=0, atol=1e-12)

    def test_training_deterministic(self, six_feature_data):
        a = train_gbt(six_feature_data, rounds=5)
        b = train_gbt(six_feature_data, rounds=5)
        assert json.dumps(model_to_dict(a)) == json.dumps(model_to_dict(b))

    def test_invalid_tree_feature(self):
        tree = RegressionTree([3, -1, -1], [0.0, 0, 0], [1, -1, -1], [2, -1, -1], [0, 1.0, 2.0])
        with pytest.raises(ModelError):
            TreeEnsemble((tree,), 0.1, 0.0, 1.0, d=2)


def _random_mlp(rng, sizes):
    layers = []
    for k in range(len(sizes) - 1):
        layers.append(Dense(rng.normal(size=(sizes[k + 1], sizes[k])), rng.normal(size=sizes[k + 1]) * 0.3))
        if k < len(sizes) - 2:
            layers.append(ReLU())
    return NeuralNet(tuple(layers))


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


class TestNeuralNet:
    def test_zero_init_zero_epochs(self, six_feature_data):
        net = train_nn(six_feature_data, cfg=TrainConfig(max_iterations=0), init="zeros")
        np.testing.assert_array_equal(predict_proba(net, six_feature_data.rows), 0.5)

    def test_forward_matches_plain_implementation(self, rng):
        net = _random_mlp(rng, [5, 7, 3, 1])
        X = rng.normal(size=(10, 5))
        np.testing.assert_allclose(raw_score(net, X), mlp_forward(net.params(), X), rtol=1e-13)

    def test_gradients_match_finite_differences(self, rng):
        net = _random_mlp(rng, [4, 6, 1])
        X = rng.normal(size=(8, 4))
        y = rng.integers(0, 2, 8).astype(float)
        _, grads = loss_and_grads(net, X, y)
        params = net.params()

        def loss(ps):
            return float(logloss(mlp_forward(ps, X), y))

        for a, p in enumerate(params):
            for i in range(p.size):
                fd = central_difference(loss, params, (a, i))
                assert _rel_err(grads[a].flat[i], fd) < 1e-4

    def test_conv_gradients_match_finite_differences(self, rng):
        net = build_network(7, [{"type": "conv1d", "channels": 2, "width": 3}, {"type": "relu"},
                                {"type": "dense", "units": 4}, {"type": "relu"}, {"type": "dense", "units": 1}],
                            np.random.default_rng(3))
        X = rng.normal(size=(8, 7))
        y = rng.integers(0, 2, 8).astype(float)
        _, grads = loss_and_grads(net, X, y)
        params = net.params()

        def loss(ps):
            return loss_and_grads(net.with_params(ps), X, y)[0]

        for a, p in enumerate(params):
            for i in range(p.size):
                assert _rel_err(grads[a].flat[i], central_difference(loss, params, (a, i))) < 1e-4

    def test_conv_layer_matches_direct_convolution(self, rng):
        k = rng.normal(size=(2, 1, 3))
        b = rng.normal(size=2)
        layer = Conv1d(k, b, 6)
        x = rng.normal(size=6)
        direct = np.array([[np.dot(k[o, 0], x[p:p + 3]) + b[o] for p in range(4)] for o in range(2)]).ravel()
        np.testing.assert_allclose(layer.matrix @ x + layer.offset, direct, rtol=1e-13)

    def test_training_reduces_loss(self, rng):
        X = rng.normal(size=(200, 2))
        y = (X[:, 0] + X[:, 1] > 0).astype(int)
        trace = []
        train_nn(make_dataset(X, y), cfg=TrainConfig(max_iterations=200, learning_rate=0.1, batch_size=32, seed=4),
                 callback=lambda e, l: trace.append(l))
        assert trace[-1] < trace[0]

    def test_deterministic(self, six_feature_data):
        cfg = TrainConfig(max_iterations=3, seed=17)
        a = train_nn(six_feature_data, cfg=cfg)
        b = train_nn(six_feature_data, cfg=cfg)
        assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
        c = train_nn(six_feature_data, cfg=TrainConfig(max_iterations=3, seed=18))
        assert not all(np.array_equal(p, q) for p, q in zip(a.params(), c.params()))

    def test_uniform_init_bounds(self):
        net = build_network(9, [{"type": "dense", "units": 50}, {"type": "relu"}, {"type": "dense", "units": 1}],
                            np.random.default_rng(0))
        assert np.max(np.abs(net.layers[0].weight)) <= 1 / 3
        assert np.max(np.abs(net.layers[2].weight)) <= 1 / np.sqrt(50)

    @pytest.mark.parametrize(
        "arch, match",
        [
            ([{"type": "dense", "units": 4}], "exactly one raw score"),
            ([{"type": "dense", "units": 4}, {"type": "sigmoid"}, {"type": "dense", "units": 1}], "relu"),
            ([{"type": "conv1d", "channels": 1, "width": 9}, {"type": "dense", "units": 1}], "width"),
        ],
    )
    def test_bad_architectures(self, six_feature_data, arch, match):
        with pytest.raises(ModelError, match=match):
            train_nn(six_feature_data, arch, TrainConfig(max_iterations=1))

    def test_incompatible_layers(self):
        with pytest.raises(ModelError, match="does not match"):
            NeuralNet((Dense(np.ones((3, 2)), np.zeros(3)), Dense(np.ones((1, 4)), np.zeros(1))))

    def test_diverging_step_raises(self, six_feature_data):
        with np.errstate(all="ignore"), pytest.raises(ModelError, match="non-finite"):
            train_nn(six_feature_data, cfg=TrainConfig(max_iterations=5, learning_rate=1e200))


class TestSerialization:
    def _models(self, data):
        return [
            train_l1_logistic(data, 0.01, standardization=standardize(data)[1]),
            train_gbt(data, rounds=4),
            train_nn(data, [{"type": "conv1d", "channels": 2, "width": 3}, {"type": "relu"},
                            {"type": "dense", "units": 1}], TrainConfig(max_iterations=2)),
        ]

    def test_round_trip_exact(self, six_feature_data, tmp_path):
        for k, m in enumerate(self._models(six_feature_data)):
            back = load_model(save_model(m, tmp_path / f"m{k}.json"))
            assert type(back) is type(m)
            assert model_to_dict(back) == model_to_dict(m)
            assert raw_score(back, six_feature_data.rows).tobytes() == raw_score(m, six_feature_data.rows).tobytes()

    def test_rejects_foreign_documents(self):
        with pytest.raises(ModelError):
            model_from_dict({"schema": "other"})
        with pytest.raises(ModelError, match="version"):
            model_from_dict({"schema": "xai-concord/model", "version": 99})

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=8),
           st.floats(allow_nan=False, allow_infinity=False))
    def test_linear_any_finite_parameters(self, w, b):
        m = LinearModel(w, b, 0.5)
        back = model_from_dict(json.loads(json.dumps(model_to_dict(m))))
        assert back.weights.tobytes() == m.weights.tobytes() and back.intercept == m.intercept


def test_training_logloss_helper(six_feature_data):
    m = train_l1_logistic(six_feature_data, 0.01)
    s = six_feature_data.rows @ m.weights + m.intercept
    assert training_logloss(m, six_feature_data.rows, six_feature_data.labels) == pytest.approx(
        float(logloss(s, six_feature_data.labels)), abs=1e-12)


def test_synthetic_models_learn_signal():
    spec = SyntheticSpec(d=3, n=1500, beta=[2.5, 0, 0], seed=4)
    data, _ = standardize(synthesize(spec))
    for m in (train_l1_logistic(data, 0.01), train_gbt(data, 20, 2), train_nn(data, cfg=TrainConfig(max_iterations=20))):
        acc = np.mean((raw_score(m, data.rows) > 0) == data.labels)
        assert acc > 0.75
