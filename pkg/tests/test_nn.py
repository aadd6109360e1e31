import math

import numpy as np
import pytest

from prunekit.nn import (
    DenseNet,
    FrameDataset,
    Layer,
    ShapeError,
    TrainConfig,
    cross_entropy,
    forward,
    frame_accuracy,
    loss_gradients,
    param_count,
    train_sgd,
)
from prunekit.pruning import PruneMask


def make_net(layer_specs, input_dim):
    layers = [Layer(np.array(w, float), np.array(b, float), act) for w, b, act in layer_specs]
    return DenseNet(layers, input_dim)


class TestForward:
    def test_identity_single_layer(self):
        net = make_net([([[1, 0], [0, 1]], [0, 0], "identity")], 2)
        trace = forward(net, [1.0, 2.0])
        np.testing.assert_array_equal(trace.output, [1.0, 2.0])

    def test_softmax_symmetry(self):
        net = make_net([([[0, 0], [0, 0], [0, 0]], [0, 0, 0], "softmax")], 2)
        out = forward(net, [3.0, -1.0]).output
        np.testing.assert_allclose(out, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_two_layer_matches_hand_computation(self):
        # by hand: z1 = (1*1 - 1*2 + 0.5, 0.5*1 + 2*2 - 1) = (-0.5, 3.5)
        #          a1 = relu(z1) = (0, 3.5)
        #          z2 = (2*0 + 1*3.5 + 0, -1*0 + 1*3.5 + 1) = (3.5, 4.5)
        net = make_net(
            [
                ([[1, -1], [0.5, 2]], [0.5, -1], "relu"),
                ([[2, 1], [-1, 1]], [0, 1], "identity"),
            ],
            2,
        )
        trace = forward(net, [1.0, 2.0])
        np.testing.assert_allclose(trace.pre_activations[0], [-0.5, 3.5], atol=1e-15)
        np.testing.assert_allclose(trace.post_activations[0], [0.0, 3.5], atol=1e-15)
        np.testing.assert_allclose(trace.output, [3.5, 4.5], atol=1e-15)

    def test_dimension_mismatch_rejected(self):
        net = make_net([([[1, 0], [0, 1]], [0, 0], "identity")], 2)
        with pytest.raises(ShapeError):
            forward(net, [1.0, 2.0, 3.0])

    def test_softmax_sums_to_one_random_logits(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            dims = rng.integers(2, 9, size=3)
            net = DenseNet.init_random(int(dims[0]), [int(dims[1])], int(dims[2]), seed=1)
            out = forward(net, rng.normal(size=int(dims[0]))).output
            assert out.min() >= 0.0
            assert abs(out.sum() - 1.0) < 1e-9

    def test_softmax_only_on_final_layer(self):
        with pytest.raises(ValueError):
            make_net(
                [([[1.0, 0], [0, 1]], [0, 0], "softmax"), ([[1.0, 0]], [0], "identity")],
                2,
            )


class TestCrossEntropy:
    def test_uniform_posteriors(self):
        net = make_net([([[0, 0], [0, 0], [0, 0]], [0, 0, 0], "softmax")], 2)
        data = FrameDataset(np.zeros((5, 2)), np.array([0, 1, 2, 0, 1]), 3)
        assert cross_entropy(net, data) == pytest.approx(math.log(3), abs=1e-12)

    def test_perfect_predictor_near_zero(self):
        net = make_net([([[40, 0], [0, 40]], [0, 0], "softmax")], 2)
        data = FrameDataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]), 2)
        assert cross_entropy(net, data) < 1e-12

    def test_matches_independent_scalar_computation(self):
        # single softmax layer; posteriors computed with plain math below
        w = np.array([[0.3, -0.2], [0.1, 0.4]])
        b = np.array([0.05, -0.1])
        X = np.array([[1.0, 2.0], [-0.5, 0.25]])
        y = [0, 1]
        expected = 0.0
        for x, label in zip(X, y):
            z = [w[0, 0] * x[0] + w[0, 1] * x[1] + b[0], w[1, 0] * x[0] + w[1, 1] * x[1] + b[1]]
            denom = math.exp(z[0]) + math.exp(z[1])
            expected += -math.log(math.exp(z[label]) / denom)
        expected /= 2
        net = make_net([(w, b, "softmax")], 2)
        data = FrameDataset(X, np.array(y), 2)
        assert cross_entropy(net, data) == pytest.approx(expected, rel=1e-12)

    def test_clamped_loss_stays_finite(self):
        net = make_net([([[500.0, 0], [0, 500.0]], [0, 0], "softmax")], 2)
        data = FrameDataset(np.array([[1.0, 0.0]]), np.array([1]), 2)  # wrong label
        val = cross_entropy(net, data)
        assert math.isfinite(val)
        assert val == pytest.approx(-math.log(1e-12), rel=1e-6)


class TestFrameAccuracy:
    def test_constant_predictor(self):
        net = make_net([([[1, 0], [0, 0]], [1.0, 0.0], "softmax")], 2)
        labels = np.array([0] * 4 + [1] * 6)
        data = FrameDataset(np.zeros((10, 2)), labels, 2)
        assert frame_accuracy(net, data) == pytest.approx(0.4)

    def test_perfect_oracle(self):
        net = make_net([([[10, 0], [0, 10]], [0, 0], "softmax")], 2)
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        data = FrameDataset(X, np.array([0, 1, 0]), 2)
        assert frame_accuracy(net, data) == 1.0

    def test_three_frame_manual_count(self):
        # frame posteriors by hand: argmax = [1, 0, 0]; labels [1, 0, 1] -> 2/3
        net = make_net([([[1, 0], [0, 1]], [0, 0], "softmax")], 2)
        X = np.array([[0.0, 1.0], [2.0, 0.5], [3.0, -1.0]])
        data = FrameDataset(X, np.array([1, 0, 1]), 2)
        assert frame_accuracy(net, data) == pytest.approx(2 / 3)

    def test_ties_break_to_lowest_index(self):
        net = make_net([([[0, 0], [0, 0]], [0, 0], "softmax")], 2)
        data = FrameDataset(np.zeros((2, 2)), np.array([0, 1]), 2)
        assert frame_accuracy(net, data) == pytest.approx(0.5)

    def test_empty_dataset_rejected(self):
        net = make_net([([[1, 0], [0, 1]], [0, 0], "softmax")], 2)
        data = FrameDataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
        with pytest.raises(ValueError):
            frame_accuracy(net, data)


class TestParamCount:
    def test_single_layer(self):
        net = make_net([([[1, 2], [3, 4]], [0, 0], "identity")], 2)
        assert param_count(net) == 6

    def test_four_hidden_512(self):
        # 858*512+512 + 3*(512*512+512) + 512*3+3 = 1229315
        net = DenseNet.init_random(858, [512, 512, 512, 512], 3, seed=0)
        assert param_count(net) == 1_229_315

    def test_three_hidden_512(self):
        # 858*512+512 + 2*(512*512+512) + 512*3+3 = 966659
        net = DenseNet.init_random(858, [512, 512, 512], 3, seed=0)
        assert param_count(net) == 439_808 + 2 * 262_656 + 1_539
        assert param_count(net) == 966_659


class TestGradients:
    def numeric_gradient(self, net, data, layer, i, j, step=1e-4):
        w = net.layers[layer].weights
        orig = w[i, j]
        w[i, j] = orig + step
        up = cross_entropy(net, data)
        w[i, j] = orig - step
        down = cross_entropy(net, data)
        w[i, j] = orig
        return (up - down) / (2 * step)

    @pytest.mark.parametrize("hidden_act", ["relu", "sigmoid"])
    def test_matches_central_differences(self, hidden_act):
        rng = np.random.default_rng(3)
        net = DenseNet.init_random(5, [8, 6], 3, seed=11, hidden_activation=hidden_act)
        data = FrameDataset(rng.normal(size=(12, 5)), rng.integers(0, 3, 12), 3)
        grads = loss_gradients(net, data)
        for layer in range(len(net.layers)):
            dw = grads[layer][0]
            for i in range(dw.shape[0]):
                for j in range(dw.shape[1]):
                    num = self.numeric_gradient(net, data, layer, i, j)
                    assert abs(dw[i, j] - num) <= 1e-4 * (1.0 + max(abs(dw[i, j]), abs(num)))

    def test_bias_gradients(self):
        rng = np.random.default_rng(4)
        net = DenseNet.init_random(4, [5], 2, seed=2)
        data = FrameDataset(rng.normal(size=(9, 4)), rng.integers(0, 2, 9), 2)
        grads = loss_gradients(net, data)
        step = 1e-4
        for layer in range(len(net.layers)):
            db = grads[layer][1]
            for i in range(len(db)):
                b = net.layers[layer].bias
                orig = b[i]
                b[i] = orig + step
                up = cross_entropy(net, data)
                b[i] = orig - step
                down = cross_entropy(net, data)
                b[i] = orig
                num = (up - down) / (2 * step)
                assert abs(db[i] - num) <= 1e-4 * (1.0 + max(abs(db[i]), abs(num)))


def blob_data(seed=0, n_per_class=200):
    rng = np.random.default_rng(seed)
    a = rng.normal(loc=(-2.0, -2.0), scale=0.4, size=(n_per_class, 2))
    b = rng.normal(loc=(2.0, 2.0), scale=0.4, size=(n_per_class, 2))
    X = np.vstack([a, b])
    y = np.array([0] * n_per_class + [1] * n_per_class)
    order = rng.permutation(len(y))
    return FrameDataset(X[order], y[order], 2)


class TestTrainSgd:
    def test_separable_blobs_reach_high_accuracy(self):
        data = blob_data()
        # oracle: logistic regression separates the same data
        from sklearn.linear_model import LogisticRegression

        oracle = LogisticRegression().fit(data.features, data.labels)
        assert oracle.score(data.features, data.labels) >= 0.99

        net = DenseNet.init_random(2, [8], 2, seed=5)
        cfg = TrainConfig(learning_rate=0.5, epochs=30, batch_size=32, seed=5)
        report = train_sgd(net, data, cfg)
        assert frame_accuracy(net, data) >= 0.99
        assert report.final_loss <= report.initial_loss

    def test_zero_epochs_leaves_network_unchanged(self):
        data = blob_data(1)
        net = DenseNet.init_random(2, [4], 2, seed=9)
        before = [l.weights.copy() for l in net.layers]
        initial = cross_entropy(net, data)
        report = train_sgd(net, data, TrainConfig(0.1, 0, 16, seed=0))
        for w, l in zip(before, net.layers):
            np.testing.assert_array_equal(w, l.weights)
        assert report.final_loss == initial
        assert report.epoch_losses == []

    def test_all_ones_mask_is_neutral(self):
        data = blob_data(2)
        cfg = TrainConfig(learning_rate=0.3, epochs=5, batch_size=16, seed=3)
        net_a = DenseNet.init_random(2, [6], 2, seed=8)
        net_b = net_a.copy()
        train_sgd(net_a, data, cfg)
        train_sgd(net_b, data, cfg, mask=PruneMask.ones_like(net_b))
        for la, lb in zip(net_a.layers, net_b.layers):
            np.testing.assert_array_equal(la.weights, lb.weights)
            np.testing.assert_array_equal(la.bias, lb.bias)

    def test_masked_weights_stay_exactly_zero(self):
        data = blob_data(3)
        net = DenseNet.init_random(2, [6], 2, seed=8)
        mask = PruneMask.ones_like(net)
        mask.layers[0][1, :] = 0
        mask.layers[1][0, 2] = 0
        net.layers[0].weights[1, :] = 0.0
        net.layers[1].weights[0, 2] = 0.0
        cfg = TrainConfig(learning_rate=0.3, epochs=1, batch_size=8, seed=3)
        for _ in range(5):
            train_sgd(net, data, cfg, mask=mask)
            assert (net.layers[0].weights[1, :] == 0.0).all()
            assert net.layers[1].weights[0, 2] == 0.0

    def test_same_seed_is_bit_reproducible(self):
        data = blob_data(4)
        cfg = TrainConfig(learning_rate=0.2, epochs=4, batch_size=13, seed=21)
        net_a = DenseNet.init_random(2, [7, 5], 2, seed=1)
        net_b = DenseNet.init_random(2, [7, 5], 2, seed=1)
        train_sgd(net_a, data, cfg)
        train_sgd(net_b, data, cfg)
        for la, lb in zip(net_a.layers, net_b.layers):
            assert la.weights.tobytes() == lb.weights.tobytes()
            assert la.bias.tobytes() == lb.bias.tobytes()

    def test_empty_dataset_rejected(self):
        net = DenseNet.init_random(2, [4], 2, seed=0)
        data = FrameDataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
        with pytest.raises(ValueError):
            train_sgd(net, data, TrainConfig(0.1, 1, 8, seed=0))
