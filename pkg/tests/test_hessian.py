"""Second-order criteria against analytic quadratic oracles.

For a quadratic loss E(v) = 0.5 (v - w)^T H (v - w) minimized at the current
weights w, deleting weight q (and for OBS, compensating the survivors) costs
exactly the predicted saliency, so these tests have closed-form answers.
"""

import numpy as np
import pytest
from scipy.stats import spearmanr

from prunekit.nn import DenseNet, FrameDataset, TrainConfig, cross_entropy, train_sgd
from prunekit.pruning import (
    FixedCount,
    NumericalError,
    PruneMask,
    PruneRunConfig,
    Schedule,
    obd_scores,
    obs_apply_update,
    obs_delta,
    obs_scores,
    prune_retrain_loop,
    saliency_obd,
    saliency_obs,
)


def quadratic_loss(H, w_min, v):
    d = np.asarray(v, float) - np.asarray(w_min, float)
    return 0.5 * d @ H @ d


class TestObdQuadratic:
    def test_zero_weight_zero_saliency(self):
        assert obd_scores(np.array([3.0]), np.array([0.0]))[0] == 0.0

    def test_one_parameter_toy(self):
        # E(v) = (v - 2)^2 / 2 at w = 2: h = 1, saliency = 1 * 4 / 2 = 2,
        # and setting w to 0 raises the loss by exactly 2
        H = np.array([[1.0]])
        w = np.array([2.0])
        s = obd_scores(np.diag(H), w)
        assert s[0] == pytest.approx(2.0, abs=1e-15)
        measured = quadratic_loss(H, w, [0.0]) - quadratic_loss(H, w, w)
        assert measured == pytest.approx(2.0, abs=1e-15)

    def test_exact_for_diagonal_quadratics(self):
        rng = np.random.default_rng(0)
        h = rng.uniform(0.5, 4.0, size=6)
        w = rng.normal(size=6)
        s = obd_scores(h, w)
        H = np.diag(h)
        for q in range(6):
            v = w.copy()
            v[q] = 0.0
            measured = quadratic_loss(H, w, v)
            assert s[q] == pytest.approx(measured, abs=1e-12)


class TestObsQuadratic:
    def test_two_weight_hand_linear_algebra(self):
        # H = [[2, 0.6], [0.6, 1]], w = (1, -2)
        # det = 1.64, Hinv = [[1, -0.6], [-0.6, 2]] / 1.64
        # L_0 = 1 / (2 * (1/1.64)) = 0.82,  L_1 = 4 / (2 * (2/1.64)) = 1.64
        H = np.array([[2.0, 0.6], [0.6, 1.0]])
        w = np.array([1.0, -2.0])
        scores, inv = obs_scores(H, w)
        np.testing.assert_allclose(inv, np.array([[1.0, -0.6], [-0.6, 2.0]]) / 1.64, atol=1e-12)
        assert scores[0] == pytest.approx(0.82, abs=1e-12)
        assert scores[1] == pytest.approx(1.64, abs=1e-12)
        # delta for deleting q=0: -(1 / (1/1.64)) * Hinv e_0 = (-1, 0.6)
        np.testing.assert_allclose(obs_delta(0, w, inv), [-1.0, 0.6], atol=1e-12)

    def test_predicted_equals_measured_on_random_quadratics(self):
        rng = np.random.default_rng(1)
        for trial in range(10):
            n = int(rng.integers(2, 7))
            A = rng.normal(size=(n, n))
            H = A @ A.T + 0.5 * np.eye(n)
            w = rng.normal(size=n)
            scores, inv = obs_scores(H, w)
            for q in range(n):
                v = w + obs_delta(q, w, inv)
                assert v[q] == pytest.approx(0.0, abs=1e-10)
                measured = quadratic_loss(H, w, v)
                assert measured == pytest.approx(scores[q], abs=1e-8)

    def test_obs_equals_obd_for_diagonal_hessian(self):
        rng = np.random.default_rng(2)
        h = rng.uniform(0.2, 5.0, size=8)
        w = rng.normal(size=8)
        obs, inv = obs_scores(np.diag(h), w)
        obd = obd_scores(h, w)
        np.testing.assert_allclose(obs, obd, atol=1e-9)
        # and the compensating update touches nothing else
        for q in range(8):
            delta = obs_delta(q, w, inv)
            others = np.delete(delta, q)
            np.testing.assert_allclose(others, 0.0, atol=1e-12)

    def test_non_positive_definite_rejected(self):
        H = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
        with pytest.raises(NumericalError):
            obs_scores(H, np.array([1.0, 1.0]))


def tiny_task(seed=0, n=40):
    rng = np.random.default_rng(seed)
    X = np.vstack(
        [
            rng.normal(loc=(-1.2, 0.8), scale=0.5, size=(n, 2)),
            rng.normal(loc=(1.2, -0.8), scale=0.5, size=(n, 2)),
        ]
    )
    y = np.array([0] * n + [1] * n)
    return FrameDataset(X, y, 2)


def trained_242(seed=0):
    data = tiny_task(seed)
    net = DenseNet.init_random(2, [4], 2, seed=seed + 1)
    train_sgd(net, data, TrainConfig(0.5, 60, 16, seed=seed + 2))
    return net, data


class TestObdOnNetwork:
    def test_diagonals_are_nonnegative(self):
        net, data = trained_242()
        _, info = saliency_obd(net, data)
        for h in info.diagonals:
            assert (h >= 0.0).all()

    def test_rank_correlates_with_deletion_oracle(self):
        net, data = trained_242()
        sal, _ = saliency_obd(net, data)
        base = cross_entropy(net, data)
        scores, deltas = [], []
        for li, layer in enumerate(net.layers):
            for i in range(layer.out_dim):
                for j in range(layer.in_dim):
                    orig = layer.weights[i, j]
                    layer.weights[i, j] = 0.0
                    deltas.append(cross_entropy(net, data) - base)
                    layer.weights[i, j] = orig
                    scores.append(sal.scores[li][i, j])
        rho = spearmanr(scores, deltas).statistic
        assert rho >= 0.8


class TestObsOnNetwork:
    def test_layer_guard_refuses_big_layers(self):
        net = DenseNet.init_random(100, [64], 3, seed=0)  # 6400 weights
        data = tiny_task()
        with pytest.raises(ValueError, match="desk-scale guard"):
            saliency_obs(net, FrameDataset(np.zeros((2, 100)), np.array([0, 1]), 3), 0)

    def test_scores_positive_for_nonzero_weights(self):
        net, data = trained_242()
        sal, info = saliency_obs(net, data, 0)
        w = net.layers[0].weights
        assert (sal.scores[0][w != 0] > 0.0).all()
        assert np.isinf(sal.scores[1]).all()
        assert info.damping > 0

    def test_obs_diag_matches_obd_diag(self):
        net, data = trained_242()
        _, obd_info = saliency_obd(net, data)
        from prunekit.pruning import layer_hessian

        for li in range(len(net.layers)):
            H = layer_hessian(net, data, li)
            np.testing.assert_allclose(
                np.diag(H), obd_info.diagonals[li].ravel(), rtol=1e-9, atol=1e-12
            )

    def test_apply_update_zeroes_weight_and_respects_mask(self):
        net, data = trained_242()
        mask = PruneMask.ones_like(net)
        # pre-mask one entry; its update component must be discarded
        mask.layers[0][0, 0] = 0
        net.layers[0].weights[0, 0] = 0.0
        sal, info = saliency_obs(net, data, 0, damping=1e-3)
        q = 3
        obs_apply_update(net, mask, q, info)
        flat_w = net.layers[0].weights.ravel()
        assert flat_w[q] == 0.0
        assert mask.layers[0].ravel()[q] == 0
        assert net.layers[0].weights[0, 0] == 0.0  # stayed masked

    def test_prune_all_weights_one_by_one(self):
        # 3-weight toy: after deleting everything the loss equals the
        # all-zero-layer network's loss exactly
        rng = np.random.default_rng(4)
        from prunekit.nn import Layer

        net = DenseNet(
            [Layer(rng.normal(size=(1, 3)), np.array([0.3]), "sigmoid")], 3
        )
        data = FrameDataset(rng.normal(size=(20, 3)), rng.integers(0, 1, 20), 1)
        mask = PruneMask.ones_like(net)
        for _ in range(3):
            sal, info = saliency_obs(net, data, 0, damping=1e-6)
            flat_mask = mask.layers[0].ravel()
            candidates = [q for q in range(3) if flat_mask[q] == 1]
            q = min(candidates, key=lambda q: sal.scores[0].ravel()[q])
            obs_apply_update(net, mask, q, info)
        zero_net = DenseNet(
            [Layer(np.zeros((1, 3)), np.array([0.3]), "sigmoid")], 3
        )
        assert cross_entropy(net, data) == pytest.approx(cross_entropy(zero_net, data), abs=1e-12)
        assert (net.layers[0].weights == 0.0).all()

    def test_obs_criterion_in_loop(self):
        net, data = trained_242()
        cfg = PruneRunConfig(
            criterion="obs",
            schedule=Schedule(FixedCount(2), iterations_between_prunes=2),
            target_remain_rate=0.5,
            retrain=TrainConfig(0.2, 2, 16, seed=0),
        )
        net, mask, history = prune_retrain_loop(net, data, cfg)
        assert mask.remain_rate() <= 0.5
        assert history.status == "target_reached"
        for layer, m in zip(net.layers, mask.layers):
            assert (layer.weights[m == 0] == 0.0).all()
