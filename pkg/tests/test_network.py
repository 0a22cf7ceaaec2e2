import math

import numpy as np
import pytest

from helpers import composition_errors, entrywise_fd, relative_error, tiny_network
from layerprobe import network, ops
from layerprobe.errors import InvalidArgumentError, TrainingDivergedError
from layerprobe.network import NetConfig, TrainConfig


def small_config(**kw):
    base = dict(width=4, classes=3, input_channels=2, precision="float64", seed=3)
    base.update(kw)
    return NetConfig(**base)


class TestParameters:
    @pytest.mark.parametrize("K,expected", [(512, 28_330_496), (1, 145)])
    def test_param_count_values(self, K, expected):
        assert network.param_count(K, 10) == expected

    @pytest.mark.parametrize("K", [1, 16, 32])
    def test_param_count_matches_built(self, K):
        params = network.build(NetConfig(width=K))
        assert params.parameter_count() == network.param_count(K, 10)

    def test_shapes_k32(self):
        p = network.build(NetConfig(width=32))
        assert p.classifier.shape == (32, 10)
        assert p.kernels[0].shape == (3, 3, 3, 32)
        assert all(k.shape == (3, 3, 32, 32) for k in p.kernels[1:])
        assert len(p.kernels) == len(p.norm_stats) == 13

    def test_same_seed_identical(self):
        a, b = network.build(NetConfig(width=8, seed=5)), network.build(NetConfig(width=8, seed=5))
        for x, y in zip(a.weights(), b.weights()):
            assert x.tobytes() == y.tobytes()
        c = network.build(NetConfig(width=8, seed=6))
        assert a.kernels[1].tobytes() != c.kernels[1].tobytes()

    def test_init_std(self):
        p = network.build(NetConfig(width=32))
        assert abs(p.kernels[1].std() / math.sqrt(2 / 288) - 1) < 0.05
        stats = p.norm_stats[0]
        assert not stats.mean.any() and np.all(stats.var == 1)

    def test_invalid_configs(self):
        for kw in (dict(width=0), dict(nonlinearity="tanh"), dict(nonlinearity="relu-degree", degree=9, width=4),
                   dict(norm_mode="none"), dict(dropout_rate=1.0), dict(precision="float16")):
            with pytest.raises(InvalidArgumentError):
                NetConfig(**kw).validate()


class TestForward:
    def test_feature_width_and_spatial_sizes(self, rng):
        config = NetConfig(width=32)
        params = network.build(config)
        x = rng.standard_normal((2, 32, 32, 3)).astype(np.float32)
        logits, feats = network.forward(params, config, x, taps=[13])
        assert logits.shape == (2, 10) and feats[13].shape == (2, 32)
        p = network._run(params, config, x, "eval", None, keep_cache=False)
        assert p.activations[6].shape[1:3] == (16, 16)
        assert p.activations[10].shape[1:3] == (8, 8)
        assert p.activations[13].shape[1:3] == (8, 8)

    def test_eval_deterministic_and_batch_independent(self, rng):
        config = small_config()
        params = network.build(config)
        x = rng.standard_normal((5, 8, 8, 2))
        a, _ = network.forward(params, config, x)
        b, _ = network.forward(params, config, x)
        assert a.tobytes() == b.tobytes()
        alone, _ = network.forward(params, config, x[2:3])
        np.testing.assert_allclose(alone[0], a[2], rtol=1e-12, atol=1e-14)

    def test_depth_zero_is_input_mean(self, rng):
        config = small_config()
        x = rng.standard_normal((3, 8, 8, 2))
        _, feats = network.forward(network.build(config), config, x, taps=[0])
        np.testing.assert_allclose(feats[0], x.mean(axis=(1, 2)))

    def test_invalid_tap(self, rng):
        config = small_config()
        with pytest.raises(InvalidArgumentError):
            network.forward(network.build(config), config, np.zeros((1, 8, 8, 2)), taps=[14])
        with pytest.raises(InvalidArgumentError):
            network.forward(network.build(config), config, np.zeros((1, 2, 2, 2)))

    def test_relu_degree_full_equals_relu(self, rng):
        x = rng.standard_normal((3, 8, 8, 2))
        a_cfg, b_cfg = small_config(), small_config(nonlinearity="relu-degree", degree=4)
        a, fa = network.forward(network.build(a_cfg), a_cfg, x, taps=range(14))
        b, fb = network.forward(network.build(b_cfg), b_cfg, x, taps=range(14))
        assert a.tobytes() == b.tobytes()
        assert all(fa[d].tobytes() == fb[d].tobytes() for d in fa)

    def test_first_layer_always_relu(self, rng):
        config = small_config(nonlinearity="rho-sqrt")
        p = network._run(network.build(config), config, rng.standard_normal((2, 8, 8, 2)), "eval", None, False)
        assert np.all(p.activations[1] >= 0)
        assert np.any(p.activations[2] < 0)


class TestTraining:
    def test_lr_schedule(self):
        tc = TrainConfig()
        assert network.lr_at(0, tc) == 0.25
        assert network.lr_at(9999, tc) == 0.25
        assert network.lr_at(10_000, tc) == 0.125
        assert network.lr_at(35_000, tc) == 0.03125

    def test_zero_lr_leaves_weights(self, rng):
        config = small_config()
        params = network.build(config)
        tc = TrainConfig(base_lr=0.0)
        x, y = rng.standard_normal((4, 8, 8, 2)), rng.integers(0, 3, 4)
        res = network.train_step(params, config, tc, x, y, network.init_velocity(params), 0, rng)
        for a, b in zip(params.weights(), res.params.weights()):
            np.testing.assert_array_equal(a, b)

    def test_memorize_one_example(self, rng):
        config = small_config(dropout_rate=0.0)
        params = network.build(config)
        tc = TrainConfig(base_lr=0.05)
        x, y = rng.standard_normal((1, 8, 8, 2)), np.array([1])
        velocity = network.init_velocity(params)
        for it in range(200):
            res = network.train_step(params, config, tc, x, y, velocity, it, rng)
            params, velocity = res.params, res.velocity
        loss, _, _, _ = network.loss_and_grads(params, config, x, y)
        assert loss < 0.01

    def test_classifier_gradient_entrywise(self):
        config, params, x, y = tiny_network(11)
        config.dropout_rate = 0.0

        def loss(w):
            trial = params.copy()
            trial.classifier = w
            return network.loss_and_grads(trial, config, x, y)[0]

        _, _, grads, _ = network.loss_and_grads(params, config, x, y)
        assert relative_error(grads[-1], entrywise_fd(loss, params.classifier.copy())) < 1e-6

    @pytest.mark.parametrize("nonlinearity", ["relu", "rho-sqrt"])
    def test_full_network_gradient(self, nonlinearity):
        errors, _ = composition_errors(nonlinearity, "mean-variance", 3)
        assert max(errors) < 1e-6

    @pytest.mark.parametrize("lr", [1e-3, 1e-4])
    def test_small_step_decreases_frozen_batch_loss(self, rng, lr):
        config = small_config(dropout_rate=0.0)
        params = network.build(config)
        tc = TrainConfig(base_lr=lr, momentum=0.0, weight_decay=0.0)
        x, y = rng.standard_normal((6, 8, 8, 2)), rng.integers(0, 3, 6)
        before = network.loss_and_grads(params, config, x, y)[0]
        res = network.train_step(params, config, tc, x, y, network.init_velocity(params), 0, rng)
        after = network.loss_and_grads(res.params, config, x, y)[0]
        assert after < before

    def test_weight_decay_and_momentum_update(self, rng):
        config = small_config(dropout_rate=0.0)
        params = network.build(config)
        tc = TrainConfig(base_lr=0.1, momentum=0.9, weight_decay=0.01)
        x, y = rng.standard_normal((2, 8, 8, 2)), rng.integers(0, 3, 2)
        _, _, grads, _ = network.loss_and_grads(params, config, x, y)
        v0 = [np.full_like(w, 0.5) for w in params.weights()]
        res = network.train_step(params, config, tc, x, y, [v.copy() for v in v0], 0, rng)
        for w, g, v, w_new, v_new in zip(params.weights(), grads, v0, res.params.weights(), res.velocity):
            np.testing.assert_allclose(v_new, 0.9 * v - 0.1 * (g + 0.01 * w), rtol=1e-12, atol=1e-15)
            np.testing.assert_allclose(w_new, w + v_new, rtol=1e-12, atol=1e-15)

    def test_divergence_raises_with_iteration(self, rng):
        config = small_config()
        params = network.build(config)
        x = rng.standard_normal((2, 8, 8, 2))
        x[0, 0, 0, 0] = np.nan
        with pytest.raises(TrainingDivergedError) as info:
            network.train_step(params, config, TrainConfig(), x, np.array([0, 1]),
                               network.init_velocity(params), 17, rng)
        assert info.value.iteration == 17

    def test_train_is_reproducible(self, rng):
        config = small_config(precision="float32")
        tc = TrainConfig(batch_size=4, total_iterations=3, seed=9)
        x, y = rng.standard_normal((10, 8, 8, 2)).astype(np.float32), rng.integers(0, 3, 10)
        a = network.train(network.build(config), config, tc, x, y)
        b = network.train(network.build(config), config, tc, x, y)
        for u, v in zip(a.weights(), b.weights()):
            assert u.tobytes() == v.tobytes()


class TestAugment:
    def test_identity_crop(self, rng):
        img = rng.standard_normal((1, 8, 8, 3))
        np.testing.assert_array_equal(network.flip_crop(img, False, 4, 4), img)

    def test_flip_involution(self, rng):
        img = rng.standard_normal((1, 8, 8, 3))
        twice = network.flip_crop(network.flip_crop(img, True, 4, 4), True, 4, 4)
        np.testing.assert_array_equal(twice, img)

    def test_shape_preserved(self, rng):
        img = rng.standard_normal((1, 6, 9, 2))
        for _ in range(20):
            assert network.augment(img, rng).shape == img.shape

    def test_crop_shifts_with_zero_fill(self):
        img = np.ones((1, 4, 4, 1))
        out = network.flip_crop(img, False, 0, 0)
        assert out[0, :, :, 0].sum() == 0
        out = network.flip_crop(img, False, 3, 4)
        np.testing.assert_array_equal(out[0, 0, :, 0], 0)
        np.testing.assert_array_equal(out[0, 1:, :, 0], 1)


class TestExtract:
    def test_rows_and_depth_zero(self, rng):
        config = small_config()
        params = network.build(config)
        x, y = rng.standard_normal((7, 8, 8, 2)), rng.integers(0, 3, 7)
        sets = network.extract_features(params, config, x, y, [0, 5, 13], batch_size=3)
        assert sorted(sets) == [0, 5, 13]
        assert all(len(fs) == 7 and fs.depth == d for d, fs in sets.items())
        np.testing.assert_allclose(sets[0].features, x.mean(axis=(1, 2)))
        np.testing.assert_array_equal(sets[13].labels, y)

    def test_permutation_invariance(self, rng):
        config = small_config()
        params = network.build(config)
        x, y = rng.standard_normal((9, 8, 8, 2)), rng.integers(0, 3, 9)
        perm = rng.permutation(9)
        a = network.extract_features(params, config, x, y, [13], batch_size=4)[13]
        b = network.extract_features(params, config, x[perm], y[perm], [13], batch_size=4)[13]
        np.testing.assert_allclose(b.features, a.features[perm], rtol=1e-12, atol=1e-14)
        np.testing.assert_array_equal(b.labels, a.labels[perm])


def test_norm_stats_untouched_by_eval(rng):
    config = small_config()
    params = network.build(config)
    before = [s.mean.copy() for s in params.norm_stats]
    network.forward(params, config, rng.standard_normal((2, 8, 8, 2)))
    assert all(np.array_equal(a, s.mean) for a, s in zip(before, params.norm_stats))
    assert isinstance(params.norm_stats[0], ops.NormStats)
