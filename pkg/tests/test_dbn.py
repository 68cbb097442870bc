import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swacdemod import dbn
from swacdemod.dbn import (
    DbnModel,
    DbnTrainSpec,
    NormStats,
    RbmLayer,
    cd_update,
    extract_features,
    hidden_activation,
    normalize_frames,
    rbm_energy,
    rbm_joint_prob,
    rbm_log_partition_exact,
    rbm_nll_exact,
    rbm_nll_gradient_exact,
    rbm_partition_exact,
    reconstruction_error,
    train_dbn_greedy,
    visible_activation,
)
from swacdemod.errors import ConfigError, NumericalError
from swacdemod.sigproc import ModulationConfig, PskScheme, add_awgn, frame_signal, modulate_psk


def random_rbm(n_visible, n_hidden, seed, scale=0.8):
    rng = np.random.default_rng(seed)
    return RbmLayer(
        rng.normal(0, scale, (n_hidden, n_visible)),
        rng.normal(0, scale, n_visible),
        rng.normal(0, scale, n_hidden),
    )


def brute_energy(layer, v, h):
    total = 0.0
    for j in range(layer.n_hidden):
        for k in range(layer.n_visible):
            total -= h[j] * layer.weights[j, k] * v[k]
    for k in range(layer.n_visible):
        total -= layer.visible_bias[k] * v[k]
    for j in range(layer.n_hidden):
        total -= layer.hidden_bias[j] * h[j]
    return total


def all_configs(layer):
    for v in itertools.product((0, 1), repeat=layer.n_visible):
        for h in itertools.product((0, 1), repeat=layer.n_hidden):
            yield np.array(v, float), np.array(h, float)


def brute_partition(layer):
    return sum(np.exp(-brute_energy(layer, v, h)) for v, h in all_configs(layer))


def numeric_gradient(f, layer, eps=1e-6):
    grads = []
    for name in ("weights", "visible_bias", "hidden_bias"):
        base = getattr(layer, name)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += eps
            minus[idx] -= eps
            g[idx] = (f(dbn.replace(layer, **{name: plus})) - f(dbn.replace(layer, **{name: minus}))) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class TestEnergy:
    def test_zero_parameters(self):
        layer = RbmLayer.zeros(3, 2)
        assert rbm_energy(layer, [1, 0, 1], [1, 1]) == 0.0

    def test_scalar_substitution(self):
        layer = RbmLayer(np.array([[2.0]]), np.array([0.5]), np.array([-1.0]))
        assert rbm_energy(layer, [1.0], [1.0]) == pytest.approx(-1.5)

    def test_matches_explicit_sums(self):
        layer = random_rbm(5, 4, seed=3)
        rng = np.random.default_rng(4)
        for _ in range(20):
            v, h = rng.random(5), rng.random(4)
            assert rbm_energy(layer, v, h) == pytest.approx(brute_energy(layer, v, h), abs=1e-12)

    def test_linearity_in_weights(self):
        rng = np.random.default_rng(7)
        w1, w2 = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        zb, zc = np.zeros(4), np.zeros(3)
        v, h = rng.random(4), rng.random(3)
        combined = rbm_energy(RbmLayer(w1 + w2, zb, zc), v, h)
        split = rbm_energy(RbmLayer(w1, zb, zc), v, h) + rbm_energy(RbmLayer(w2, zb, zc), v, h)
        assert combined == pytest.approx(split, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            rbm_energy(RbmLayer.zeros(3, 2), [1, 0], [1, 1])


class TestPartition:
    def test_one_by_one_zero(self):
        assert rbm_partition_exact(RbmLayer.zeros(1, 1)) == pytest.approx(4.0)

    def test_two_by_one_zero(self):
        assert rbm_partition_exact(RbmLayer.zeros(2, 1)) == pytest.approx(8.0)

    @pytest.mark.parametrize("shape", [(4, 3), (3, 5), (2, 6)])
    def test_matches_joint_enumeration(self, shape):
        layer = random_rbm(*shape, seed=sum(shape))
        assert rbm_partition_exact(layer) == pytest.approx(brute_partition(layer), rel=1e-12)

    def test_joint_normalizes(self):
        layer = random_rbm(4, 3, seed=1)
        total = sum(rbm_joint_prob(layer, v, h) for v, h in all_configs(layer))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_zero_model_uniform(self):
        assert rbm_joint_prob(RbmLayer.zeros(1, 1), [1.0], [0.0]) == pytest.approx(0.25)

    def test_argmax_probability_is_argmin_energy(self):
        layer = random_rbm(3, 3, seed=9)
        configs = list(all_configs(layer))
        probs = [rbm_joint_prob(layer, v, h) for v, h in configs]
        energies = [rbm_energy(layer, v, h) for v, h in configs]
        assert int(np.argmax(probs)) == int(np.argmin(energies))

    def test_guard(self):
        with pytest.raises(ValueError, match="24"):
            rbm_partition_exact(RbmLayer.zeros(20, 5))

    @settings(max_examples=25, deadline=None)
    @given(nv=st.integers(1, 12), nh=st.integers(1, 12), seed=st.integers(0, 2**31))
    def test_normalization_property(self, nv, nh, seed):
        layer = random_rbm(nv, nh, seed)
        states_v = np.array(list(itertools.product((0.0, 1.0), repeat=nv)))
        # sum_{v,h} p(v,h) = sum_v exp(-F(v)) / Z
        total = np.sum(np.exp(-dbn.free_energy(layer, states_v) - rbm_log_partition_exact(layer)))
        assert total == pytest.approx(1.0, abs=1e-9)


class TestConditionals:
    def test_zero_weights_give_bias_logistic(self):
        c = np.array([-1.0, 0.0, 2.0])
        layer = RbmLayer(np.zeros((3, 2)), np.array([0.3, -0.4]), c)
        np.testing.assert_allclose(hidden_activation(layer, [1.0, 0.0]), 1 / (1 + np.exp(-c)))
        np.testing.assert_allclose(visible_activation(layer, [1.0, 0.0, 1.0]), 1 / (1 + np.exp([-0.3, 0.4])))

    def test_zero_model_half(self):
        layer = RbmLayer.zeros(4, 3)
        np.testing.assert_array_equal(hidden_activation(layer, np.ones(4)), 0.5)
        np.testing.assert_array_equal(visible_activation(layer, np.ones(3)), 0.5)

    def test_hidden_matches_enumeration(self):
        layer = random_rbm(4, 3, seed=21)
        v = np.array([1.0, 0.0, 1.0, 1.0])
        hs = [np.array(h, float) for h in itertools.product((0, 1), repeat=3)]
        pv = sum(rbm_joint_prob(layer, v, h) for h in hs)
        expected = [sum(rbm_joint_prob(layer, v, h) for h in hs if h[j] == 1) / pv for j in range(3)]
        np.testing.assert_allclose(hidden_activation(layer, v), expected, rtol=1e-10)

    def test_visible_matches_enumeration(self):
        layer = random_rbm(4, 3, seed=22)
        h = np.array([0.0, 1.0, 1.0])
        vs = [np.array(v, float) for v in itertools.product((0, 1), repeat=4)]
        ph = sum(rbm_joint_prob(layer, v, h) for v in vs)
        expected = [sum(rbm_joint_prob(layer, v, h) for v in vs if v[k] == 1) / ph for k in range(4)]
        np.testing.assert_allclose(visible_activation(layer, h), expected, rtol=1e-10)

    def test_strictly_inside_unit_interval(self):
        layer = random_rbm(6, 5, seed=2, scale=3.0)
        rng = np.random.default_rng(0)
        p = hidden_activation(layer, rng.random((50, 6)))
        assert np.all((p > 0) & (p < 1))


class TestLikelihoodGradient:
    @pytest.mark.parametrize("seed", range(4))
    def test_analytic_matches_finite_difference(self, seed):
        layer = random_rbm(5, 4, seed=seed, scale=0.5)
        data = np.random.default_rng(seed + 100).integers(0, 2, (7, 5)).astype(float)
        g = rbm_nll_gradient_exact(layer, data)
        num = numeric_gradient(lambda lay: rbm_nll_exact(lay, data), layer)
        assert max_rel_error([g.weights, g.visible_bias, g.hidden_bias], num) < 1e-5


class TestContrastiveDivergence:
    def test_zero_learning_rate_is_noop(self):
        layer = random_rbm(6, 4, seed=0)
        batch = np.random.default_rng(1).random((10, 6))
        out = cd_update(layer, batch, DbnTrainSpec(learning_rate=0.0))
        np.testing.assert_array_equal(out.weights, layer.weights)
        np.testing.assert_array_equal(out.visible_bias, layer.visible_bias)
        np.testing.assert_array_equal(out.hidden_bias, layer.hidden_bias)

    def test_deterministic_per_seed(self):
        layer = random_rbm(6, 4, seed=0)
        batch = np.random.default_rng(1).random((10, 6))
        spec = DbnTrainSpec(cd_steps=3, rng_seed=42)
        a, b = cd_update(layer, batch, spec), cd_update(layer, batch, spec)
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.hidden_bias, b.hidden_bias)

    def test_rejects_empty_batch(self):
        with pytest.raises(ValueError):
            cd_update(RbmLayer.zeros(3, 2), np.zeros((0, 3)), DbnTrainSpec())

    def test_nan_aborts_with_diagnostics(self):
        layer = RbmLayer.zeros(3, 2)
        with np.errstate(all="ignore"), pytest.raises(NumericalError) as info:
            cd_update(layer, np.ones((2, 3)), DbnTrainSpec(learning_rate=np.inf))
        assert "learning_rate" in info.value.diagnostics

    def test_likelihood_increases_on_repeated_vector(self):
        rng = np.random.default_rng(3)
        layer = RbmLayer.random(6, 4, rng, std=0.01)
        target = np.array([[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]])
        before = rbm_nll_exact(layer, target)
        spec = DbnTrainSpec(learning_rate=0.1, rng_seed=5)
        for _ in range(500):
            layer = cd_update(layer, target, spec, rng)
        assert rbm_nll_exact(layer, target) < before

    def test_cd10_aligns_with_exact_gradient(self):
        layer = random_rbm(6, 4, seed=8, scale=0.3)
        data = np.random.default_rng(9).integers(0, 2, (16, 6)).astype(float)
        exact = rbm_nll_gradient_exact(layer, data)
        spec = DbnTrainSpec(cd_steps=10, learning_rate=1.0)
        rng = np.random.default_rng(10)
        steps = []
        for _ in range(200):
            new = cd_update(layer, data, spec, rng)
            steps.append(np.concatenate([
                (new.weights - layer.weights).ravel(),
                new.visible_bias - layer.visible_bias,
                new.hidden_bias - layer.hidden_bias,
            ]))
        mean_step = np.mean(steps, axis=0)
        descent = -np.concatenate([exact.weights.ravel(), exact.visible_bias, exact.hidden_bias])
        cosine = mean_step @ descent / (np.linalg.norm(mean_step) * np.linalg.norm(descent))
        assert cosine > 0.5


def psk_frames(symbols, snr_db, seed):
    cfg = ModulationConfig()
    w = add_awgn(modulate_psk(symbols, PskScheme(2), cfg), snr_db, seed)
    return frame_signal(w)


class TestGreedyTraining:
    def test_zero_epochs_returns_initialization(self):
        frames = np.random.default_rng(0).random((20, 120))
        spec = DbnTrainSpec(epochs=0, rng_seed=4)
        model = train_dbn_greedy(frames, (120, 30, 784), spec)
        rng = np.random.default_rng(4)
        np.testing.assert_array_equal(model.layers[0].weights, rng.normal(0, 0.01, (30, 120)))
        np.testing.assert_array_equal(model.layers[1].weights, rng.normal(0, 0.01, (784, 30)))
        assert model.geometry == (120, 30, 784)

    def test_single_layer_geometry(self):
        frames = np.random.default_rng(0).random((16, 120))
        model = train_dbn_greedy(frames, (120, 784), DbnTrainSpec(epochs=1, batch_size=8))
        assert len(model.layers) == 1 and model.output_dim == 784

    def test_geometry_mismatch(self):
        with pytest.raises(ConfigError):
            train_dbn_greedy(np.zeros((4, 100)), (120, 784), DbnTrainSpec(epochs=1))

    def test_unnormalized_frames_rejected(self):
        with pytest.raises(ValueError, match="normalize"):
            train_dbn_greedy(np.full((4, 120), 2.0), (120, 784), DbnTrainSpec(epochs=1))

    def test_reconstruction_improves_on_held_out(self):
        rng = np.random.default_rng(11)
        frames = psk_frames(rng.integers(0, 2, 1500), 10.0, 12)
        norm, stats = normalize_frames(frames[:1000])
        held = normalize_frames(frames[1000:], stats)
        spec = DbnTrainSpec(epochs=5, learning_rate=0.05, rng_seed=1)
        untrained = train_dbn_greedy(norm, (120, 64, 784), DbnTrainSpec(epochs=0, rng_seed=1))
        trained = train_dbn_greedy(norm, (120, 64, 784), spec)
        assert reconstruction_error(trained.layers[0], held) < reconstruction_error(untrained.layers[0], held)

    def test_layer_stacking_is_deterministic(self):
        frames = np.random.default_rng(2).random((40, 120))
        spec = DbnTrainSpec(epochs=2, batch_size=16, rng_seed=3)
        a = train_dbn_greedy(frames, (120, 20, 784), spec)
        b = train_dbn_greedy(frames, (120, 20, 784), spec)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weights, lb.weights)


class TestFeatures:
    def test_zero_model_gives_half(self):
        model = DbnModel((RbmLayer.zeros(120, 500), RbmLayer.zeros(500, 784)))
        img = extract_features(model, np.random.default_rng(0).random(120))
        assert img.shape == (28, 28)
        np.testing.assert_array_equal(img, 0.5)

    def test_pure_and_deterministic(self):
        rng = np.random.default_rng(1)
        model = DbnModel((random_rbm(120, 50, 1, 0.1), random_rbm(50, 784, 2, 0.1)))
        before = [layer.weights.copy() for layer in model.layers]
        frame = rng.random(120)
        np.testing.assert_array_equal(extract_features(model, frame), extract_features(model, frame))
        for layer, w in zip(model.layers, before):
            np.testing.assert_array_equal(layer.weights, w)

    def test_rejects_unnormalized(self):
        model = DbnModel((RbmLayer.zeros(120, 784),))
        with pytest.raises(ValueError):
            extract_features(model, np.full(120, 1.5))

    def test_same_symbol_frames_cluster_after_training(self):
        rng = np.random.default_rng(31)
        symbols = rng.integers(0, 2, 1200)
        frames = psk_frames(symbols, 20.0, 32)
        labels = symbols[: len(frames)]
        norm, stats = normalize_frames(frames)
        model = train_dbn_greedy(norm[:1000], (120, 100, 784), DbnTrainSpec(epochs=5, rng_seed=2))
        feats = dbn.extract_features_batch(model, norm[1000:]).reshape(-1, 784)
        held = labels[1000:]
        zeros, ones = feats[held == 0], feats[held == 1]
        same = np.mean([np.linalg.norm(zeros[i] - zeros[i + 1]) for i in range(20)])
        cross = np.mean([np.linalg.norm(zeros[i] - ones[i]) for i in range(20)])
        assert same < cross


class TestNormalization:
    def test_affine_map(self):
        stats = NormStats(-1.0, 1.0)
        np.testing.assert_allclose(normalize_frames(np.array([[-1.0, 0.0, 1.0]]), stats), [[0.0, 0.5, 1.0]])

    def test_clamps_out_of_range(self):
        stats = NormStats(-1.0, 1.0)
        np.testing.assert_array_equal(normalize_frames(np.array([[-3.0, 2.0]]), stats), [[0.0, 1.0]])

    def test_fit_on_data(self):
        out, stats = normalize_frames(np.array([[2.0, 4.0], [3.0, 6.0]]))
        assert (stats.lo, stats.hi) == (2.0, 6.0)
        assert out.min() == 0.0 and out.max() == 1.0

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate"):
            normalize_frames(np.ones((3, 4)))
