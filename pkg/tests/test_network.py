import numpy as np
import pytest

from plab.errors import ArgumentError, ConfigError, DimensionError, ParameterError
from plab.network import (
    NO_NOISE,
    NoiseConfig,
    TrainConfig,
    build_model,
    forward,
    loss_and_grads,
    train,
)
from plab.rng import Rng
from oracles import central_diff_grad


def test_linear_param_count():
    m = build_model("linear", input_shape=(2,), num_classes=2, seed=0)
    assert m.param_count() == 6


def test_same_seed_bit_identical_params():
    a = build_model("smallconv", (3, 16, 16), 4, seed=5)
    b = build_model("smallconv", (3, 16, 16), 4, seed=5)
    for n in a.param_names:
        assert np.array_equal(a.params[n], b.params[n])


def test_different_seed_differs():
    a = build_model("smallconv", (3, 16, 16), 4, seed=5)
    b = build_model("smallconv", (3, 16, 16), 4, seed=6)
    assert any(not np.array_equal(a.params[n], b.params[n]) for n in a.param_names)


def test_unknown_arch_rejected():
    with pytest.raises(ConfigError):
        build_model("resnet50", (3, 32, 32), 10)


def test_smallconv_output_shape_on_32x32():
    m = build_model("smallconv", (3, 32, 32), 10, seed=0)
    logits = forward(m, np.zeros((3, 32, 32), dtype=np.float32))
    assert logits.shape == (10,)


def test_forward_shape_mismatch_rejected():
    m = build_model("smallconv", (3, 16, 16), 4)
    with pytest.raises(DimensionError):
        forward(m, np.zeros((3, 8, 8)))


def test_noise_free_forward_deterministic():
    m = build_model("smallconv", (3, 16, 16), 4, seed=1)
    x = Rng(2).uniform01(3 * 16 * 16).reshape(3, 16, 16)
    a = forward(m, x)
    b = forward(m, x, noise=NO_NOISE, rng=Rng(99))
    assert np.array_equal(a, b)


def test_zero_mean_noise_keeps_mean_logits_linear_model():
    m = build_model("linear", input_shape=(8,), num_classes=3, seed=3)
    x = Rng(4).uniform01(8)
    clean = forward(m, x).astype(np.float64)
    noise = NoiseConfig(dist="gauss", sigma_init=0.2)
    rng = Rng(5)
    trials = 10_000
    acc = np.zeros(3)
    for t in range(trials):
        acc += forward(m, x, noise, rng.derive(t))
    mean = acc / trials
    # logits are linear in the input, so the noise-free logits are the mean;
    # allow a 3-sigma band per coordinate
    w = m.params["dense1.w"].astype(np.float64)
    per_logit_std = 0.2 * np.linalg.norm(w, axis=1) / np.sqrt(trials)
    assert np.all(np.abs(mean - clean) < 3.5 * per_logit_std + 1e-9)


def test_param_noise_leaves_params_untouched():
    m = build_model("linear", input_shape=(4,), num_classes=2, seed=0)
    before = {n: p.copy() for n, p in m.params.items()}
    noise = NoiseConfig(dist="gauss", sigma_param=10.0)
    forward(m, np.zeros(4, dtype=np.float32), noise, Rng(1))
    for n in m.param_names:
        assert np.array_equal(before[n], m.params[n])


def test_param_and_feature_noise_exclusive():
    with pytest.raises(ParameterError):
        NoiseConfig(sigma_param=0.1, sigma_init=0.1)


def test_loss_matches_analytic_logistic_case():
    m = build_model("linear", input_shape=(2,), num_classes=2, seed=7)
    x = np.array([0.3, -0.2], dtype=np.float32)
    label = 1
    w = m.params["dense1.w"].astype(np.float64)
    b = m.params["dense1.b"].astype(np.float64)
    z = w @ x + b
    p = np.exp(z - z.max())
    p /= p.sum()
    loss, gx, gp = loss_and_grads(m, x, label)
    assert np.isclose(loss, -np.log(p[label]), atol=1e-6)
    seed_vec = p.copy()
    seed_vec[label] -= 1
    assert np.allclose(gx, seed_vec @ w, atol=1e-6)
    assert np.allclose(gp["dense1.w"], np.outer(seed_vec, x), atol=1e-6)
    assert np.allclose(gp["dense1.b"], seed_vec, atol=1e-6)


def test_zero_weights_uniform_softmax():
    m = build_model("linear", input_shape=(5,), num_classes=4, seed=0)
    for n in m.param_names:
        m.params[n] = np.zeros_like(m.params[n])
    loss, _, _ = loss_and_grads(m, np.zeros(5, dtype=np.float32), 2)
    assert np.isclose(loss, np.log(4.0), atol=1e-9)


def test_label_out_of_range():
    m = build_model("linear", input_shape=(2,), num_classes=2)
    with pytest.raises(ArgumentError):
        loss_and_grads(m, np.zeros(2, dtype=np.float32), 2)


@pytest.mark.parametrize("arch,shape", [("linear", (6,)), ("mlp", (6,)), ("smallconv", (2, 8, 8))])
def test_grad_x_matches_finite_differences(arch, shape):
    m = build_model(arch, input_shape=shape, num_classes=3, seed=11)
    x = (0.25 + 0.5 * Rng(12).uniform01(int(np.prod(shape)))).reshape(shape)
    label = 1
    _, gx, _ = loss_and_grads(m, x, label)

    def f(xx):
        return loss_and_grads(m, xx, label)[0]

    picks = Rng(13).permutation(int(np.prod(shape)))[:20]
    fd = central_diff_grad(f, x, h=1e-3, coords=[int(i) for i in picks])
    flat = gx.ravel()
    for i, val in fd.items():
        denom = max(abs(val), 1e-4)
        assert abs(flat[i] - val) / denom < 1e-3


def test_grad_params_match_finite_differences_every_layer_kind():
    # smallconv exercises conv, relu, maxpool2, flatten, dense in one pass
    m = build_model("smallconv", input_shape=(2, 8, 8), num_classes=3, seed=21)
    x = (0.2 + 0.6 * Rng(22).uniform01(2 * 8 * 8)).reshape(2, 8, 8)
    label = 2
    _, _, gp = loss_and_grads(m, x, label)
    for name in ("conv1.w", "conv2.b", "dense1.w"):
        p0 = m.params[name].copy()
        flat_idx = Rng(23).permutation(p0.size)[:5]
        for i in flat_idx:
            i = int(i)
            for sign, store in ((1, "plus"), (-1, "minus")):
                pert = p0.copy().ravel()
                pert[i] += sign * 1e-3
                m.params[name] = pert.reshape(p0.shape)
                if store == "plus":
                    lp = loss_and_grads(m, x, label)[0]
                else:
                    lm = loss_and_grads(m, x, label)[0]
            m.params[name] = p0
            fd = (lp - lm) / 2e-3
            got = gp[name].ravel()[i]
            assert abs(got - fd) / max(abs(fd), 1e-4) < 1e-3, name


class TestTrain:
    def _tiny_dataset(self):
        rng = Rng(30)
        images = (0.5 + 0.4 * rng.uniform(1.0, (8, 2, 8, 8))).astype(np.float32)
        images = np.clip(images, 0, 1)
        labels = np.array([0, 1, 2, 3, 0, 1, 2, 3])
        return images, labels

    def test_overfits_tiny_dataset(self):
        images, labels = self._tiny_dataset()
        m = build_model("smallconv", (2, 8, 8), 4, seed=31)
        m, history = train(m, (images, labels), TrainConfig(epochs=200, batch_size=8, lr=0.05, seed=31))
        assert history[-1]["acc"] == 1.0
        # smoothed loss decreases
        losses = [h["loss"] for h in history]
        k = 20
        smoothed = [np.mean(losses[i : i + k]) for i in range(0, len(losses) - k, k)]
        assert all(b <= a + 1e-9 for a, b in zip(smoothed, smoothed[1:]))

    def test_lr_zero_keeps_params(self):
        images, labels = self._tiny_dataset()
        m = build_model("smallconv", (2, 8, 8), 4, seed=32)
        before = {n: p.copy() for n, p in m.params.items()}
        train(m, (images, labels), TrainConfig(epochs=3, batch_size=4, lr=0.0, seed=1))
        for n in m.param_names:
            assert np.array_equal(before[n], m.params[n])

    def test_fixed_seed_bit_identical(self):
        images, labels = self._tiny_dataset()
        cfg = TrainConfig(epochs=5, batch_size=4, lr=0.05, seed=33)
        m1, _ = train(build_model("smallconv", (2, 8, 8), 4, seed=33), (images, labels), cfg)
        m2, _ = train(build_model("smallconv", (2, 8, 8), 4, seed=33), (images, labels), cfg)
        for n in m1.param_names:
            assert np.array_equal(m1.params[n], m2.params[n])

    def test_empty_dataset_rejected(self):
        m = build_model("linear", (2,), 2)
        with pytest.raises(ArgumentError):
            train(m, (np.zeros((0, 2), dtype=np.float32), np.zeros(0, dtype=np.int64)), TrainConfig(epochs=1))
