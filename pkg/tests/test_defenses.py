import numpy as np
import pytest

from plab.channels import Channel
from plab.defenses import (
    AdvTrainConfig,
    DefenseConfig,
    defend_predict,
    evaluate_defense,
    format_defense,
    parse_defense,
    train_adversarial,
)
from plab.errors import ArgumentError, ConfigError, ParameterError
from plab.network import NoiseConfig, TrainConfig, build_model, forward, train
from plab.rng import Rng


def tiny_dataset(n=16, seed=50):
    rng = Rng(seed)
    images = np.clip(0.5 + rng.uniform(0.4, (n, 2, 8, 8)), 0, 1).astype(np.float32)
    labels = np.arange(n) % 4
    return images, labels


class TestDefendPredict:
    def test_deterministic_votes_identical(self):
        m = build_model("smallconv", (2, 8, 8), 4, seed=51)
        x = Rng(52).uniform01(128).reshape(2, 8, 8).astype(np.float32)
        d = DefenseConfig(channel=Channel("cd", 4), trials=5)
        label, hist = defend_predict(m, d, x, Rng(53))
        assert hist.sum() == 5
        assert hist.max() == 5  # all five votes agree
        assert hist[label] == 5

    def test_single_trial_equals_single_pass(self):
        m = build_model("smallconv", (2, 8, 8), 4, seed=54)
        x = Rng(55).uniform01(128).reshape(2, 8, 8).astype(np.float32)
        noise = NoiseConfig(dist="gauss", sigma_init=0.1)
        d = DefenseConfig(noise=noise, trials=1)
        rng = Rng(56)
        label, hist = defend_predict(m, d, x, rng)
        direct = forward(m, x, noise, Rng(56).derive(0).derive(1))
        assert label == int(np.argmax(direct))
        assert hist.sum() == 1

    def test_tie_breaks_to_lowest_class(self):
        # two trials that land on different classes produce a 1-1 tie
        m = build_model("linear", (2,), 2, seed=57)
        m.params["dense1.w"] = np.array([[50.0, 0.0], [0.0, 50.0]], dtype=np.float32)
        m.params["dense1.b"] = np.zeros(2, dtype=np.float32)
        x = np.array([0.5, 0.5], dtype=np.float32)
        d = DefenseConfig(noise=NoiseConfig(dist="gauss", sigma_init=0.4), trials=2)
        for seed in range(40):
            label, hist = defend_predict(m, d, x, Rng(seed))
            if hist[0] == hist[1] == 1:
                assert label == 0
                break
        else:
            pytest.fail("no tie found in 40 seeds")


class TestEvaluateDefense:
    def test_identity_defense_equals_clean_accuracy(self):
        images, labels = tiny_dataset()
        m = build_model("smallconv", (2, 8, 8), 4, seed=58)
        m, _ = train(m, (images, labels), TrainConfig(epochs=60, batch_size=8, lr=0.05, seed=58))
        examples = list(zip(images, labels))
        acc = evaluate_defense(m, DefenseConfig(), examples, Rng(59))
        clean = 100.0 * np.mean(
            [int(np.argmax(forward(m, x)) == y) for x, y in examples]
        )
        assert acc == clean

    def test_single_correct_example_is_100(self):
        images, labels = tiny_dataset()
        m = build_model("smallconv", (2, 8, 8), 4, seed=60)
        m, _ = train(m, (images, labels), TrainConfig(epochs=60, batch_size=8, lr=0.05, seed=60))
        for x, y in zip(images, labels):
            if int(np.argmax(forward(m, x))) == y:
                assert evaluate_defense(m, DefenseConfig(), [(x, y)], Rng(61)) == 100.0
                return
        pytest.fail("trained model classified nothing correctly")

    def test_seeded_reproducibility(self):
        images, labels = tiny_dataset()
        m = build_model("smallconv", (2, 8, 8), 4, seed=62)
        d = DefenseConfig(
            channel=Channel("gauss", 0.05),
            noise=NoiseConfig(dist="uniform", sigma_inner=0.05),
            trials=3,
        )
        examples = list(zip(images, labels))
        a = evaluate_defense(m, d, examples, Rng(63))
        b = evaluate_defense(m, d, examples, Rng(63))
        assert a == b

    def test_worker_count_invariance(self, monkeypatch):
        images, labels = tiny_dataset()
        m = build_model("smallconv", (2, 8, 8), 4, seed=64)
        d = DefenseConfig(noise=NoiseConfig(dist="gauss", sigma_init=0.1), trials=5)
        examples = list(zip(images, labels))
        monkeypatch.setenv("PLAB_THREADS", "1")
        a = evaluate_defense(m, d, examples, Rng(65))
        monkeypatch.setenv("PLAB_THREADS", "4")
        b = evaluate_defense(m, d, examples, Rng(65))
        assert a == b

    def test_empty_set_rejected(self):
        m = build_model("linear", (2,), 2)
        with pytest.raises(ArgumentError):
            evaluate_defense(m, DefenseConfig(), [], Rng(0))


class TestAdvTrain:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ParameterError):
            AdvTrainConfig(clean_weight=0.7, adv_weight=0.5)

    def test_eps_zero_reduces_to_standard_training(self):
        images, labels = tiny_dataset()
        cfg = TrainConfig(epochs=3, batch_size=8, lr=0.05, seed=66)
        m1 = build_model("smallconv", (2, 8, 8), 4, seed=66)
        m1, _ = train(m1, (images, labels), cfg)
        m2 = build_model("smallconv", (2, 8, 8), 4, seed=66)
        m2, _ = train_adversarial(
            m2, (images, labels), AdvTrainConfig(eps=0.0), NoiseConfig(), cfg
        )
        for n in m1.param_names:
            assert np.array_equal(m1.params[n], m2.params[n])

    def test_pure_adversarial_loss_improves_adv_accuracy(self):
        images, labels = tiny_dataset(n=16, seed=67)
        m = build_model("smallconv", (2, 8, 8), 4, seed=67)
        cfg = TrainConfig(epochs=40, batch_size=8, lr=0.05, seed=67)
        atc = AdvTrainConfig(clean_weight=0.0, adv_weight=1.0, pgd_steps=3)
        _, history = train_adversarial(m, (images, labels), atc, NoiseConfig(), cfg)
        first = np.mean([h["adv_acc"] for h in history[:5]])
        last = np.mean([h["adv_acc"] for h in history[-5:]])
        assert last > first

    def test_inner_examples_respect_ball(self):
        # run the inner attack exactly as training does and check the ball
        from plab.attacks import AttackConfig, pgd_batch

        images, labels = tiny_dataset()
        m = build_model("smallconv", (2, 8, 8), 4, seed=68)
        atc = AdvTrainConfig()
        inner = AttackConfig(
            kind="pgd", eps=atc.eps, steps=atc.pgd_steps, step_size=atc.step_size
        )
        x_adv, _ = pgd_batch(m, images.astype(np.float64), labels, inner, None, Rng(69))
        assert np.max(np.abs(x_adv - images)) <= 8 / 255 + 1e-6


class TestDescriptors:
    def test_parse_full(self):
        d = parse_defense("channel:fc:0.5;noise:gauss,0.2,0.1,0;trials:11")
        assert d.channel == Channel("fc", 0.5)
        assert d.noise.sigma_init == 0.2
        assert d.noise.sigma_inner == 0.1
        assert d.trials == 11

    def test_parse_with_prefix_and_none(self):
        d = parse_defense("defense=channel:cd:4")
        assert d.channel == Channel("cd", 4)
        assert parse_defense("none").channel is None

    def test_roundtrip(self):
        for desc in (
            "channel:svd:0.5;trials:1",
            "noise:laplace,0.1,0.05,0;trials:7",
            "channel:uniform:0.04;noise:gauss,0,0,0.02;trials:16",
        ):
            d = parse_defense(desc)
            assert parse_defense(format_defense(d)) == d

    def test_bad_descriptors(self):
        for bad in ("channel:jpeg:1", "noise:gauss,1", "trials:x", "votes:3"):
            with pytest.raises(ConfigError):
                parse_defense(bad)
