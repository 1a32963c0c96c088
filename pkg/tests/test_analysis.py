import numpy as np
import pytest

from plab.analysis import (
    PowerIterConfig,
    RecoveryCurve,
    grad_norms_per_class,
    recovery_window,
    top_eig_fd,
    top_hessian_eig,
    transfer_matrix,
)
from plab.attacks import AttackConfig
from plab.channels import Channel
from plab.defenses import DefenseConfig
from plab.errors import ArgumentError, NumericalError
from plab.network import build_model, forward, loss_and_grads
from plab.rng import Rng
from oracles import jacobi_eigh


class TestGradNorms:
    def test_matches_closed_form_on_linear_model(self):
        m = build_model("linear", input_shape=(4,), num_classes=3, seed=70)
        x = Rng(71).uniform01(4).astype(np.float32)
        w = m.params["dense1.w"].astype(np.float64)
        b = m.params["dense1.b"].astype(np.float64)
        z = w @ x + b
        p = np.exp(z - z.max())
        p /= p.sum()
        rep = grad_norms_per_class(m, x)
        for c in range(3):
            seed = p.copy()
            seed[c] -= 1
            assert np.isclose(rep.m1_per_class[c], np.linalg.norm(seed @ w), atol=1e-6)

    def test_m1_matches_directional_finite_differences(self):
        m = build_model("smallconv", (1, 8, 8), 3, seed=72)
        x = (0.3 + 0.4 * Rng(73).uniform01(64)).reshape(1, 8, 8).astype(np.float32)
        label = 1
        rep = grad_norms_per_class(m, x)
        _, gx, _ = loss_and_grads(m, x, label)
        g = gx.astype(np.float64).ravel()
        rngd = Rng(74)
        h = 1e-3
        for k in range(10):
            d = rngd.derive(k).gauss(1.0, g.shape)
            d /= np.linalg.norm(d)
            lp = loss_and_grads(m, (x.astype(np.float64).ravel() + h * d).reshape(x.shape), label)[0]
            lm = loss_and_grads(m, (x.astype(np.float64).ravel() - h * d).reshape(x.shape), label)[0]
            fd = (lp - lm) / (2 * h)
            assert abs(fd - g @ d) / max(abs(fd), 1e-4) < 1e-3
        assert np.isclose(rep.m1_per_class[label], np.linalg.norm(g), rtol=1e-6)


class TestTopEig:
    def test_quadratic_probe_diag_1_3(self):
        a = np.diag([1.0, 3.0])

        def grad_fn(x):
            return a @ x

        lam = top_eig_fd(grad_fn, np.zeros(2), PowerIterConfig(iters=200, tol=1e-8))
        assert abs(lam - 3.0) < 1e-3

    def test_random_symmetric_matches_jacobi(self):
        r = Rng(75).gauss(1.0, (10, 10))
        a = (r + r.T) / 2

        def grad_fn(x):
            return a @ x

        lam = top_eig_fd(grad_fn, np.zeros(10), PowerIterConfig(iters=500, tol=1e-10))
        eig, _ = jacobi_eigh(a)
        top = eig[np.argmax(np.abs(eig))]
        assert abs(lam - top) / abs(top) < 0.01

    def test_iterate_stays_normalized(self):
        a = np.diag([1.0, 3.0])
        seen = []

        def grad_fn(x):
            seen.append(x.copy())
            return a @ x

        top_eig_fd(grad_fn, np.zeros(2), PowerIterConfig(iters=20, tol=0.0))
        # probes are x +- h*v with ||v|| = 1, so each |probe| == h
        h = 1e-3
        for probe in seen:
            assert np.isclose(np.linalg.norm(probe), h, atol=1e-9)

    def test_non_finite_hvp_reported(self):
        def grad_fn(x):
            return np.full_like(x, np.nan)

        with pytest.raises(NumericalError):
            top_eig_fd(grad_fn, np.zeros(3))

    def test_model_hessian_runs(self):
        m = build_model("mlp", input_shape=(6,), num_classes=3, seed=76)
        x = Rng(77).uniform01(6).astype(np.float32)
        lam = top_hessian_eig(m, x, 0, PowerIterConfig(iters=40))
        assert np.isfinite(lam)


class TestRecoveryWindow:
    def _setup(self):
        m = build_model("linear", input_shape=(2,), num_classes=2, seed=78)
        m.params["dense1.w"] = np.array([[0.0, 0.0], [4.0, 0.0]], dtype=np.float32)
        m.params["dense1.b"] = np.array([0.0, -2.0], dtype=np.float32)
        # boundary at x0 = 0.5; original label 1 on the right side
        x_orig = np.array([0.7, 0.5], dtype=np.float32)
        x_adv = np.array([0.45, 0.5], dtype=np.float32)  # just across
        return m, x_orig, x_adv

    def test_sigma_zero_all_adversarial(self):
        m, xo, xa = self._setup()
        curve = recovery_window(m, xo, xa, (1, 0), [0.0], trials=20, rng=Rng(79))
        assert curve.freq_adversarial == [20]
        assert curve.freq_original == [0]

    def test_frequencies_sum_to_trials(self):
        m, xo, xa = self._setup()
        curve = recovery_window(m, xo, xa, (1, 0), [0.0, 0.1, 0.5], trials=33, rng=Rng(80))
        for i in range(3):
            assert (
                curve.freq_original[i] + curve.freq_adversarial[i] + curve.freq_other[i]
                == 33
            )

    def test_window_exists_for_pocket_region(self):
        # hand-built MLP whose adversarial region is the slab
        # 0.35 < x0 < 0.55: noise big enough to escape the pocket recovers
        # the original class with majority frequency
        m = build_model("mlp", input_shape=(2,), num_classes=2, seed=0)
        w1 = np.zeros((64, 2), dtype=np.float32)
        b1 = np.zeros(64, dtype=np.float32)
        w1[0] = [10.0, 0.0]
        b1[0] = -4.5
        w1[1] = [-10.0, 0.0]
        b1[1] = 4.5
        w2 = np.zeros((2, 64), dtype=np.float32)
        b2 = np.zeros(2, dtype=np.float32)
        w2[0, 0] = -1.0
        w2[0, 1] = -1.0
        b2[0] = 1.0
        m.params.update({"dense1.w": w1, "dense1.b": b1, "dense2.w": w2, "dense2.b": b2})
        xo = np.array([0.7, 0.5], dtype=np.float32)  # original class 1
        xa = np.array([0.45, 0.5], dtype=np.float32)  # inside the pocket
        curve = recovery_window(
            m, xo, xa, (1, 0), [0.02, 0.1, 0.25, 0.5], trials=100, rng=Rng(81)
        )
        assert any(
            fo > fa for fo, fa in zip(curve.freq_original, curve.freq_adversarial)
        )

    def test_not_adversarial_rejected(self):
        m, xo, xa = self._setup()
        with pytest.raises(ArgumentError):
            recovery_window(m, xo, xo, (1, 0), [0.1], trials=5, rng=Rng(82))


class TestTransferMatrix:
    def test_smoke_shape_and_empty_row(self):
        m = build_model("smallconv", (1, 8, 8), 3, seed=83)
        rng = Rng(84)
        examples = [
            (rng.derive(i).uniform01(64).reshape(1, 8, 8).astype(np.float32), i % 3)
            for i in range(6)
        ]
        rows = [
            ("Empty", None),
            ("cd", AttackConfig(kind="pgd", eps=0.1, steps=3, channel_in_loop=Channel("cd", 2))),
        ]
        cols = [
            ("none", DefenseConfig()),
            ("cd", DefenseConfig(channel=Channel("cd", 2))),
        ]
        tm = transfer_matrix(m, rows, cols, examples, Rng(85))
        assert tm.cells.shape == (2, 2)
        assert np.all(tm.cells >= 0) and np.all(tm.cells <= 100)
        # Empty row, no defense = plain accuracy
        plain = 100.0 * np.mean(
            [int(np.argmax(forward(m, x)) == y) for x, y in examples]
        )
        assert tm.cells[0, 0] == pytest.approx(plain)
