"""Measurement suite: instability metrics, recovery windows, strength
sweeps, and the attack/defense transfer matrix.

The two instability metrics of an input x are the L2 norm of the loss
gradient per class (first order) and the top eigenvalue of the input
Hessian of the loss (second order), the latter estimated by power
iteration on finite-difference Hessian-vector products.  A "gradient
anomaly" flags inputs whose smallest per-class gradient norm does not
belong to the most confident class.
"""

from dataclasses import dataclass

import numpy as np

from plab.attacks import AttackConfig, run_attack
from plab.channels import Channel, channel_distortion
from plab.defenses import DefenseConfig, evaluate_defense
from plab.errors import ArgumentError, NumericalError, ParameterError
from plab.network import _backward, _run_batch, _softmax
from plab.parallel import parallel_map
from plab.rng import Rng
from plab.tensor import clamp01


@dataclass
class InstabilityReport:
    m1_per_class: np.ndarray
    anomaly: bool
    confidences: np.ndarray
    m2: float | None = None


@dataclass
class RecoveryCurve:
    sigmas: list
    freq_original: list
    freq_adversarial: list
    freq_other: list
    trials: int


@dataclass
class TransferMatrix:
    rows: list  # attack-assumed defense names
    cols: list  # deployed defense names
    cells: np.ndarray  # recovered accuracy, percent


@dataclass
class PowerIterConfig:
    iters: int = 60
    fd_step: float = 1e-3
    tol: float = 1e-4
    seed: int = 0


def _grad_x_f64(model, x, label):
    """Float64 input gradient of the cross-entropy loss, deterministic."""
    xb = np.asarray(x, dtype=np.float64)[None]
    logits, tape, _ = _run_batch(model, xb, None, None, "eval", keep_tape=True)
    p = _softmax(logits)
    seed = p.copy()
    seed[0, int(label)] -= 1.0
    gx, _ = _backward(model, tape, seed)
    return gx[0], logits[0]


def _predict_det(model, x) -> int:
    xb = np.asarray(x, dtype=np.float64)[None]
    logits, _, _ = _run_batch(model, xb, None, None, "eval", keep_tape=False)
    return int(np.argmax(logits[0]))


def grad_norms_per_class(model, x) -> InstabilityReport:
    """Per-class loss-gradient norms and the anomaly flag for one input."""
    norms = np.empty(model.num_classes)
    logits = None
    for c in range(model.num_classes):
        g, logits = _grad_x_f64(model, x, c)
        norms[c] = np.linalg.norm(g.ravel())
    conf = _softmax(logits[None])[0]
    anomaly = int(np.argmin(norms)) != int(np.argmax(conf))
    return InstabilityReport(m1_per_class=norms, anomaly=bool(anomaly), confidences=conf)


def top_eig_fd(grad_fn, x, cfg: PowerIterConfig = PowerIterConfig()) -> float:
    """Largest-magnitude eigenvalue (signed Rayleigh value) of the
    symmetric operator whose action is probed by finite differences of
    ``grad_fn`` around x."""
    if cfg.iters < 1:
        raise ParameterError("iters must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    h = cfg.fd_step * (1.0 + float(np.max(np.abs(x))))
    v = Rng(cfg.seed ^ 0x9E37, 0).gauss(1.0, x.shape)
    v /= np.linalg.norm(v.ravel())
    lam = 0.0
    for i in range(cfg.iters):
        hv = (grad_fn(x + h * v) - grad_fn(x - h * v)) / (2.0 * h)
        hv = np.asarray(hv, dtype=np.float64)
        if not np.all(np.isfinite(hv)):
            raise NumericalError(
                f"non-finite Hessian-vector product at iteration {i} (fd_step={cfg.fd_step})"
            )
        lam_new = float(np.sum(v * hv))
        nrm = float(np.linalg.norm(hv.ravel()))
        if nrm == 0.0:
            return 0.0
        v = hv / nrm
        if i > 0 and abs(lam_new - lam) < cfg.tol * max(abs(lam_new), 1e-12):
            return lam_new
        lam = lam_new
    return lam


def top_hessian_eig(model, x, label, cfg: PowerIterConfig = PowerIterConfig()) -> float:
    """Top input-Hessian eigenvalue of the loss at x for the given class."""

    def grad_fn(xx):
        return _grad_x_f64(model, xx, label)[0]

    return top_eig_fd(grad_fn, x, cfg)


def instability_report(model, x, label, cfg: PowerIterConfig = PowerIterConfig()) -> InstabilityReport:
    rep = grad_norms_per_class(model, x)
    rep.m2 = top_hessian_eig(model, x, label, cfg)
    return rep


def recovery_window(model, x_orig, x_adv, labels, sigmas, trials, rng: Rng) -> RecoveryCurve:
    """Frequency of original/adversarial/other predictions when gaussian
    noise of growing strength is added to an adversarial image.

    ``labels`` is (original, adversarial); x_adv must be misclassified by
    the deterministic model.  The noisy copy is clamped to [0,1] before
    classification.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    orig_label, adv_label = int(labels[0]), int(labels[1])
    if _predict_det(model, x_adv) == orig_label:
        raise ArgumentError("x_adv is not adversarial: deterministic prediction equals the original label")
    x_adv = np.asarray(x_adv, dtype=np.float64)
    freq_o, freq_a, freq_x = [], [], []
    for i, sigma in enumerate(sigmas):
        counts = [0, 0, 0]

        def one(t, sigma=sigma, i=i):
            r = rng.derive(i * trials + t)
            noisy = clamp01(x_adv + r.gauss(sigma, x_adv.shape)).astype(np.float32)
            return _predict_det(model, noisy)

        preds = parallel_map(one, range(trials))
        for p in preds:
            if p == orig_label:
                counts[0] += 1
            elif p == adv_label:
                counts[1] += 1
            else:
                counts[2] += 1
        freq_o.append(counts[0])
        freq_a.append(counts[1])
        freq_x.append(counts[2])
    return RecoveryCurve(
        sigmas=list(sigmas),
        freq_original=freq_o,
        freq_adversarial=freq_a,
        freq_other=freq_x,
        trials=trials,
    )


def generate_adversarial_set(model, examples, cfg: AttackConfig, noise=None, rng: Rng | None = None):
    """Attack every (x, label) pair with a per-example derived stream;
    returns [(x_adv, label), ...] in input order."""
    rng = rng or Rng(0)
    examples = list(examples)

    def one(item):
        i, (x, label) = item
        res = run_attack(model, x, int(label), cfg, noise, rng.derive(i))
        return (res.x_adv, int(label))

    return parallel_map(one, enumerate(examples))


def channel_sweep(
    model,
    family: str,
    strengths,
    adv_set,
    clean_set,
    rng: Rng,
    distortion_trials: int = 10,
):
    """Distortion and defended accuracies across one channel family.

    Returns one dict per strength:
    {family, strength, delta_c, clean_acc, adv_acc}.
    """
    adv_set = list(adv_set)
    clean_set = list(clean_set)
    if not adv_set or not clean_set:
        raise ArgumentError("channel_sweep needs non-empty example sets")
    rows = []
    clean_images = [x for x, _ in clean_set]
    for si, strength in enumerate(strengths):
        ch = Channel(family, strength)
        trials = 1 if ch.deterministic else distortion_trials
        delta = channel_distortion(ch, clean_images, rng.derive(2 * si), trials)
        defense = DefenseConfig(channel=ch, trials=1)
        r_eval = rng.derive(2 * si + 1)
        clean_acc = evaluate_defense(model, defense, clean_set, r_eval.derive(0))
        adv_acc = evaluate_defense(model, defense, adv_set, r_eval.derive(1))
        rows.append(
            {
                "family": family,
                "strength": float(strength),
                "delta_c": delta,
                "clean_acc": clean_acc,
                "adv_acc": adv_acc,
            }
        )
    return rows


def transfer_matrix(model, attack_rows, defense_cols, examples, rng: Rng) -> TransferMatrix:
    """Partially-adaptive transfer: row = channel assumed by the attacker
    (None = clean images), column = deployed defense, cell = recovered
    accuracy.  All cells share the same underlying model and examples."""
    examples = list(examples)
    if not examples:
        raise ArgumentError("transfer_matrix needs examples")
    row_names = [name for name, _ in attack_rows]
    col_names = [name for name, _ in defense_cols]
    cells = np.zeros((len(attack_rows), len(defense_cols)))
    for i, (_, atk) in enumerate(attack_rows):
        if atk is None:
            row_set = examples
        else:
            row_set = generate_adversarial_set(model, examples, atk, None, rng.derive(1000 + i))
        for j, (_, dfn) in enumerate(defense_cols):
            cells[i, j] = evaluate_defense(model, dfn, row_set, rng.derive(i * 10_000 + j))
    return TransferMatrix(rows=row_names, cols=col_names, cells=cells)
