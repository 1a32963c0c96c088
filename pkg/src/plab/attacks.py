"""White-box and black-box attack procedures.

All attacks are untargeted, never mutate the model or the input, and report
the adversarial candidate, an L2/Linf distortion pair, and forward/backward
query counts.  Success against a randomized target is decided by majority
over ``vote_count`` deterministic-seeded votes; deterministic targets use a
single forward pass.

Gradient-based attacks can run through a channel assumed by the attacker
(``channel_in_loop``): each gradient evaluation applies the channel on the
way forward and routes the backward pass through
:func:`channel_backward` -- the exact adjoint for the frequency filter and
additive noise, the identity surrogate for the quantizer and the low-rank
reduction.  ``eot_samples`` > 1 averages gradients over fresh randomness.

Descriptor strings: ``pgd:eps=0.031,steps=40``,
``cw:c=0.01,steps=100,bs=5,kappa=0``, ``boundary:iters=2000``,
``contrast``, ``pixel:steps=50``, ``translate:eps=3``; suffixes
``+eot=k`` and ``+channel=<channel-descriptor>``.
"""

from dataclasses import dataclass, field

import numpy as np

from plab.channels import Channel, apply_channel, fc_mask_gradient, format_channel, parse_channel
from plab.errors import ArgumentError, ConfigError, ParameterError
from plab.network import _backward, _run_batch, _softmax, forward, forward_batch
from plab.rng import Rng
from plab.tensor import clamp01, l2, linf

ATTACK_KINDS = ("pgd", "fgsm", "cw_l2", "boundary", "contrast", "pixel", "translate")


@dataclass
class AttackConfig:
    kind: str = "pgd"
    eps: float = 0.3
    steps: int = 40
    step_size: float = 0.01
    random_start: bool = True
    c_init: float = 0.01
    binary_steps: int = 5
    lr: float = 0.005
    confidence: float = 0.0
    eot_samples: int = 1
    channel_in_loop: Channel | None = None
    iters: int = 2000
    init_trials: int = 100
    vote_count: int = 11

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if min(self.eps, self.step_size, self.lr) < 0:
            raise ParameterError("eps, step_size and lr must be >= 0")
        if self.eot_samples < 1:
            raise ParameterError("eot_samples must be >= 1")
        if self.vote_count < 1:
            raise ParameterError("vote_count must be >= 1")


@dataclass
class AttackResult:
    x_adv: np.ndarray
    success: bool
    delta_adv: float
    linf: float
    queries: dict = field(default_factory=dict)


class _Counter:
    def __init__(self):
        self.forward = 0
        self.backward = 0

    def as_dict(self):
        return {"forward": self.forward, "backward": self.backward}


def _noise_active(noise):
    return noise is not None and noise.active


def predict_label(model, x, noise=None, rng=None, votes=1, counter=None):
    """Deterministic-mode prediction, or the modal label over ``votes``
    stochastic passes when the target is randomized."""
    if not _noise_active(noise):
        if counter:
            counter.forward += 1
        return int(np.argmax(forward(model, x)))
    if rng is None:
        raise ArgumentError("randomized prediction needs an rng")
    hist = np.zeros(model.num_classes, dtype=np.int64)
    for t in range(votes):
        logits = forward(model, x, noise, rng.derive(t))
        hist[int(np.argmax(logits))] += 1
        if counter:
            counter.forward += 1
    return int(np.argmax(hist))


def _is_adversarial(model, x, label, noise, rng, votes, counter=None):
    return predict_label(model, x, noise, rng, votes, counter) != label


def eot_grad(model, x, label, noise=None, rng=None, samples=1):
    """Input gradient of the cross-entropy loss averaged over ``samples``
    independent stochastic forward passes."""
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    g, _ = _eot_grad_batch(
        model,
        np.asarray(x, dtype=np.float64)[None],
        np.array([int(label)]),
        None,
        noise,
        rng,
        samples,
        _Counter(),
    )
    return g[0].astype(np.float32)


def channel_backward(channel: Channel | None, x, upstream_grad):
    """Route a gradient backward through a channel: exact derivative where
    one exists (additive noise, frequency mask), identity surrogate for the
    non-differentiable quantizer and rank truncation."""
    if channel is None or channel.kind in ("empty", "cd", "svd") or channel.kind in (
        "gauss",
        "uniform",
        "laplace",
    ):
        return upstream_grad
    if channel.kind == "fc":
        return fc_mask_gradient(upstream_grad, channel.param)
    raise ConfigError(f"unknown channel kind {channel.kind!r}")


def _eot_grad_batch(model, xb, yb, channel, noise, rng, samples, counter):
    """Per-example loss gradients, channel-aware, EOT-averaged.

    Returns (grads (B,...), logits of the last sample).
    """
    if samples > 1 and not (_noise_active(noise) or (channel is not None and not channel.deterministic)):
        samples = 1  # fully deterministic loop: extra samples are identical
    b = xb.shape[0]
    total = np.zeros_like(xb)
    logits = None
    for s in range(samples):
        r = rng.derive(s) if rng is not None else None
        if channel is not None and channel.kind != "empty":
            xc = np.empty_like(xb)
            for i in range(b):
                cr = r.derive(i) if r is not None else None
                xc[i] = apply_channel(channel, xb[i].astype(np.float32), cr)
        else:
            xc = xb
        logits, tape, _ = _run_batch(model, xc, noise, r, "eval", keep_tape=True)
        p = _softmax(logits)
        seed = p.copy()
        seed[np.arange(b), yb] -= 1.0
        gx, _ = _backward(model, tape, seed)
        counter.forward += b
        counter.backward += b
        if channel is not None:
            for i in range(b):
                gx[i] = channel_backward(channel, xb[i], gx[i])
        total += gx
    return total / samples, logits


def _resolve_pgd(cfg):
    if cfg.kind == "fgsm":
        return cfg.eps, 1, cfg.eps, False
    return cfg.eps, cfg.steps, cfg.step_size, cfg.random_start


def pgd_batch(model, xb, yb, cfg, noise=None, rng=None):
    """Batched projected gradient ascent under an Linf budget.

    Returns the adversarial batch (float32, clamped to [0,1], within
    ``eps`` of the input in Linf).
    """
    eps, steps, step, random_start = _resolve_pgd(cfg)
    rng = rng or Rng(0)
    counter = _Counter()
    xb0 = np.asarray(xb, dtype=np.float64)
    yb = np.asarray(yb, dtype=np.int64)
    xa = xb0.copy()
    if random_start and eps > 0:
        xa = clamp01(xb0 + rng.derive(0).uniform(eps, xb0.shape))
    for t in range(steps):
        g, _ = _eot_grad_batch(
            model, xa, yb, cfg.channel_in_loop, noise, rng.derive(t + 1),
            cfg.eot_samples, counter,
        )
        xa = np.clip(xa + step * np.sign(g), xb0 - eps, xb0 + eps)
        xa = clamp01(xa)
    return xa.astype(np.float32), counter


def pgd(model, x, label, cfg, noise=None, rng=None) -> AttackResult:
    """Projected gradient descent (or FGSM when cfg.kind == "fgsm")."""
    if cfg.kind not in ("pgd", "fgsm"):
        raise ConfigError(f"pgd() got attack kind {cfg.kind!r}")
    rng = rng or Rng(0)
    x = np.asarray(x, dtype=np.float32)
    xa, counter = pgd_batch(model, x[None], [int(label)], cfg, noise, rng)
    x_adv = xa[0]
    success = _is_adversarial(
        model, x_adv, int(label), noise, rng.derive(10**9), cfg.vote_count, counter
    )
    return AttackResult(
        x_adv=x_adv,
        success=success,
        delta_adv=l2(x_adv.astype(np.float64) - x),
        linf=linf(x_adv.astype(np.float64) - x),
        queries=counter.as_dict(),
    )


def _cw_objective_grad(model, xw, label, kappa, channel, noise, rng, samples, counter):
    """Value and input-gradient of max(z_label - max_other, -kappa), plus
    the argmax of the (last sampled) logits.  Logits and gradient come from
    the same forward pass, so stochastic draws stay consistent."""
    if samples > 1 and not (_noise_active(noise) or (channel is not None and not channel.deterministic)):
        samples = 1
    total = np.zeros(xw.shape, dtype=np.float64)
    value = 0.0
    pred = None
    for s in range(samples):
        r = rng.derive(s) if rng is not None else None
        xin = xw
        if channel is not None and channel.kind != "empty":
            xin = apply_channel(channel, xw.astype(np.float32), r.derive(0) if r else None)
        logits_b, tape, _ = _run_batch(
            model, np.asarray(xin, dtype=np.float64)[None], noise, r, "eval", keep_tape=True
        )
        counter.forward += 1
        logits = logits_b[0]
        pred = int(np.argmax(logits))
        others = np.delete(logits, label)
        j = int(np.argmax(others))
        j = j if j < label else j + 1
        margin = float(logits[label] - logits[j])
        if margin > -kappa:
            seed = np.zeros((1, model.num_classes))
            seed[0, label] = 1.0
            seed[0, j] = -1.0
            gx, _ = _backward(model, tape, seed)
            counter.backward += 1
            gx = channel_backward(channel, xw, gx[0]) if channel else gx[0]
            total += np.asarray(gx, dtype=np.float64)
            value += margin
        else:
            value += -kappa
    return value / samples, total / samples, pred


def cw_l2(model, x, label, cfg, noise=None, rng=None) -> AttackResult:
    """L2-minimal misclassification via the tanh change of variables.

    Minimizes ``||delta||^2 + c * max(z_label - max_other, -kappa)`` by
    plain gradient descent (rate ``cfg.lr``); ``c`` follows a multiply-
    then-bisect search over ``cfg.binary_steps`` rounds from ``cfg.c_init``.
    Returns the lowest-distortion success found, or the original input with
    ``success=False``.
    """
    if cfg.kind != "cw_l2":
        raise ConfigError(f"cw_l2() got attack kind {cfg.kind!r}")
    rng = rng or Rng(0)
    label = int(label)
    counter = _Counter()
    x0 = np.asarray(x, dtype=np.float64)
    shrink = 1.0 - 1e-6
    w0 = np.arctanh((2.0 * clamp01(x0) - 1.0) * shrink)

    best_x = None
    best_delta = np.inf
    c = cfg.c_init
    lo, hi = 0.0, None
    rounds = max(1, cfg.binary_steps)
    vote_rng = rng.derive(10**9)
    for rnd in range(rounds):
        w = w0.copy()
        succeeded = False
        for t in range(cfg.steps):
            xw = (np.tanh(w) + 1.0) / 2.0
            delta = xw - x0
            _, gf, pred = _cw_objective_grad(
                model, xw, label, cfg.confidence, cfg.channel_in_loop,
                noise, rng.derive(rnd * 1_000_003 + t), cfg.eot_samples, counter,
            )
            if pred != label:
                d = l2(delta)
                if d < best_delta:
                    # pred came from the (possibly channeled) attacker view;
                    # acceptance is judged against the bare model
                    bare = (
                        cfg.channel_in_loop is None and not _noise_active(noise)
                    ) or _is_adversarial(
                        model, xw.astype(np.float32), label, noise,
                        vote_rng.derive(rnd * 1_000_003 + t), cfg.vote_count, counter,
                    )
                    if bare:
                        best_delta = d
                        best_x = xw.astype(np.float32)
                        succeeded = True
            gw = (2.0 * delta + c * gf) * (1.0 - np.tanh(w) ** 2) / 2.0
            w = w - cfg.lr * gw
        if succeeded:
            hi = c
            c = (lo + hi) / 2.0
        else:
            lo = c
            c = c * 10.0 if hi is None else (lo + hi) / 2.0

    if best_x is None:
        return AttackResult(
            x_adv=np.asarray(x, dtype=np.float32).copy(),
            success=False,
            delta_adv=0.0,
            linf=0.0,
            queries=counter.as_dict(),
        )
    return AttackResult(
        x_adv=best_x,
        success=True,
        delta_adv=best_delta,
        linf=linf(best_x.astype(np.float64) - x0),
        queries=counter.as_dict(),
    )


def boundary_attack(model, x, label, cfg, noise=None, rng=None) -> AttackResult:
    """Decision-based random walk along the boundary.

    Starts from a uniform-random misclassified image (up to
    ``cfg.init_trials`` draws), bisects toward the input, then alternates
    orthogonal perturbation and contraction steps, accepting only
    misclassified candidates that do not increase the distortion.  Step
    sizes adapt to hold the acceptance rate between 25% and 75%.
    """
    if cfg.kind != "boundary":
        raise ConfigError(f"boundary_attack() got attack kind {cfg.kind!r}")
    rng = rng or Rng(0)
    label = int(label)
    counter = _Counter()
    x0 = np.asarray(x, dtype=np.float64)
    shape = x0.shape
    vote_rng = rng.derive(10**9)

    def adv(cand, tag):
        return _is_adversarial(
            model, cand.astype(np.float32), label, noise, vote_rng.derive(tag),
            cfg.vote_count, counter,
        )

    if adv(x0, 0):
        return AttackResult(
            x_adv=x0.astype(np.float32).copy(),
            success=True,
            delta_adv=0.0,
            linf=0.0,
            queries=counter.as_dict(),
        )

    start = None
    for t in range(cfg.init_trials):
        cand = rng.derive(t + 1).uniform01(int(np.prod(shape))).reshape(shape)
        if adv(cand, t + 1):
            start = cand
            break
    if start is None:
        return AttackResult(
            x_adv=x0.astype(np.float32).copy(),
            success=False,
            delta_adv=0.0,
            linf=0.0,
            queries=counter.as_dict(),
        )

    lo_t, hi_t = 0.0, 1.0  # interpolation x0 + t*(start-x0); hi stays adversarial
    for b in range(12):
        mid = (lo_t + hi_t) / 2.0
        cand = x0 + mid * (start - x0)
        if adv(cand, 10_000 + b):
            hi_t = mid
        else:
            lo_t = mid
    current = x0 + hi_t * (start - x0)
    dist = l2(current - x0)

    step_orth = 0.1
    step_src = 0.1
    accepted = 0
    window = 0
    walk_rng = rng.derive(2)
    for i in range(cfg.iters):
        if dist == 0.0:
            break
        r = walk_rng.derive(i)
        d = current - x0
        eta = r.gauss(1.0, shape)
        eta -= (float(np.sum(eta * d)) / (dist * dist)) * d
        norm = l2(eta)
        if norm > 0:
            eta *= step_orth * dist / norm
        cand = x0 + (d + eta)
        cd = l2(cand - x0)
        if cd > 0:
            cand = x0 + (cand - x0) * (dist / cd)  # back to the sphere
        cand = x0 + (1.0 - step_src) * (cand - x0)  # contract toward x0
        cand = clamp01(cand)
        window += 1
        if l2(cand - x0) <= dist and adv(cand, 20_000 + i):
            current = cand
            dist = l2(current - x0)
            accepted += 1
        if window == 25:
            rate = accepted / window
            if rate < 0.25:
                step_orth *= 0.7
                step_src *= 0.7
            elif rate > 0.75:
                step_orth = min(step_orth * 1.3, 1.0)
                step_src = min(step_src * 1.3, 0.5)
            accepted = 0
            window = 0

    x_adv = current.astype(np.float32)
    return AttackResult(
        x_adv=x_adv,
        success=True,
        delta_adv=l2(x_adv.astype(np.float64) - x0),
        linf=linf(x_adv.astype(np.float64) - x0),
        queries=counter.as_dict(),
    )


def simple_blackbox(model, x, label, cfg, noise=None, rng=None) -> AttackResult:
    """Gradient-free attacks: contrast reduction, extreme-pixel flips, and
    integer spatial translation with zero fill."""
    if cfg.kind not in ("contrast", "pixel", "translate"):
        raise ConfigError(f"simple_blackbox() got attack kind {cfg.kind!r}")
    rng = rng or Rng(0)
    label = int(label)
    counter = _Counter()
    x0 = np.asarray(x, dtype=np.float64)
    vote_rng = rng.derive(10**9)

    def result(cand, success):
        cand32 = cand.astype(np.float32)
        return AttackResult(
            x_adv=cand32,
            success=success,
            delta_adv=l2(cand - x0),
            linf=linf(cand - x0),
            queries=counter.as_dict(),
        )

    def adv(cand, tag):
        return _is_adversarial(
            model, cand.astype(np.float32), label, noise, vote_rng.derive(tag),
            cfg.vote_count, counter,
        )

    if cfg.kind == "contrast":
        target = 0.5  # midpoint of the pixel range
        for i, e in enumerate(np.linspace(0.0, 1.0, max(cfg.steps, 2) + 1)[1:]):
            cand = (1.0 - e) * x0 + e * target
            if adv(cand, i):
                return result(cand, True)
        return result(x0.copy(), False)

    if cfg.kind == "pixel":
        # a "pixel" is one spatial position (all channels) for image input,
        # one coordinate for flat input
        if x0.ndim == 3:
            n_pix = x0.shape[1] * x0.shape[2]

            def set_pixel(arr, pi, val):
                yy, xx = divmod(pi, x0.shape[2])
                arr[:, yy, xx] = val
        else:
            n_pix = x0.size

            def set_pixel(arr, pi, val):
                arr.reshape(-1)[pi] = val

        base_prob = _softmax(forward(model, x0.astype(np.float32)).astype(np.float64)[None])[0, label]
        counter.forward += 1
        candidates = []
        keys = []
        for pi in range(n_pix):
            for val in (0.0, 1.0):
                cand = x0.copy()
                set_pixel(cand, pi, val)
                candidates.append(cand)
                keys.append((pi, val))
        scored = []
        for start in range(0, len(candidates), 256):
            block = np.stack(candidates[start : start + 256])
            logits = forward_batch(model, block).astype(np.float64)
            counter.forward += len(block)
            probs = _softmax(logits)[:, label]
            for off, p in enumerate(probs):
                pi, val = keys[start + off]
                scored.append((float(base_prob - p), pi, val))
        scored.sort(key=lambda t: (-t[0], t[1], t[2]))
        cand = x0.copy()
        used = set()
        changed = 0
        for _, pi, val in scored:
            if changed >= max(cfg.steps, 1):
                break
            if pi in used:
                continue
            used.add(pi)
            set_pixel(cand, pi, val)
            changed += 1
            if adv(cand, changed):
                return result(cand, True)
        return result(x0.copy(), False)

    # translate
    limit = int(round(cfg.eps))
    shifts = sorted(
        ((dy, dx) for dy in range(-limit, limit + 1) for dx in range(-limit, limit + 1)),
        key=lambda s: (max(abs(s[0]), abs(s[1])), s[0], s[1]),
    )
    for i, (dy, dx) in enumerate(shifts):
        cand = _shift2d(x0, dy, dx)
        if adv(cand, i):
            return result(cand, True)
    return result(x0.copy(), False)


def _shift2d(x, dy, dx):
    c, h, w = x.shape
    out = np.zeros_like(x)
    ys0, ys1 = max(dy, 0), h + min(dy, 0)
    xs0, xs1 = max(dx, 0), w + min(dx, 0)
    out[:, ys0:ys1, xs0:xs1] = x[:, ys0 - dy : ys1 - dy, xs0 - dx : xs1 - dx]
    return out


def run_attack(model, x, label, cfg, noise=None, rng=None) -> AttackResult:
    """Dispatch on cfg.kind."""
    if cfg.kind in ("pgd", "fgsm"):
        return pgd(model, x, label, cfg, noise, rng)
    if cfg.kind == "cw_l2":
        return cw_l2(model, x, label, cfg, noise, rng)
    if cfg.kind == "boundary":
        return boundary_attack(model, x, label, cfg, noise, rng)
    return simple_blackbox(model, x, label, cfg, noise, rng)


_KEY_MAP = {
    "eps": "eps",
    "steps": "steps",
    "step": "step_size",
    "rs": "random_start",
    "c": "c_init",
    "bs": "binary_steps",
    "kappa": "confidence",
    "lr": "lr",
    "iters": "iters",
    "init": "init_trials",
    "votes": "vote_count",
}

_KIND_MAP = {"cw": "cw_l2"}


def parse_attack(desc: str) -> AttackConfig:
    """Parse an attack descriptor (see module docstring)."""
    parts = desc.strip().split("+")
    main = parts[0].strip()
    name, _, args = main.partition(":")
    kind = _KIND_MAP.get(name.strip(), name.strip())
    if kind not in ATTACK_KINDS:
        raise ConfigError(f"unknown attack {name!r} in {desc!r}")
    kwargs = {"kind": kind}
    if args:
        for item in args.split(","):
            key, _, val = item.partition("=")
            key = key.strip()
            if key not in _KEY_MAP:
                raise ConfigError(f"unknown attack option {key!r} in {desc!r}")
            fieldname = _KEY_MAP[key]
            try:
                if fieldname in ("steps", "binary_steps", "iters", "init_trials", "vote_count"):
                    kwargs[fieldname] = int(val)
                elif fieldname == "random_start":
                    kwargs[fieldname] = val.strip() in ("1", "true", "yes")
                else:
                    kwargs[fieldname] = float(val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r} in {desc!r}") from exc
    for suffix in parts[1:]:
        key, _, val = suffix.strip().partition("=")
        if key == "eot":
            kwargs["eot_samples"] = int(val)
        elif key == "channel":
            kwargs["channel_in_loop"] = parse_channel(val)
        else:
            raise ConfigError(f"unknown attack suffix {key!r} in {desc!r}")
    try:
        return AttackConfig(**kwargs)
    except (ParameterError, ConfigError) as exc:
        raise ConfigError(f"bad attack descriptor {desc!r}: {exc}") from exc


def format_attack(cfg: AttackConfig) -> str:
    name = "cw" if cfg.kind == "cw_l2" else cfg.kind
    if cfg.kind in ("pgd", "fgsm"):
        body = f"{name}:eps={cfg.eps:g},steps={cfg.steps},step={cfg.step_size:g}"
    elif cfg.kind == "cw_l2":
        body = f"{name}:c={cfg.c_init:g},steps={cfg.steps},bs={cfg.binary_steps},kappa={cfg.confidence:g},lr={cfg.lr:g}"
    elif cfg.kind == "boundary":
        body = f"{name}:iters={cfg.iters}"
    elif cfg.kind == "pixel":
        body = f"{name}:steps={cfg.steps}"
    elif cfg.kind == "translate":
        body = f"{name}:eps={cfg.eps:g}"
    else:
        body = name
    if cfg.eot_samples > 1:
        body += f"+eot={cfg.eot_samples}"
    if cfg.channel_in_loop is not None:
        body += f"+channel={format_channel(cfg.channel_in_loop)}"
    return body
