"""Defense wrappers and adversarial training.

A deployed defense is described by :class:`DefenseConfig`: an optional
input channel, a noise configuration for the network (feature-map noise,
aka the RobustNet style, or parameter noise, the ParamNet style), and a
vote count.  Prediction repeats the full stochastic pipeline ``trials``
times and returns the modal label (ties break toward the lowest class
index).

Adversarial training follows the equally-weighted clean/adversarial loss
with a projected-gradient inner loop; combining it with feature noise in
both the inner loop and at evaluation gives the strongest configuration
studied here.

Descriptor: ``channel:<channel-desc>;noise:<dist>,<s_init>,<s_inner>,<s_param>;trials:<n>``
(sections optional, e.g. ``channel:cd:4`` or ``noise:gauss,0.2,0.1,0;trials:11``).
"""

from dataclasses import dataclass, field

import numpy as np

from plab.attacks import AttackConfig, pgd_batch
from plab.channels import Channel, apply_channel, format_channel, parse_channel
from plab.errors import ArgumentError, ConfigError, ParameterError
from plab.network import (
    NoiseConfig,
    TrainConfig,
    _loss_and_grads_batch,
    _dataset_arrays,
    forward,
)
from plab.parallel import parallel_map
from plab.rng import Rng


@dataclass
class DefenseConfig:
    channel: Channel | None = None
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    trials: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")

    @property
    def stochastic(self) -> bool:
        return self.noise.active or (self.channel is not None and not self.channel.deterministic)


@dataclass
class AdvTrainConfig:
    pgd_steps: int = 7
    eps: float = 8 / 255
    step_size: float = 2.55 / 255
    clean_weight: float = 0.5
    adv_weight: float = 0.5

    def __post_init__(self):
        if abs(self.clean_weight + self.adv_weight - 1.0) > 1e-9:
            raise ParameterError("clean_weight and adv_weight must sum to 1")
        if self.eps < 0 or self.step_size < 0:
            raise ParameterError("eps and step_size must be >= 0")


def defend_predict(model, defense: DefenseConfig, x, rng: Rng):
    """Defended prediction: (modal label, per-class vote histogram)."""
    hist = np.zeros(model.num_classes, dtype=np.int64)
    for t in range(defense.trials):
        r = rng.derive(t)
        xt = x
        if defense.channel is not None:
            xt = apply_channel(defense.channel, x, r.derive(0))
        logits = forward(model, xt, defense.noise, r.derive(1))
        hist[int(np.argmax(logits))] += 1
    return int(np.argmax(hist)), hist


def evaluate_defense(model, defense: DefenseConfig, examples, rng: Rng) -> float:
    """Accuracy (percent) of the defended model on (x, label) pairs.

    Each example gets its own derived stream, so the result is independent
    of evaluation parallelism.
    """
    examples = list(examples)
    if not examples:
        raise ArgumentError("evaluate_defense needs at least one example")

    def one(item):
        i, (x, label) = item
        pred, _ = defend_predict(model, defense, x, rng.derive(i))
        return int(pred == int(label))

    hits = parallel_map(one, enumerate(examples))
    return 100.0 * sum(hits) / len(examples)


def train_adversarial(model, dataset, atc: AdvTrainConfig, noise: NoiseConfig, cfg: TrainConfig):
    """SGD on ``clean_weight * L(x) + adv_weight * L(x_adv)`` where x_adv
    comes from an inner PGD run against the current model (single noise
    draw per step; the inner attack sees the same noise the defense will
    use).  With eps == 0 this reduces exactly to standard training."""
    images, labels = _dataset_arrays(dataset)
    rng = Rng(cfg.seed, 1)
    noise_rng = Rng(cfg.seed, 2)
    attack_rng = Rng(cfg.seed, 3)
    inner = AttackConfig(
        kind="pgd",
        eps=atc.eps,
        steps=atc.pgd_steps,
        step_size=atc.step_size,
        random_start=True,
    )
    velocity = {n: np.zeros(model.params[n].shape) for n in model.param_names}
    n = len(images)
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        ep = {"loss": 0.0, "acc": 0.0, "adv_loss": 0.0, "adv_acc": 0.0}
        nb = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb = images[idx].astype(np.float64)
            yb = labels[idx]
            if atc.eps > 0:
                x_adv, _ = pgd_batch(model, xb, yb, inner, noise, attack_rng.derive(step))
                adv_loss, adv_acc, g_adv = _loss_and_grads_batch(
                    model, x_adv.astype(np.float64), yb, noise, noise_rng, "train"
                )
                loss, acc, g_clean = _loss_and_grads_batch(
                    model, xb, yb, noise, noise_rng, "train"
                )
                grads = {
                    k: atc.clean_weight * g_clean[k] + atc.adv_weight * g_adv[k]
                    for k in g_clean
                }
            else:
                loss, acc, grads = _loss_and_grads_batch(model, xb, yb, noise, noise_rng, "train")
                adv_loss, adv_acc = loss, acc
            for name in model.param_names:
                v = velocity[name]
                v *= cfg.momentum
                v -= cfg.lr * grads[name]
                model.params[name] = (
                    model.params[name].astype(np.float64) + v
                ).astype(np.float32)
            ep["loss"] += loss
            ep["acc"] += acc
            ep["adv_loss"] += adv_loss
            ep["adv_acc"] += adv_acc
            nb += 1
            step += 1
        history.append({k: v / nb for k, v in ep.items()} | {"epoch": epoch})
    model.meta["epochs"] = model.meta.get("epochs", 0) + cfg.epochs
    model.meta["seed"] = cfg.seed
    return model, history


def parse_defense(desc: str) -> DefenseConfig:
    """Parse a defense descriptor (see module docstring)."""
    desc = desc.strip()
    if desc.startswith("defense="):
        desc = desc[len("defense=") :]
    channel = None
    noise = NoiseConfig()
    trials = 1
    if desc and desc != "none":
        for section in desc.split(";"):
            section = section.strip()
            if not section:
                continue
            key, _, val = section.partition(":")
            key = key.strip()
            if key == "channel":
                channel = parse_channel(val)
                if channel.kind == "empty":
                    channel = None
            elif key == "noise":
                parts = [p.strip() for p in val.split(",")]
                if len(parts) != 4:
                    raise ConfigError(f"noise section needs dist,s_init,s_inner,s_param: {val!r}")
                try:
                    noise = NoiseConfig(
                        dist=parts[0],
                        sigma_init=float(parts[1]),
                        sigma_inner=float(parts[2]),
                        sigma_param=float(parts[3]),
                    )
                except (ValueError, ParameterError) as exc:
                    raise ConfigError(f"bad noise section {val!r}: {exc}") from exc
            elif key == "trials":
                try:
                    trials = int(val)
                except ValueError as exc:
                    raise ConfigError(f"bad trials value {val!r}") from exc
            else:
                raise ConfigError(f"unknown defense section {key!r} in {desc!r}")
    try:
        return DefenseConfig(channel=channel, noise=noise, trials=trials)
    except ParameterError as exc:
        raise ConfigError(f"bad defense descriptor {desc!r}: {exc}") from exc


def format_defense(d: DefenseConfig) -> str:
    parts = []
    if d.channel is not None:
        parts.append(f"channel:{format_channel(d.channel)}")
    nz = d.noise
    if nz.active:
        parts.append(f"noise:{nz.dist},{nz.sigma_init:g},{nz.sigma_inner:g},{nz.sigma_param:g}")
    parts.append(f"trials:{d.trials}")
    return ";".join(parts)
