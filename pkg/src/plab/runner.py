"""Experiment orchestration: resolve a config, run one experiment kind,
write CSV artifacts plus a manifest that suffices to re-run bit-exactly.

CSV schemas:

* history:     ``epoch,loss,acc``
* attack:      ``example_id,label,success,delta_adv,linf,queries_forward,queries_backward``
* sweep:       ``family,strength,delta_c,clean_acc,adv_acc``
* transfer:    ``attack_row,defense_col,accuracy``
* recovery:    ``sigma,freq_orig,freq_adv,freq_other,trials``
* instability: ``example_id,kind,m1_orig,m1_adv_class,m1_min_class,m2,anomaly``

All randomness flows through streams derived from the run seed, so a rerun
with the same resolved config produces byte-identical artifacts at any
worker count.  Partial outputs are removed when a run fails.
"""

from pathlib import Path

import numpy as np

import plab
from plab.analysis import (
    channel_sweep,
    generate_adversarial_set,
    instability_report,
    recovery_window,
    transfer_matrix,
)
from plab.attacks import AttackConfig, parse_attack, run_attack
from plab.channels import parse_channel
from plab.config import EXPERIMENT_KINDS, get_bool, get_float, get_float_list, get_int
from plab.data import gen_synthetic, load_binary_dataset
from plab.defenses import (
    AdvTrainConfig,
    DefenseConfig,
    parse_defense,
    train_adversarial,
)
from plab.errors import ArgumentError, ConfigError, PlabError
from plab.network import (
    NoiseConfig,
    TrainConfig,
    build_model,
    forward,
    load_checkpoint,
    save_checkpoint,
    train,
)
from plab.parallel import parallel_map
from plab.rng import Rng


def _parse_noise(desc: str, apply_in_training: bool) -> NoiseConfig:
    parts = [p.strip() for p in desc.split(",")]
    if len(parts) != 4:
        raise ConfigError(f"model.noise needs dist,s_init,s_inner,s_param, got {desc!r}")
    try:
        return NoiseConfig(
            dist=parts[0],
            sigma_init=float(parts[1]),
            sigma_inner=float(parts[2]),
            sigma_param=float(parts[3]),
            apply_in_training=apply_in_training,
        )
    except (ValueError, PlabError) as exc:
        raise ConfigError(f"bad model.noise {desc!r}: {exc}") from exc


def _parse_advtrain(desc: str) -> AdvTrainConfig:
    kwargs = {}
    names = {
        "eps": "eps",
        "steps": "pgd_steps",
        "step": "step_size",
        "clean": "clean_weight",
        "adv": "adv_weight",
    }
    for item in desc.split(","):
        item = item.strip()
        if not item:
            continue
        key, _, val = item.partition("=")
        if key not in names:
            raise ConfigError(f"unknown advtrain option {key!r}")
        try:
            value = float(val)
        except ValueError as exc:
            raise ConfigError(f"bad advtrain value {item!r}") from exc
        kwargs[names[key]] = int(value) if names[key] == "pgd_steps" else value
    try:
        return AdvTrainConfig(**kwargs)
    except PlabError as exc:
        raise ConfigError(f"bad advtrain descriptor {desc!r}: {exc}") from exc


class Experiment:
    """One resolved run: config, seed, output directory, derived streams."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        kind = cfg["experiment.kind"]
        if kind not in EXPERIMENT_KINDS:
            raise ConfigError(
                f"unknown experiment kind {kind!r}; valid kinds: {', '.join(EXPERIMENT_KINDS)}"
            )
        self.kind = kind
        self.seed = get_int(cfg, "experiment.seed")
        self.out = Path(cfg["experiment.out"])
        self.rng = Rng(self.seed)
        self._written = []

    # -- plumbing ---------------------------------------------------------

    def _path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self._written.append(p)
        return p

    def _write_csv(self, name: str, header: str, lines) -> Path:
        p = self._path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for line in lines:
                fh.write(line + "\n")
        return p

    def _write_manifest(self):
        lines = [f"{k} = {self.cfg[k]}" for k in sorted(self.cfg)]
        lines.append(f"plab.version = {plab.__version__}")
        lines.append(f"plab.backend = {plab.BACKEND}")
        p = self._path("manifest.txt")
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    def _cleanup(self):
        for p in self._written:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass

    # -- shared pieces ------------------------------------------------------

    def _dataset(self):
        cfg = self.cfg
        source = cfg["dataset.source"]
        k = get_int(cfg, "dataset.k")
        if source == "synthetic":
            size = get_int(cfg, "dataset.size")
            shape = (get_int(cfg, "dataset.channels"), size, size)
            ds = gen_synthetic(
                n=get_int(cfg, "dataset.n"),
                num_classes=k,
                shape=shape,
                noise_level=get_float(cfg, "dataset.noise_level"),
                seed=self.seed,
            )
        else:
            ds = load_binary_dataset(source, num_classes=k, split="train")
            test_source = cfg["dataset.test_source"]
            if test_source:
                test = load_binary_dataset(test_source, num_classes=k, split="test")
                ds.images = np.concatenate([ds.images, test.images])
                ds.labels = np.concatenate([ds.labels, test.labels])
                ds.split = np.concatenate([ds.split, test.split])
        return ds, k

    def _noise(self) -> NoiseConfig:
        return _parse_noise(
            self.cfg["model.noise"], get_bool(self.cfg, "model.apply_in_training")
        )

    def _eval_noise(self):
        noise = self._noise()
        return noise if noise.active else None

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=get_int(self.cfg, "model.epochs"),
            batch_size=get_int(self.cfg, "model.batch"),
            lr=get_float(self.cfg, "model.lr"),
            momentum=get_float(self.cfg, "model.momentum"),
            noise=self._noise(),
            seed=self.seed,
        )

    def _train_model(self, dataset, k):
        model = build_model(
            self.cfg["model.arch"],
            input_shape=dataset.images.shape[1:],
            num_classes=k,
            seed=self.seed,
        )
        tc = self._train_config()
        advdesc = self.cfg["model.advtrain"]
        train_set = dataset.subset("train")
        if advdesc:
            atc = _parse_advtrain(advdesc)
            model, history = train_adversarial(model, train_set, atc, self._noise(), tc)
            history = [
                {"epoch": h["epoch"], "loss": h["loss"], "acc": h["acc"]} for h in history
            ]
        else:
            model, history = train(model, train_set, tc)
        return model, history

    def _model(self, dataset, k):
        ckpt = self.cfg["model.checkpoint"]
        if ckpt:
            return load_checkpoint(ckpt)
        model, _ = self._train_model(dataset, k)
        return model

    def _test_examples(self, dataset, n, correctly_classified_by=None):
        images, labels = dataset.subset("test")
        if len(images) == 0:
            raise ArgumentError("dataset has no test split")
        out = []
        for x, y in zip(images, labels):
            if correctly_classified_by is not None:
                if int(np.argmax(forward(correctly_classified_by, x))) != int(y):
                    continue
            out.append((x, int(y)))
            if len(out) == n:
                break
        if not out:
            raise ArgumentError("no usable test examples")
        return out

    # -- experiment kinds ---------------------------------------------------

    def run(self) -> int:
        try:
            getattr(self, "_run_" + self.kind.replace("-", "_"))()
            self._write_manifest()
        except BaseException:
            self._cleanup()
            raise
        return 0

    def _run_train(self):
        dataset, k = self._dataset()
        model, history = self._train_model(dataset, k)
        save_checkpoint(model, self._path("model.ckpt"))
        self._write_csv(
            "history.csv",
            "epoch,loss,acc",
            (f"{h['epoch']},{h['loss']:.6f},{h['acc']:.4f}" for h in history),
        )

    def _run_attack(self):
        dataset, k = self._dataset()
        model = self._model(dataset, k)
        atk = parse_attack(self.cfg["attack.desc"])
        noise = self._eval_noise()
        examples = self._test_examples(dataset, get_int(self.cfg, "attack.n_examples"))
        arng = self.rng.derive(1)

        def one(item):
            i, (x, y) = item
            res = run_attack(model, x, y, atk, noise, arng.derive(i))
            return (
                f"{i},{y},{int(res.success)},{res.delta_adv:.6f},{res.linf:.6f},"
                f"{res.queries['forward']},{res.queries['backward']}"
            )

        lines = parallel_map(one, enumerate(examples))
        self._write_csv(
            "attack.csv",
            "example_id,label,success,delta_adv,linf,queries_forward,queries_backward",
            lines,
        )

    def _run_channel_sweep(self):
        dataset, k = self._dataset()
        model = self._model(dataset, k)
        clean = self._test_examples(dataset, get_int(self.cfg, "sweep.n_examples"))
        atk = parse_attack(self.cfg["sweep.attack"])
        adv = generate_adversarial_set(model, clean, atk, self._eval_noise(), self.rng.derive(1))
        rows = channel_sweep(
            model,
            self.cfg["sweep.family"],
            get_float_list(self.cfg, "sweep.strengths"),
            adv,
            clean,
            self.rng.derive(2),
            distortion_trials=get_int(self.cfg, "sweep.distortion_trials"),
        )
        self._write_csv(
            "sweep.csv",
            "family,strength,delta_c,clean_acc,adv_acc",
            (
                f"{r['family']},{r['strength']:g},{r['delta_c']:.6f},"
                f"{r['clean_acc']:.4f},{r['adv_acc']:.4f}"
                for r in rows
            ),
        )

    def _run_transfer(self):
        dataset, k = self._dataset()
        model = self._model(dataset, k)
        channels = [
            parse_channel(c) for c in self.cfg["transfer.channels"].split(",") if c.strip()
        ]
        base = parse_attack(self.cfg["transfer.attack"])
        trials = get_int(self.cfg, "transfer.trials")
        rows = [("Empty", None)]
        for ch in channels:
            cfg_ch = AttackConfig(
                **{
                    **base.__dict__,
                    "channel_in_loop": ch,
                }
            )
            rows.append((ch.kind, cfg_ch))
        cols = [(ch.kind, DefenseConfig(channel=ch, trials=trials)) for ch in channels]
        examples = self._test_examples(dataset, get_int(self.cfg, "transfer.n_examples"))
        tm = transfer_matrix(model, rows, cols, examples, self.rng.derive(3))
        lines = []
        for i, rname in enumerate(tm.rows):
            for j, cname in enumerate(tm.cols):
                lines.append(f"{rname},{cname},{tm.cells[i, j]:.4f}")
        self._write_csv("transfer.csv", "attack_row,defense_col,accuracy", lines)

    def _run_recovery_window(self):
        dataset, k = self._dataset()
        model = self._model(dataset, k)
        idx = get_int(self.cfg, "recovery.example")
        examples = self._test_examples(dataset, idx + 1, correctly_classified_by=model)
        if len(examples) <= idx:
            raise ArgumentError("not enough correctly classified test examples")
        x, y = examples[idx]
        atk = parse_attack(self.cfg["recovery.attack"])
        res = run_attack(model, x, y, atk, None, self.rng.derive(4))
        if not res.success:
            raise ArgumentError("attack failed to produce an adversarial example")
        adv_label = int(np.argmax(forward(model, res.x_adv)))
        curve = recovery_window(
            model,
            x,
            res.x_adv,
            (y, adv_label),
            get_float_list(self.cfg, "recovery.sigmas"),
            get_int(self.cfg, "recovery.trials"),
            self.rng.derive(5),
        )
        self._write_csv(
            "recovery.csv",
            "sigma,freq_orig,freq_adv,freq_other,trials",
            (
                f"{s:g},{fo},{fa},{fx},{curve.trials}"
                for s, fo, fa, fx in zip(
                    curve.sigmas,
                    curve.freq_original,
                    curve.freq_adversarial,
                    curve.freq_other,
                )
            ),
        )

    def _run_instability(self):
        dataset, k = self._dataset()
        model = self._model(dataset, k)
        n = get_int(self.cfg, "instability.n_examples")
        examples = self._test_examples(dataset, n, correctly_classified_by=model)
        atk = parse_attack(self.cfg["instability.attack"])
        arng = self.rng.derive(6)

        def fmt(i, kind, x, label):
            rep = instability_report(model, x, label)
            pred = int(np.argmax(forward(model, x)))
            return (
                f"{i},{kind},{rep.m1_per_class[label]:.6g},{rep.m1_per_class[pred]:.6g},"
                f"{rep.m1_per_class.min():.6g},{rep.m2:.6g},{int(rep.anomaly)}"
            )

        def one(item):
            i, (x, y) = item
            lines = [fmt(i, "nat", x, y)]
            res = run_attack(model, x, y, atk, None, arng.derive(i))
            if res.success:
                lines.append(fmt(i, "adv", res.x_adv, y))
            return lines

        nested = parallel_map(one, enumerate(examples))
        self._write_csv(
            "instability.csv",
            "example_id,kind,m1_orig,m1_adv_class,m1_min_class,m2,anomaly",
            (line for block in nested for line in block),
        )


def run_experiment(cfg: dict) -> int:
    """Run one experiment from a fully resolved config; returns 0."""
    return Experiment(cfg).run()
