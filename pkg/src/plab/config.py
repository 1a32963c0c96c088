"""Experiment configuration: plain-text ``key = value`` files with
``[section]`` headers, overridable from the command line.

Every key lives in a flat ``section.key`` namespace with a registered
default; unknown keys are rejected by name so typos fail loudly.  The fully
resolved mapping is echoed into each run's manifest.
"""

from plab.errors import ConfigError

EXPERIMENT_KINDS = (
    "train",
    "attack",
    "channel-sweep",
    "transfer",
    "recovery-window",
    "instability",
)

DEFAULTS = {
    "experiment.kind": "",
    "experiment.seed": "42",
    "experiment.out": "runs/out",
    # dataset
    "dataset.source": "synthetic",
    "dataset.test_source": "",
    "dataset.n": "2000",
    "dataset.k": "4",
    "dataset.size": "16",
    "dataset.channels": "3",
    "dataset.noise_level": "0.25",
    # model / training
    "model.arch": "smallconv",
    "model.checkpoint": "",
    "model.epochs": "30",
    "model.batch": "32",
    "model.lr": "0.05",
    "model.momentum": "0.9",
    "model.noise": "gauss,0,0,0",
    "model.apply_in_training": "true",
    "model.advtrain": "",
    # attack experiment
    "attack.desc": "pgd:eps=0.031,steps=40",
    "attack.n_examples": "100",
    # defense used by the attack experiment's evaluation column
    "defense.desc": "trials:1",
    # channel sweep
    "sweep.family": "cd",
    "sweep.strengths": "8,6,4,3,2,1",
    "sweep.n_examples": "100",
    "sweep.distortion_trials": "10",
    "sweep.attack": "pgd:eps=0.031,steps=40",
    # transfer matrix
    "transfer.channels": "fc:0.5,cd:2,svd:0.5,gauss:0.05,uniform:0.05,laplace:0.05",
    "transfer.attack": "pgd:eps=0.031,steps=40",
    "transfer.n_examples": "100",
    "transfer.trials": "1",
    # recovery window
    "recovery.sigmas": "0,0.02,0.05,0.1,0.15,0.2,0.3,0.5",
    "recovery.trials": "100",
    "recovery.attack": "cw:c=0.05,steps=200,bs=4",
    "recovery.example": "0",
    # instability
    "instability.n_examples": "50",
    "instability.attack": "cw:c=0.05,steps=200,bs=4",
}


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Parse config text into a {section.key: value} dict."""
    out = {}
    section = ""
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{ln}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        full = f"{section}.{key}" if section else key
        if full not in DEFAULTS:
            raise ConfigError(f"{origin}:{ln}: unknown config key {full!r}")
        out[full] = value.strip()
    return out


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, origin=str(path))


def apply_overrides(cfg: dict, pairs) -> dict:
    """Apply command-line ``section.key=value`` overrides in order."""
    out = dict(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, _, value = pair.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = value.strip()
    return out


def resolve(file_cfg: dict | None = None, overrides=()) -> dict:
    cfg = dict(DEFAULTS)
    if file_cfg:
        cfg.update(file_cfg)
    return apply_overrides(cfg, overrides)


def get_int(cfg: dict, key: str) -> int:
    try:
        return int(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {cfg[key]!r} is not an integer") from exc


def get_float(cfg: dict, key: str) -> float:
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {cfg[key]!r} is not a number") from exc


def get_bool(cfg: dict, key: str) -> bool:
    val = cfg[key].strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r}: {cfg[key]!r} is not a boolean")


def get_float_list(cfg: dict, key: str) -> list:
    try:
        return [float(v) for v in cfg[key].split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {cfg[key]!r} is not a number list") from exc
