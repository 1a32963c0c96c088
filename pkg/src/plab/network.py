"""A small convolutional classifier with manual reverse-mode gradients.

Architectures are fixed by ``arch_id`` so that results are comparable across
runs and machines:

* ``linear``    -- flatten, dense(k)
* ``mlp``       -- flatten, dense(64), relu, dense(k)
* ``smallconv`` -- conv(8,3x3,pad 1), relu, maxpool2,
                   conv(16,3x3,pad 1), relu, maxpool2, flatten, dense(k)

Every conv/dense layer carries a noise site at its input
(``pre_activation``).  A :class:`NoiseConfig` turns sites on: the first
site uses ``sigma_init``, all later sites ``sigma_inner``; alternatively
``sigma_param`` perturbs the weights themselves per call (the two styles
are mutually exclusive).  Sigmas are absolute standard deviations; the
uniform and laplace kinds are variance-matched to gauss at equal sigma.

Forward/backward accumulate in float64; parameters are stored float32.
"""

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from plab import kernels
from plab.errors import (
    ArgumentError,
    ConfigError,
    DimensionError,
    FormatError,
    ParameterError,
)
from plab.rng import Rng
from plab.tensor import noise_like

ARCH_IDS = ("smallconv", "mlp", "linear")
CHECKPOINT_MAGIC = b"PLAB"
CHECKPOINT_VERSION = 1
_META_NAME = "__meta__"


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | relu | maxpool2 | dense | flatten
    out_channels: int = 0
    ksize: int = 0
    pad: int = 0
    noise_site: str = "none"  # none | pre_activation


@dataclass
class NoiseConfig:
    dist: str = "gauss"
    sigma_init: float = 0.0
    sigma_inner: float = 0.0
    sigma_param: float = 0.0
    apply_in_training: bool = False

    def __post_init__(self):
        if self.dist not in ("gauss", "uniform", "laplace"):
            raise ParameterError(f"unknown noise distribution {self.dist!r}")
        if min(self.sigma_init, self.sigma_inner, self.sigma_param) < 0:
            raise ParameterError("noise scales must be >= 0")
        if self.sigma_param > 0 and (self.sigma_init > 0 or self.sigma_inner > 0):
            raise ParameterError(
                "parameter noise and feature noise are distinct configurations; "
                "set either sigma_param or sigma_init/sigma_inner, not both"
            )

    @property
    def active(self) -> bool:
        return self.sigma_init > 0 or self.sigma_inner > 0 or self.sigma_param > 0


NO_NOISE = NoiseConfig()


class Model:
    """Layer list plus named parameter tensors.  Immutable during
    evaluation; training updates ``params`` in place."""

    def __init__(self, arch_id, input_shape, num_classes, layers, params, meta=None):
        self.arch_id = arch_id
        self.input_shape = tuple(input_shape)
        self.num_classes = int(num_classes)
        self.layers = layers
        self.params = params
        self.param_names = list(params.keys())
        self.meta = dict(meta or {})

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    @property
    def stochastic_eval(self) -> bool:
        return False  # noise lives in NoiseConfig, not the model


def _arch_layers(arch_id: str):
    site = "pre_activation"
    if arch_id == "linear":
        return [LayerSpec("flatten"), LayerSpec("dense", noise_site=site)]
    if arch_id == "mlp":
        return [
            LayerSpec("flatten"),
            LayerSpec("dense", out_channels=64, noise_site=site),
            LayerSpec("relu"),
            LayerSpec("dense", noise_site=site),
        ]
    if arch_id == "smallconv":
        return [
            LayerSpec("conv", out_channels=8, ksize=3, pad=1, noise_site=site),
            LayerSpec("relu"),
            LayerSpec("maxpool2"),
            LayerSpec("conv", out_channels=16, ksize=3, pad=1, noise_site=site),
            LayerSpec("relu"),
            LayerSpec("maxpool2"),
            LayerSpec("flatten"),
            LayerSpec("dense", noise_site=site),
        ]
    raise ConfigError(f"unknown arch_id {arch_id!r}; expected one of {ARCH_IDS}")


def _shapes_through(layers, input_shape, num_classes):
    """Yield (layer, in_shape, out_shape, param_shapes) through the net."""
    shape = tuple(input_shape)
    out = []
    conv_i = 0
    dense_i = 0
    for li, layer in enumerate(layers):
        if layer.kind == "conv":
            c, h, w = shape
            conv_i += 1
            name = f"conv{conv_i}"
            f = layer.out_channels
            ho = h + 2 * layer.pad - layer.ksize + 1
            wo = w + 2 * layer.pad - layer.ksize + 1
            pshapes = {f"{name}.w": (f, c, layer.ksize, layer.ksize), f"{name}.b": (f,)}
            new_shape = (f, ho, wo)
        elif layer.kind == "dense":
            n_in = int(np.prod(shape))
            dense_i += 1
            name = f"dense{dense_i}"
            n_out = layer.out_channels if layer.out_channels else num_classes
            is_last = li == len(layers) - 1
            if is_last:
                n_out = num_classes
            pshapes = {f"{name}.w": (n_out, n_in), f"{name}.b": (n_out,)}
            new_shape = (n_out,)
        elif layer.kind == "relu":
            pshapes = {}
            new_shape = shape
        elif layer.kind == "maxpool2":
            c, h, w = shape
            if h % 2 or w % 2:
                raise DimensionError(f"maxpool2 needs even spatial dims, got {h}x{w}")
            pshapes = {}
            new_shape = (c, h // 2, w // 2)
        elif layer.kind == "flatten":
            pshapes = {}
            new_shape = (int(np.prod(shape)),)
        else:
            raise ConfigError(f"unknown layer kind {layer.kind!r}")
        out.append((layer, shape, new_shape, pshapes))
        shape = new_shape
    return out


def build_model(arch_id, input_shape=(3, 16, 16), num_classes=4, seed=0) -> Model:
    """Construct a model with He-uniform weights drawn from ``seed``
    (biases start at zero); deterministic given the seed."""
    layers = _arch_layers(arch_id)
    plan = _shapes_through(layers, input_shape, num_classes)
    rng = Rng(seed)
    params = {}
    t = 0
    for _, _, _, pshapes in plan:
        for name, shape in pshapes.items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=np.float32)
            else:
                fan_in = int(np.prod(shape[1:]))
                bound = np.sqrt(6.0 / fan_in)
                params[name] = rng.derive(t).uniform(bound, shape).astype(np.float32)
            t += 1
    return Model(arch_id, input_shape, num_classes, layers, params)


def _noise_scales(model, noise):
    """Per-layer feature-noise sigma, honoring the init/inner split."""
    scales = []
    first = True
    for layer in model.layers:
        if layer.kind in ("conv", "dense") and layer.noise_site == "pre_activation":
            scales.append(noise.sigma_init if first else noise.sigma_inner)
            first = False
        else:
            scales.append(0.0)
    return scales


def _effective_params(model, noise, rng, apply_noise):
    base = {n: p.astype(np.float64) for n, p in model.params.items()}
    if noise is None or not apply_noise or noise.sigma_param == 0:
        return base
    if rng is None:
        raise ArgumentError("parameter noise requires an rng")
    return {
        n: base[n] + noise_like(rng, noise.dist, noise.sigma_param, base[n].shape)
        for n in model.param_names
    }


def _run_batch(model, xb, noise, rng, mode, keep_tape):
    """Forward a (B, ...) float64 batch.  Returns (logits, tape, params64).

    The tape stores what each layer's backward pass needs; noise draws are
    fresh per call, consumed in a fixed order (parameters first, then sites
    in layer order).
    """
    if xb.shape[1:] != tuple(model.input_shape):
        raise DimensionError(
            f"input shape {xb.shape[1:]} does not match architecture {model.input_shape}"
        )
    apply_noise = (
        noise is not None
        and noise.active
        and (mode == "eval" or noise.apply_in_training)
    )
    if apply_noise and rng is None:
        raise ArgumentError("noise injection requires an rng")
    params = _effective_params(model, noise, rng, apply_noise)
    scales = _noise_scales(model, noise) if apply_noise else [0.0] * len(model.layers)

    a = xb
    tape = []
    conv_i = 0
    dense_i = 0
    for layer, scale in zip(model.layers, scales):
        if scale > 0.0:
            a = a + noise_like(rng, noise.dist, scale, a.shape)
        if layer.kind == "conv":
            conv_i += 1
            w = params[f"conv{conv_i}.w"]
            b = params[f"conv{conv_i}.b"]
            y = kernels.conv2d_fwd(a, w, 1, layer.pad) + b[None, :, None, None]
            tape.append(("conv", a, w, layer.pad, conv_i))
            a = y
        elif layer.kind == "dense":
            dense_i += 1
            w = params[f"dense{dense_i}.w"]
            b = params[f"dense{dense_i}.b"]
            tape.append(("dense", a, w, dense_i))
            a = a @ w.T + b
        elif layer.kind == "relu":
            mask = a > 0
            tape.append(("relu", mask))
            a = a * mask
        elif layer.kind == "maxpool2":
            h, w_ = a.shape[2], a.shape[3]
            a, idx = kernels.maxpool2_fwd(a)
            tape.append(("maxpool2", idx, h, w_))
        elif layer.kind == "flatten":
            tape.append(("flatten", a.shape))
            a = a.reshape(a.shape[0], -1)
    return a, (tape if keep_tape else None), params


def _backward(model, tape, glogits):
    """Reverse the tape; returns (grad_x, grad_params) in float64."""
    g = glogits
    gparams = {}
    for entry in reversed(tape):
        kind = entry[0]
        if kind == "conv":
            _, a, w, pad, conv_i = entry
            gx, gk = kernels.conv2d_bwd(a, w, g, 1, pad)
            gparams[f"conv{conv_i}.w"] = gk
            gparams[f"conv{conv_i}.b"] = g.sum(axis=(0, 2, 3))
            g = gx
        elif kind == "dense":
            _, a, w, dense_i = entry
            gparams[f"dense{dense_i}.w"] = g.T @ a
            gparams[f"dense{dense_i}.b"] = g.sum(axis=0)
            g = g @ w
        elif kind == "relu":
            g = g * entry[1]
        elif kind == "maxpool2":
            _, idx, h, w_ = entry
            g = kernels.maxpool2_bwd(g, idx, h, w_)
        elif kind == "flatten":
            g = g.reshape(entry[1])
    return g, gparams


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model, x, noise=None, rng=None, mode="eval") -> np.ndarray:
    """Logits (float32, shape [k]) for a single input."""
    xb = np.asarray(x, dtype=np.float64)[None]
    logits, _, _ = _run_batch(model, xb, noise, rng, mode, keep_tape=False)
    return logits[0].astype(np.float32)


def forward_batch(model, xb, noise=None, rng=None, mode="eval") -> np.ndarray:
    logits, _, _ = _run_batch(
        model, np.asarray(xb, dtype=np.float64), noise, rng, mode, keep_tape=False
    )
    return logits.astype(np.float32)


def predict(model, x, noise=None, rng=None) -> int:
    return int(np.argmax(forward(model, x, noise, rng)))


def grads_from_logit_seed(model, x, seed_vec, noise=None, rng=None, mode="eval"):
    """Logits plus gradients of ``seed_vec . logits`` w.r.t. input and
    parameters; the backbone for both the loss gradient and attack
    objectives that differentiate raw logits."""
    xb = np.asarray(x, dtype=np.float64)[None]
    logits, tape, _ = _run_batch(model, xb, noise, rng, mode, keep_tape=True)
    gx, gparams = _backward(model, tape, np.asarray(seed_vec, dtype=np.float64)[None])
    return logits[0], gx[0], gparams


def loss_and_grads(model, x, label, noise=None, rng=None, mode="eval"):
    """Softmax cross-entropy loss and its exact gradients for one example.

    Returns (loss, grad_x float32 like x, grad_params dict of float32).
    """
    label = int(label)
    if not 0 <= label < model.num_classes:
        raise ArgumentError(f"label {label} outside [0, {model.num_classes})")
    xb = np.asarray(x, dtype=np.float64)[None]
    logits, tape, _ = _run_batch(model, xb, noise, rng, mode, keep_tape=True)
    p = _softmax(logits)
    loss = -np.log(max(p[0, label], 1e-300))
    seed = p.copy()
    seed[0, label] -= 1.0
    gx, gparams = _backward(model, tape, seed)
    return (
        float(loss),
        gx[0].astype(np.float32),
        {n: g.astype(np.float32) for n, g in gparams.items()},
    )


def _loss_and_grads_batch(model, xb, yb, noise, rng, mode):
    logits, tape, _ = _run_batch(model, xb, noise, rng, mode, keep_tape=True)
    b = xb.shape[0]
    p = _softmax(logits)
    losses = -np.log(np.maximum(p[np.arange(b), yb], 1e-300))
    seed = p.copy()
    seed[np.arange(b), yb] -= 1.0
    seed /= b
    _, gparams = _backward(model, tape, seed)
    acc = float(np.mean(np.argmax(logits, axis=1) == yb))
    return float(losses.mean()), acc, gparams


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0


def _dataset_arrays(dataset):
    if isinstance(dataset, tuple):
        images, labels = dataset
    else:
        images, labels = dataset.images, dataset.labels
    images = np.asarray(images)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ArgumentError("dataset is empty")
    return images, labels


def train(model, dataset, cfg: TrainConfig):
    """SGD with momentum.  Returns (model, history) where history holds one
    dict per epoch with running-mean loss and accuracy."""
    if cfg.lr < 0:
        raise ParameterError("lr must be >= 0")
    images, labels = _dataset_arrays(dataset)
    rng = Rng(cfg.seed, 1)
    noise_rng = Rng(cfg.seed, 2)
    velocity = {n: np.zeros(model.params[n].shape) for n in model.param_names}
    n = len(images)
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        ep_loss = 0.0
        ep_acc = 0.0
        nb = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb = images[idx].astype(np.float64)
            yb = labels[idx]
            loss, acc, gparams = _loss_and_grads_batch(
                model, xb, yb, cfg.noise, noise_rng, "train"
            )
            for name in model.param_names:
                v = velocity[name]
                v *= cfg.momentum
                v -= cfg.lr * gparams[name]
                model.params[name] = (
                    model.params[name].astype(np.float64) + v
                ).astype(np.float32)
            ep_loss += loss
            ep_acc += acc
            nb += 1
        history.append({"epoch": epoch, "loss": ep_loss / nb, "acc": ep_acc / nb})
    model.meta["epochs"] = model.meta.get("epochs", 0) + cfg.epochs
    model.meta["seed"] = cfg.seed
    return model, history


def evaluate_accuracy(model, images, labels, noise=None, rng=None) -> float:
    """Plain accuracy in percent; single stochastic pass when noisy."""
    correct = 0
    for i in range(len(images)):
        r = rng.derive(i) if rng is not None else None
        logits = forward(model, images[i], noise, r)
        correct += int(np.argmax(logits) == labels[i])
    return 100.0 * correct / len(images)


def _write_tensor(fh, name, arr):
    nb = name.encode("utf-8")
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.tobytes())


def save_checkpoint(model, path):
    """Binary checkpoint: magic, version, arch id, then named float32
    tensors (parameters plus one metadata vector)."""
    meta = np.zeros(8, dtype=np.float32)
    meta[0] = float(model.meta.get("epochs", 0))
    seed = int(model.meta.get("seed", 0))
    for i in range(4):  # 16-bit chunks keep the 64-bit seed float32-exact
        meta[1 + i] = float((seed >> (16 * i)) & 0xFFFF)
    meta[5:8] = model.input_shape
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        arch = model.arch_id.encode("utf-8")
        fh.write(struct.pack("<H", len(arch)))
        fh.write(arch)
        fh.write(struct.pack("<I", len(model.param_names) + 1))
        for name in model.param_names:
            _write_tensor(fh, name, model.params[name])
        _write_tensor(fh, _META_NAME, meta)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))[0]


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read(), str(path))
    if rd.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic, not a checkpoint")
    version = rd.u("<I")
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )
    arch_id = rd.take(rd.u("<H")).decode("utf-8")
    count = rd.u("<I")
    tensors = {}
    order = []
    for _ in range(count):
        name = rd.take(rd.u("<H")).decode("utf-8")
        rank = rd.u("<B")
        shape = tuple(rd.u("<I") for _ in range(rank))
        size = int(np.prod(shape)) if shape else 1
        buf = rd.take(4 * size)
        tensors[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
        order.append(name)
    if rd.pos != len(rd.data):
        raise FormatError(f"{path}: trailing bytes after last tensor")
    if _META_NAME not in tensors:
        raise FormatError(f"{path}: missing metadata tensor")
    meta_arr = tensors.pop(_META_NAME)
    order.remove(_META_NAME)
    seed = 0
    for i in range(4):
        seed |= (int(meta_arr[1 + i]) & 0xFFFF) << (16 * i)
    meta = {"epochs": int(meta_arr[0]), "seed": seed}
    input_shape = tuple(int(v) for v in meta_arr[5:8])

    try:
        layers = _arch_layers(arch_id)
    except ConfigError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    tail = [n for n in order if n.startswith("dense")]
    if not tail:
        raise FormatError(f"{path}: no dense layer parameters present")
    num_classes = tensors[tail[-2] if tail[-1].endswith(".b") else tail[-1]].shape[0]
    plan = _shapes_through(layers, input_shape, num_classes)
    expected = {}
    for _, _, _, pshapes in plan:
        expected.update(pshapes)
    if set(expected) != set(order):
        raise FormatError(f"{path}: parameter names do not match arch {arch_id!r}")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise FormatError(
                f"{path}: tensor {name} has shape {tensors[name].shape}, expected {shape}"
            )
    params = {n: tensors[n] for n in order}
    return Model(arch_id, input_shape, num_classes, layers, params, meta)
