"""Shallow ConvNet that re-scores weighted candidate patches.

Layout (36x36x3 input, NHWC throughout)::

    conv 3x3x32 -> relu -> maxpool 2  : 34x34x32 -> 17x17x32
    conv 3x3x32 -> relu -> maxpool 2  : 15x15x32 -> 7x7x32
    conv 3x3x64 -> relu -> maxpool 2  : 5x5x64   -> 2x2x64
    flatten 256 -> dense 64 -> relu -> dense 1 -> sigmoid

Convolutions are valid (no padding), pooling is 2x2 stride 2 with floor
semantics. Parameter count is 896 + 9,248 + 18,496 + 16,448 + 65 = 45,153.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Image, crop, resize_bilinear
from .errors import EmptyDataset, ShapeMismatch, VersionMismatch
from .weighting import PATCH_SIZE, WeightedPatch, WeightingConfig, weight_patch

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
EXPECTED_PARAMS = 45_153
LOSS_EPS = 1e-7
KERNEL = 3

PARAM_ORDER = (
    "conv1.weight", "conv1.bias",
    "conv2.weight", "conv2.bias",
    "conv3.weight", "conv3.bias",
    "dense1.weight", "dense1.bias",
    "dense2.weight", "dense2.bias",
)


@dataclass(frozen=True)
class Architecture:
    input_size: int = PATCH_SIZE
    in_channels: int = 3
    filters: tuple = (32, 32, 64)
    hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        if len(self.filters) != 3:
            raise ValueError("exactly three conv layers are supported")
        if self.spatial_sizes()[-1] < 1:
            raise ValueError(f"input size {self.input_size} too small for three conv/pool stages")

    def spatial_sizes(self) -> list[int]:
        """[conv1, pool1, conv2, pool2, conv3, pool3] spatial extents."""
        sizes = []
        s = self.input_size
        for _ in range(3):
            s = s - KERNEL + 1
            sizes.append(s)
            s = s // 2
            sizes.append(s)
        return sizes

    def layer_shapes(self) -> list[tuple]:
        """(H, W, C) after each conv and pool, then flatten/dense widths."""
        sizes = self.spatial_sizes()
        out = []
        for i, f in enumerate(self.filters):
            out.append((sizes[2 * i], sizes[2 * i], f))
            out.append((sizes[2 * i + 1], sizes[2 * i + 1], f))
        out.append((self.flat_size,))
        out.append((self.hidden,))
        out.append((1,))
        return out

    @property
    def flat_size(self) -> int:
        s = self.spatial_sizes()[-1]
        return s * s * self.filters[-1]

    def param_shapes(self) -> dict[str, tuple]:
        c_in = self.in_channels
        shapes = {}
        for i, f in enumerate(self.filters, start=1):
            shapes[f"conv{i}.weight"] = (KERNEL, KERNEL, c_in, f)
            shapes[f"conv{i}.bias"] = (f,)
            c_in = f
        shapes["dense1.weight"] = (self.flat_size, self.hidden)
        shapes["dense1.bias"] = (self.hidden,)
        shapes["dense2.weight"] = (self.hidden, 1)
        shapes["dense2.bias"] = (1,)
        return shapes

    def layer_param_counts(self) -> list[int]:
        shapes = self.param_shapes()
        return [
            math.prod(shapes[f"{layer}.weight"]) + math.prod(shapes[f"{layer}.bias"])
            for layer in ("conv1", "conv2", "conv3", "dense1", "dense2")
        ]


DEFAULT_ARCH = Architecture()


@dataclass(eq=False)
class SuppressorModel:
    arch: Architecture = DEFAULT_ARCH
    params: dict = field(default_factory=dict)
    dtype: type = np.float32
    weighting: WeightingConfig = WeightingConfig()   # settings the model was trained under

    def __post_init__(self):
        shapes = self.arch.param_shapes()
        if not self.params:
            self.params = {k: np.zeros(s, dtype=self.dtype) for k, s in shapes.items()}
        if set(self.params) != set(shapes):
            raise ShapeMismatch(f"parameter names {sorted(self.params)} != {sorted(shapes)}")
        for k, s in shapes.items():
            arr = np.asarray(self.params[k], dtype=self.dtype)
            if arr.shape != s:
                raise ShapeMismatch(f"{k}: expected shape {s}, got {arr.shape}")
            self.params[k] = arr
        if self.arch == DEFAULT_ARCH:
            assert self.n_params() == EXPECTED_PARAMS, self.n_params()

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "SuppressorModel":
        return SuppressorModel(self.arch, {k: v.copy() for k, v in self.params.items()},
                               self.dtype, self.weighting)

    @classmethod
    def he_init(cls, arch: Architecture = DEFAULT_ARCH, seed: int = 0,
                dtype=np.float32, weighting: WeightingConfig = WeightingConfig()
                ) -> "SuppressorModel":
        rng = np.random.default_rng(seed)
        params = {}
        for name in PARAM_ORDER:
            shape = arch.param_shapes()[name]
            if name.endswith(".bias"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                fan_in = math.prod(shape[:-1])
                params[name] = (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)
        return cls(arch, params, dtype, weighting)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def _conv_forward(x, w, b):
    n, h, wd, c = x.shape
    ho, wo = h - KERNEL + 1, wd - KERNEL + 1
    # (n, ho, wo, c, kh, kw) -> (n, ho, wo, kh, kw, c)
    win = sliding_window_view(x, (KERNEL, KERNEL), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    cols = win.reshape(n * ho * wo, KERNEL * KERNEL * c)
    out = cols @ w.reshape(-1, w.shape[-1]) + b
    return out.reshape(n, ho, wo, -1), cols


def _conv_backward(dout, cols, x_shape, w, need_dx=True):
    n, h, wd, c = x_shape
    _, ho, wo, f = dout.shape
    d2 = dout.reshape(-1, f)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(-1, f).T).reshape(n, ho, wo, KERNEL, KERNEL, c)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    return dx, dw, db


def _pool_forward(x):
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    blocks = x[:, :2 * ho, :2 * wo, :].reshape(n, ho, 2, wo, 2, c)
    # window elements in row-major order so argmax picks the first maximum
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    n, h, w, c = x_shape
    ho, wo = dout.shape[1], dout.shape[2]
    dblocks = np.zeros((n, ho, wo, c, 4), dtype=dout.dtype)
    np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
    dblocks = dblocks.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :2 * ho, :2 * wo, :] = dblocks.reshape(n, 2 * ho, 2 * wo, c)
    return dx


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                 np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    # keep the output strictly inside (0, 1) even when exp saturates
    return np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def _check_input(model: SuppressorModel, x: np.ndarray):
    a = model.arch
    want = (a.input_size, a.input_size, a.in_channels)
    if x.ndim != 4 or x.shape[1:] != want:
        raise ShapeMismatch(f"model expects input {want}, got {x.shape[1:]}")


def forward_batch(model: SuppressorModel, x: np.ndarray, keep_cache: bool = False):
    """Run a batch (N, H, W, C) through the network; returns (yhat, cache)."""
    x = np.asarray(x, dtype=model.dtype)
    _check_input(model, x)
    p = model.params
    cache = {}
    h = x
    for i in (1, 2, 3):
        conv, cols = _conv_forward(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
        act = np.maximum(conv, 0)
        pooled, idx = _pool_forward(act)
        if keep_cache:
            cache[f"conv{i}"] = (h.shape, cols, conv, act.shape, idx)
        h = pooled
    flat = h.reshape(len(h), -1)
    z1 = flat @ p["dense1.weight"] + p["dense1.bias"]
    a1 = np.maximum(z1, 0)
    z2 = a1 @ p["dense2.weight"] + p["dense2.bias"]
    yhat = _sigmoid(z2[:, 0])
    if keep_cache:
        cache.update(pool3_shape=h.shape, flat=flat, z1=z1, a1=a1)
    return yhat, cache


def _as_batch(patch) -> np.ndarray:
    if isinstance(patch, WeightedPatch):
        return patch.as_input()[None]
    arr = np.asarray(patch)
    return arr[None] if arr.ndim == 3 else arr


def forward(model: SuppressorModel, patch) -> float:
    """Suppressor confidence for one weighted patch (or a raw HxWxC array)."""
    yhat, _ = forward_batch(model, _as_batch(patch))
    return float(yhat[0])


def loss(yhat, y):
    """Binary cross-entropy; arrays give the mean over examples."""
    p = np.clip(np.asarray(yhat, dtype=np.float64), LOSS_EPS, 1 - LOSS_EPS)
    y = np.asarray(y, dtype=np.float64)
    per = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    return float(per.mean())


def backward_batch(model: SuppressorModel, x, y) -> tuple[dict, np.ndarray]:
    """Gradients of the mean batch loss; returns (grads, yhat)."""
    yhat, cache = forward_batch(model, x, keep_cache=True)
    p = model.params
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = len(yhat)
    grads = {}
    dz2 = ((yhat - y) / n).astype(model.dtype)[:, None]
    grads["dense2.weight"] = cache["a1"].T @ dz2
    grads["dense2.bias"] = dz2.sum(axis=0)
    da1 = dz2 @ p["dense2.weight"].T
    dz1 = da1 * (cache["z1"] > 0)
    grads["dense1.weight"] = cache["flat"].T @ dz1
    grads["dense1.bias"] = dz1.sum(axis=0)
    dh = (dz1 @ p["dense1.weight"].T).reshape(cache["pool3_shape"])
    for i in (3, 2, 1):
        in_shape, cols, conv, act_shape, idx = cache[f"conv{i}"]
        dact = _pool_backward(dh, idx, act_shape)
        dconv = dact * (conv > 0)
        dh, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = _conv_backward(
            dconv, cols, in_shape, p[f"conv{i}.weight"], need_dx=i > 1)
    return grads, yhat


def backward(model: SuppressorModel, patch, y) -> dict:
    grads, _ = backward_batch(model, _as_batch(patch), [y])
    return grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    momentum: float = 0.9
    learning_rate: float = 0.001
    weight_decay: float = 0.0005
    epochs: int = 50
    seed: int = 0
    batch_size: int = 1

    def __post_init__(self):
        for name in ("momentum", "learning_rate", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass(frozen=True, eq=False)
class TrainingExample:
    input: WeightedPatch
    y: int

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.y}")


def train(examples, cfg: TrainConfig = TrainConfig(), arch: Architecture = DEFAULT_ARCH,
          init: SuppressorModel | None = None, on_epoch=None,
          weighting: WeightingConfig = WeightingConfig()):
    """SGD with classical momentum; L2 decay on weights only.

    Returns ``(model, history)`` where history holds the mean per-example
    loss of each epoch, measured on the fly before each batch update.
    """
    examples = list(examples)
    if not examples:
        raise EmptyDataset("no training examples")
    labels = np.array([ex.y for ex in examples], dtype=np.float64)
    if labels.min() == labels.max():
        log.warning("training set contains only label %d", int(labels[0]))
    x_all = np.stack([ex.input.as_input() for ex in examples])

    rng = np.random.default_rng(cfg.seed)
    if init is not None:
        model = init.copy()
    else:
        model = SuppressorModel.he_init(arch, int(rng.integers(2**63)), weighting=weighting)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    lr = model.dtype(cfg.learning_rate)
    mu = model.dtype(cfg.momentum)
    wd = model.dtype(cfg.weight_decay)

    history = []
    n = len(examples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads, yhat = backward_batch(model, x_all[idx], labels[idx])
            total += loss(yhat, labels[idx]) * len(idx)
            for k, p in model.params.items():
                g = grads[k]
                if k.endswith(".weight"):
                    g = g + wd * p
                v = velocity[k]
                v *= mu
                v -= lr * g
                p += v
        history.append(total / n)
        log.debug("epoch %d loss %.6f", epoch + 1, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return model, history


# ---------------------------------------------------------------------------
# inference on detections
# ---------------------------------------------------------------------------

def detection_patch(img: Image, box, wcfg: WeightingConfig = WeightingConfig()) -> WeightedPatch:
    """crop -> bilinear resize to 36x36 -> colour weighting."""
    return weight_patch(resize_bilinear(crop(img, box), PATCH_SIZE, PATCH_SIZE), wcfg)


def weighted_patches(detections, images, wcfg: WeightingConfig = WeightingConfig(),
                     threads: int = 1) -> list[WeightedPatch]:
    """Weighted patch per detection, in input order.

    `images` maps image_id to an Image or to a zero-argument loader.
    """
    detections = list(detections)
    cache = {}

    def image_for(image_id):
        if image_id not in cache:
            src = images[image_id]
            cache[image_id] = src() if callable(src) else src
        return cache[image_id]

    # load images up front so workers only do pure work
    for d in detections:
        image_for(d.image_id)

    def one(d):
        return detection_patch(cache[d.image_id], d.box, wcfg)

    if threads > 1 and len(detections) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, detections))
    return [one(d) for d in detections]


def score(model: SuppressorModel, detections, images,
          wcfg: WeightingConfig | None = None, threads: int = 1):
    """Pair each detection with the suppressor's confidence, order preserved.

    Patches are weighted with the model's own weighting settings unless
    `wcfg` overrides them.
    """
    detections = list(detections)
    patches = weighted_patches(detections, images, wcfg or model.weighting, threads)
    return [(d, forward(model, p)) for d, p in zip(detections, patches)]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def model_to_json(model: SuppressorModel) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "architecture": {**asdict(model.arch), "filters": list(model.arch.filters),
                         "param_shapes": {k: list(v) for k, v in model.arch.param_shapes().items()}},
        "weighting": asdict(model.weighting),
        "parameters": {k: model.params[k].tolist() for k in PARAM_ORDER},
    }
    return json.dumps(doc)


def model_from_json(text: str) -> SuppressorModel:
    doc = json.loads(text)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"model file has format_version {version}, this build reads version {FORMAT_VERSION}")
    a = doc["architecture"]
    arch = Architecture(a["input_size"], a["in_channels"], tuple(a["filters"]), a["hidden"])
    expected = arch.param_shapes()
    declared = {k: tuple(v) for k, v in a.get("param_shapes", {}).items()}
    if declared and declared != expected:
        raise ShapeMismatch("architecture manifest disagrees with its own layer sizes")
    params = {}
    for name, shape in expected.items():
        if name not in doc["parameters"]:
            raise ShapeMismatch(f"missing parameter {name}")
        try:
            arr = np.array(doc["parameters"][name], dtype=np.float32)
        except ValueError as e:
            raise ShapeMismatch(f"{name}: ragged array ({e})") from None
        if arr.shape != shape:
            raise ShapeMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
        params[name] = arr
    weighting = WeightingConfig(**doc.get("weighting", {}))
    return SuppressorModel(arch, params, weighting=weighting)


def save_model(model: SuppressorModel, path) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path) -> SuppressorModel:
    return model_from_json(Path(path).read_text())
