"""Layer stacks, SGD training with best-validation snapshots, and the TXC1 model file."""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from ..artifacts import TexfuseError, atomic_write_bytes
from ..dataset import GrayImage
from .layers import (Conv2D, Dense, DivergenceError, Layer, MaxPool2D, ReLU, ShapeError,
                     softmax, softmax_cross_entropy)

# conv -> 4x4 max pool -> relu -> fc(128) -> relu -> fc(K) -> softmax.
# Pooling before the ReLU computes the same function and gradients as ReLU
# then pooling (both are monotone) on 16x fewer elements.
# "fc" without "units" is the K-way output layer.
DEFAULT_STACK = (
    {"kind": "conv", "filters": 64, "size": 5},
    {"kind": "maxpool", "size": 4},
    {"kind": "relu"},
    {"kind": "fc", "units": 128},
    {"kind": "relu"},
    {"kind": "fc"},
    {"kind": "softmax"},
)

# two conv stages; roughly 10x the training cost of DEFAULT_STACK on a CPU
DEEP_STACK = (
    {"kind": "conv", "filters": 64, "size": 5},
    {"kind": "relu"},
    {"kind": "maxpool", "size": 2},
    {"kind": "conv", "filters": 64, "size": 5},
    {"kind": "relu"},
    {"kind": "maxpool", "size": 2},
    {"kind": "fc", "units": 256},
    {"kind": "relu"},
    {"kind": "fc"},
    {"kind": "softmax"},
)

STACKS = {"default": DEFAULT_STACK, "deep": DEEP_STACK}

BRODATZ_EPOCHS = 150
KYLBERG_EPOCHS = 100

MODEL_MAGIC = b"TXC1"
_KIND_CODES = {"conv": 1, "relu": 2, "maxpool": 3, "fc": 4, "softmax": 5}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


class CnnDivergenceError(TexfuseError):
    """Training produced a non-finite loss; ``history`` holds the epochs completed so far."""

    code = "cnn-divergence"

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    epochs: int = BRODATZ_EPOCHS
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = -1.0

    def to_dict(self) -> dict:
        return asdict(self)


class CnnModel:
    def __init__(self, n_classes: int, input_size: int = 64, stack: Sequence[dict] = DEFAULT_STACK,
                 seed: int = 0, init_scale: float = 0.01):
        self.n_classes = int(n_classes)
        self.input_size = int(input_size)
        self.stack = [dict(s) for s in stack]
        self.seed = int(seed)
        self.mean = np.zeros((self.input_size, self.input_size))
        rng = np.random.Generator(np.random.PCG64(self.seed))
        self.layers: list[Layer] = []
        shape: tuple = (self.input_size, self.input_size, 1)
        first_conv = True
        for spec in self.stack:
            kind = spec["kind"]
            if kind == "conv":
                layer = Conv2D(shape[-1], int(spec["filters"]), int(spec["size"]), rng,
                               init_scale, input_grad=not first_conv)
                first_conv = False
            elif kind == "relu":
                layer = ReLU()
            elif kind == "maxpool":
                layer = MaxPool2D(int(spec.get("size", 2)))
            elif kind == "fc":
                units = spec.get("units") or self.n_classes
                layer = Dense(int(np.prod(shape)), int(units), rng, init_scale)
            elif kind == "softmax":
                continue
            else:
                raise ValueError(f"unknown layer kind {kind!r}")
            shape = layer.output_shape(shape)
            self.layers.append(layer)
        if shape != (self.n_classes,):
            raise ShapeError(f"stack ends with shape {shape}, expected ({self.n_classes},)")

    # -- data -------------------------------------------------------------

    def fit_mean(self, images: Sequence[GrayImage]) -> np.ndarray:
        self.mean = np.mean([im.pixels / 255.0 for im in images], axis=0)
        return self.mean

    def preprocess(self, images) -> np.ndarray:
        """``pixel/255 - training mean`` as a ``(n, h, w, 1)`` batch."""
        if isinstance(images, GrayImage):
            images = [images]
        arr = np.stack([im.pixels if isinstance(im, GrayImage) else np.asarray(im)
                        for im in images]).astype(np.float64) / 255.0
        if arr.shape[1:] != self.mean.shape:
            raise ShapeError(f"image shape {arr.shape[1:]} does not match model input {self.mean.shape}")
        return (arr - self.mean)[..., None]

    # -- inference --------------------------------------------------------

    def logits(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dlogits: np.ndarray) -> None:
        g = dlogits
        for layer in reversed(self.layers):
            g = layer.backward(g)
            if g is None:
                break

    def predict_proba(self, images, batch_size: int = 64) -> np.ndarray:
        x = self.preprocess(images)
        out = [softmax(self.logits(x[s : s + batch_size])) for s in range(0, len(x), batch_size)]
        return np.concatenate(out)

    def predict(self, images) -> np.ndarray:
        return self.predict_proba(images).argmax(axis=1)

    # -- parameters -------------------------------------------------------

    def parameters(self) -> list[tuple[Layer, str]]:
        return [(l, k) for l in self.layers if l.learnable for k in ("W", "b")]

    def state(self) -> list[np.ndarray]:
        return [l.params[k].copy() for l, k in self.parameters()]

    def load_state(self, arrays: Sequence[np.ndarray]) -> None:
        for (l, k), a in zip(self.parameters(), arrays, strict=True):
            if l.params[k].shape != a.shape:
                raise ShapeError(f"parameter shape {a.shape} != {l.params[k].shape}")
            l.params[k] = np.array(a, dtype=np.float64)


def predict(model: CnnModel, img: GrayImage) -> tuple[int, np.ndarray]:
    probs = model.predict_proba([img])[0]
    return int(probs.argmax()), probs


def accuracy(model: CnnModel, images, labels) -> float:
    if len(images) == 0:
        return 0.0
    return float((model.predict(images) == np.asarray(labels)).mean())


def train(
    model: CnnModel,
    train_images: Sequence[GrayImage],
    train_labels: Sequence[int],
    val_images: Sequence[GrayImage],
    val_labels: Sequence[int],
    cfg: TrainConfig = TrainConfig(),
    log=None,
) -> tuple[CnnModel, History]:
    """Minibatch SGD with momentum; the returned model holds the best-validation weights.

    The mean image is fitted on ``train_images`` here. Validation ties keep the
    earliest epoch. Raises CnnDivergenceError on a non-finite loss.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    model.fit_mean(train_images)
    x = model.preprocess(train_images)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    velocity = [np.zeros_like(l.params[k]) for l, k in model.parameters()]
    hist = History()
    best_state = model.state()
    n = len(x)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            try:
                logits = model.logits(x[idx], train=True)
            except DivergenceError as exc:
                raise CnnDivergenceError(f"epoch {epoch}: {exc}", hist) from None
            loss, dlogits = softmax_cross_entropy(logits, train_labels[idx])
            if not np.isfinite(loss):
                raise CnnDivergenceError(f"non-finite loss at epoch {epoch}", hist)
            total += loss * len(idx)
            model.backward(dlogits)
            for v, (layer, key) in zip(velocity, model.parameters()):
                v *= cfg.momentum
                v -= cfg.learning_rate * layer.grads[key]
                layer.params[key] += v
        hist.train_loss.append(total / n)
        val_acc = accuracy(model, val_images, val_labels) if len(val_images) else 0.0
        hist.val_accuracy.append(val_acc)
        if val_acc > hist.best_val_accuracy:
            hist.best_val_accuracy = val_acc
            hist.best_epoch = epoch
            best_state = model.state()
        if log is not None:
            log(epoch, hist.train_loss[-1], val_acc)

    model.load_state(best_state)
    return model, hist


# ---------------------------------------------------------------------------
# TXC1 binary model file
#
#   "TXC1" | u32 classes | u32 input size | u64 seed | u32 layer count
#   per layer: u8 kind | u32 a | u32 b      (conv: filters, size; maxpool: size, 0;
#                                            fc: units, 0; others 0, 0)
#   per learnable layer, W then b: u32 ndim | u32 dims... | f64 values
#   mean image: size*size f64
# all little-endian


def _pack_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    return struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape) + a.tobytes()


def encode_model(model: CnnModel) -> bytes:
    out = [MODEL_MAGIC, struct.pack("<IIQI", model.n_classes, model.input_size, model.seed,
                                    len(model.stack))]
    for spec in model.stack:
        kind = spec["kind"]
        a = b = 0
        if kind == "conv":
            a, b = int(spec["filters"]), int(spec["size"])
        elif kind == "maxpool":
            a = int(spec.get("size", 2))
        elif kind == "fc":
            a = int(spec.get("units") or 0)
        out.append(struct.pack("<BII", _KIND_CODES[kind], a, b))
    for layer, key in model.parameters():
        out.append(_pack_array(layer.params[key]))
    out.append(np.ascontiguousarray(model.mean, dtype="<f8").tobytes())
    return b"".join(out)


def decode_model(data: bytes) -> CnnModel:
    if data[:4] != MODEL_MAGIC:
        raise TexfuseError("not a TXC1 model file", code="bad-model-file")
    pos = 4
    n_classes, size, seed, n_layers = struct.unpack_from("<IIQI", data, pos)
    pos += struct.calcsize("<IIQI")
    stack = []
    for _ in range(n_layers):
        code, a, b = struct.unpack_from("<BII", data, pos)
        pos += struct.calcsize("<BII")
        kind = _CODE_KINDS[code]
        spec = {"kind": kind}
        if kind == "conv":
            spec.update(filters=a, size=b)
        elif kind == "maxpool":
            spec["size"] = a
        elif kind == "fc" and a:
            spec["units"] = a
        stack.append(spec)
    model = CnnModel(n_classes, size, stack, seed)
    arrays = []
    for _ in model.parameters():
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(data, "<f8", count, pos).reshape(shape).astype(np.float64))
        pos += 8 * count
    model.load_state(arrays)
    model.mean = np.frombuffer(data, "<f8", size * size, pos).reshape(size, size).astype(np.float64)
    return model


def save_model(path, model: CnnModel):
    return atomic_write_bytes(path, encode_model(model))


def load_model(path) -> CnnModel:
    with open(path, "rb") as fh:
        return decode_model(fh.read())


def clone(model: CnnModel) -> CnnModel:
    return copy.deepcopy(model)
