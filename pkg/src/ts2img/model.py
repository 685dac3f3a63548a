"""Shallow plot-classifying CNN: single-input and multi-head variants.

Each head is five ``conv3x3 -> ReLU -> maxpool2x2`` blocks with filter
counts doubling from 16. Head outputs are concatenated along channels and
fed to a classifier of ``dense 256 -> ReLU -> dropout -> dense 128 -> ReLU
-> dropout -> dense n_classes``.
"""
from __future__ import annotations

import copy
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor_core import (
    AdamState, BackwardBeforeForward, LayerSpec, Sequential, ShapeError, adam_step,
    build_layer, check_finite, make_rng, softmax_cross_entropy,
)

log = logging.getLogger(__name__)

# PRNG stream ids under the run seed
_INIT, _SHUFFLE, _DROPOUT = 0, 1, 2


@dataclass
class ModelConfig:
    conv_blocks: int = 5
    base_filters: int = 16
    kernel: int = 3
    fc_units: tuple = (256, 128)
    dropout_rate: float = 0.5
    n_classes: int = 2
    n_heads: int = 1
    share_head_weights: bool = False
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 100
    patience: int = 10
    min_delta: float = 1e-4
    target_loss: Optional[float] = None
    seed: int = 1
    dtype: str = "float32"
    # explicit per-block filter counts; None means base_filters doubling per block
    filter_schedule: Optional[tuple] = None

    def __post_init__(self):
        self.fc_units = tuple(self.fc_units)
        if self.filter_schedule is not None:
            self.filter_schedule = tuple(self.filter_schedule)
            if len(self.filter_schedule) != self.conv_blocks:
                raise ValueError("filter_schedule length must equal conv_blocks")
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        if self.n_heads < 1:
            raise ValueError("n_heads must be at least 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")

    @property
    def filters(self):
        if self.filter_schedule is not None:
            return list(self.filter_schedule)
        return [self.base_filters * 2 ** i for i in range(self.conv_blocks)]

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def head_specs(config: ModelConfig):
    specs = []
    for f in config.filters:
        specs += [LayerSpec("conv2d", filters=f, kernel=config.kernel),
                  LayerSpec("relu"), LayerSpec("maxpool")]
    return specs


def classifier_specs(config: ModelConfig):
    specs = [LayerSpec("flatten")]
    for units in config.fc_units:
        specs += [LayerSpec("dense", units=units), LayerSpec("relu"),
                  LayerSpec("dropout", rate=config.dropout_rate)]
    specs.append(LayerSpec("dense", units=config.n_classes))
    return specs


def layer_specs(config: ModelConfig):
    """The single-input network as one flat layer list."""
    return head_specs(config) + classifier_specs(config)


def _build_chain(specs, in_shape, dtype, rng, prefix):
    layers = []
    counts = {}
    for spec in specs:
        counts[spec.kind] = counts.get(spec.kind, 0) + 1
        layer = build_layer(spec, in_shape, dtype, rng, f"{prefix}{spec.kind}{counts[spec.kind]}")
        in_shape = layer.output_shape(in_shape)
        layers.append(layer)
    return Sequential(layers), in_shape


class CNN:
    """Heads of conv blocks plus a shared classifier."""

    def __init__(self, config: ModelConfig, input_shape):
        self.config = config
        self.input_shape = tuple(input_shape)
        h, w = self.input_shape[:2]
        need = 2 ** config.conv_blocks
        if h < need or w < need:
            raise ShapeError(f"input {h}x{w} too small for {config.conv_blocks} poolings (need >= {need})")
        rng = make_rng(config.seed, _INIT)
        dtype = config.np_dtype
        self.heads = []
        head_out = None
        for i in range(config.n_heads):
            if i > 0 and config.share_head_weights:
                self.heads.append(Sequential([copy.copy(layer) for layer in self.heads[0].layers]))
                continue
            head, head_out = _build_chain(head_specs(config), self.input_shape, dtype, rng, f"head{i}.")
            self.heads.append(head)
        merged = head_out[:2] + (head_out[2] * config.n_heads,)
        self.classifier, out_shape = _build_chain(classifier_specs(config), merged, dtype, rng, "")
        self.output_shape = out_shape
        self._seen = False

    @property
    def params(self):
        out = {}
        for head in self.heads:
            out.update(head.params)
        out.update(self.classifier.params)
        return out

    def layers(self):
        if len(self.heads) == 1:
            return self.heads[0].layers + self.classifier.layers
        return [layer for head in self.heads for layer in head.layers] + self.classifier.layers

    def _as_heads(self, inputs):
        if isinstance(inputs, np.ndarray):
            inputs = [inputs]
        if len(inputs) != len(self.heads):
            raise ShapeError(f"model has {len(self.heads)} head(s), got {len(inputs)} input(s)")
        for x in inputs:
            if x.shape[1:] != self.input_shape:
                raise ShapeError(f"input shape {x.shape[1:]} != model input {self.input_shape}")
        return inputs

    def forward(self, inputs, training=False, rng=None):
        inputs = self._as_heads(inputs)
        feats = [head.forward(x.astype(self.config.np_dtype, copy=False), training, rng)
                 for head, x in zip(self.heads, inputs)]
        merged = feats[0] if len(feats) == 1 else np.concatenate(feats, axis=-1)
        self._split = [f.shape[-1] for f in feats]
        self._seen = True
        return self.classifier.forward(merged, training, rng)

    def backward(self, dlogits):
        if not self._seen:
            raise BackwardBeforeForward("backward called without a forward pass")
        self._seen = False
        dmerged = self.classifier.backward(dlogits)
        parts = np.split(dmerged, np.cumsum(self._split)[:-1], axis=-1)
        for head, d in zip(self.heads, parts):
            head.backward(d, need_input_grad=False)
        grads = {}
        for seq in self.heads + [self.classifier]:
            for key, g in seq.grads().items():
                grads[key] = grads[key] + g if key in grads else g
        for key, t in self.params.items():
            t.grad = grads[key]
        return grads

    def head_activations(self, x, block_index, head=0):
        """Post-ReLU output of conv block ``block_index`` (1-based) for one head."""
        if not 1 <= block_index <= self.config.conv_blocks:
            raise ValueError(f"block_index must be in [1, {self.config.conv_blocks}]")
        return self.heads[head].forward(x.astype(self.config.np_dtype, copy=False), upto=3 * (block_index - 1) + 2)


@dataclass
class TrainedModel:
    config: ModelConfig
    network: CNN
    adam: AdamState
    history: list = field(default_factory=list)
    # free-form provenance stored in checkpoints (preprocessing flags, dataset)
    metadata: dict = field(default_factory=dict)

    @property
    def input_shape(self):
        return self.network.input_shape

    @property
    def params(self):
        return self.network.params


def build_model(config: ModelConfig, input_shape) -> TrainedModel:
    network = CNN(config, input_shape)
    return TrainedModel(config, network, AdamState(learning_rate=config.learning_rate))


def _heads_of(images):
    return [images] if isinstance(images, np.ndarray) else list(images)


def train(model: TrainedModel, images, labels, ids=None, config: Optional[ModelConfig] = None,
          callback=None) -> TrainedModel:
    """Mini-batch Adam on softmax cross-entropy.

    ``images`` is an ``[N, H, W, C]`` array, or a list of such arrays (one
    per head). Samples are put in canonical order by ``ids`` before the
    seeded shuffle, so the result does not depend on input order. Training
    stops after ``config.epochs`` epochs, once the epoch loss reaches
    ``target_loss``, or after ``patience`` epochs without improvement.
    ``callback(model, record)`` runs after every epoch; a truthy return
    value stops training.
    """
    config = config or model.config
    heads = _heads_of(images)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("empty training set")
    if labels.min() < 0 or labels.max() >= config.n_classes:
        raise ValueError(f"labels must lie in [0, {config.n_classes})")
    if any(len(x) != n for x in heads):
        raise ShapeError("every head needs one image per label")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    canonical = np.argsort(ids, kind="stable")
    net = model.network
    params = {k: t.data for k, t in net.params.items()}
    best, wait = np.inf, 0
    start = len(model.history)
    for epoch in range(start, start + config.epochs):
        t0 = time.perf_counter()
        perm = make_rng(config.seed, _SHUFFLE, epoch).permutation(n)
        total_loss, correct = 0.0, 0
        for b, s in enumerate(range(0, n, config.batch_size)):
            idx = canonical[perm[s:s + config.batch_size]]
            rng = make_rng(config.seed, _DROPOUT, epoch, b)
            logits = net.forward([x[idx] for x in heads], training=True, rng=rng)
            loss, dlogits = softmax_cross_entropy(logits, labels[idx])
            grads = net.backward(dlogits)
            adam_step(params, grads, model.adam)
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
        epoch_loss = total_loss / n
        check_finite(np.array(epoch_loss), "training loss")
        record = {"epoch": epoch + 1, "loss": epoch_loss, "accuracy": correct / n,
                  "seconds": time.perf_counter() - t0}
        model.history.append(record)
        log.info("epoch %d loss %.4f acc %.3f (%.1fs)", epoch + 1, epoch_loss, correct / n, record["seconds"])
        if callback is not None and callback(model, record):
            break
        if config.target_loss is not None and epoch_loss <= config.target_loss:
            break
        if epoch_loss < best - config.min_delta:
            best, wait = epoch_loss, 0
        else:
            wait += 1
            if config.patience and wait >= config.patience:
                break
    return model


def predict_logits(model: TrainedModel, images, batch_size=32):
    heads = _heads_of(images)
    n = len(heads[0])
    out = []
    for s in range(0, n, batch_size):
        out.append(model.network.forward([x[s:s + batch_size] for x in heads], training=False))
    return np.concatenate(out) if out else np.zeros((0, model.config.n_classes))


def predict(model: TrainedModel, images, batch_size=32):
    return predict_logits(model, images, batch_size).argmax(axis=1)


def accuracy(predicted, labels):
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ShapeError("predictions and labels differ in shape")
    if labels.size == 0:
        raise ValueError("cannot score an empty set")
    return float((predicted == labels).mean())


def evaluate_accuracy(model: TrainedModel, images, labels, batch_size=32):
    return accuracy(predict(model, images, batch_size), labels)


def extract_feature_maps(model: TrainedModel, image, block_index, head=0):
    """Channel slices of a block's post-ReLU activation, each min-max mapped to [0, 1].

    ``image`` is a single ``[H, W, C]`` input; constant maps come back as zeros.
    """
    if not 1 <= block_index <= model.config.conv_blocks:
        raise ValueError(f"block_index must be in [1, {model.config.conv_blocks}]")
    act = model.network.head_activations(np.asarray(image)[None], block_index, head)[0]
    maps = []
    for c in range(act.shape[-1]):
        m = act[:, :, c].astype(np.float64)
        lo, hi = m.min(), m.max()
        maps.append((m - lo) / (hi - lo) if hi > lo else np.zeros_like(m))
    return maps


def raw_feature_maps(model: TrainedModel, image, block_index, head=0):
    """Unscaled post-ReLU activations of a block, shape ``[H', W', C]``."""
    return model.network.head_activations(np.asarray(image)[None], block_index, head)[0]


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"TS2IMGCK"
_VERSION = 1


def save_checkpoint(model: TrainedModel, path):
    """Write config and parameters: magic, version, JSON header, float32 LE blobs."""
    params = model.params
    header = {
        "config": asdict(model.config),
        "input_shape": list(model.input_shape),
        "params": [[k, list(t.shape)] for k, t in params.items()],
        "adam_step": model.adam.step_count,
        "history": model.history,
        "metadata": model.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<II", _VERSION, len(blob)) + blob)
        for t in params.values():
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> TrainedModel:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path} is not a model checkpoint")
    version, hlen = struct.unpack("<II", data[len(_MAGIC):len(_MAGIC) + 8])
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = len(_MAGIC) + 8
    header = json.loads(data[pos:pos + hlen])
    pos += hlen
    config = ModelConfig.from_dict(header["config"])
    model = build_model(config, header["input_shape"])
    params = model.params
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
        params[name].data[...] = arr
        pos += 4 * count
    model.adam.step_count = header["adam_step"]
    model.history = header["history"]
    model.metadata = header.get("metadata", {})
    return model


def describe(model: TrainedModel) -> Sequence[str]:
    out = []
    for layer in model.network.layers():
        shapes = ", ".join(f"{k}{tuple(t.shape)}" for k, t in layer.params.items())
        out.append(f"{type(layer).__name__}({shapes})" if shapes else type(layer).__name__)
    return out
