"""Desk-scale experiment protocols, shared by the scripts and the acceptance suite.

Each protocol works on a single seed and returns a small record; callers
loop over seeds and take medians.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from statistics import median
from typing import Optional

import numpy as np

from .data import Dataset, stratified_split
from .harness import ImageCache, dataset_loss, dead_map_fraction, sample_images
from .model import ModelConfig, build_model, evaluate_accuracy, train
from .rasterizer import PlotSpec


@dataclass
class TargetRun:
    """One seed trained until a target was met or the epoch budget ran out."""
    seed: int
    epochs: int
    reached: bool
    value: float
    seconds: float


def _images(samples, spec, cache, grayscale, standardize=True):
    name = samples[0].variable_names[0]
    return sample_images(samples, [[name]], spec, cache, grayscale, standardize)[0]


def _labels(samples):
    return np.array([s.label for s in samples])


def epochs_to_test_accuracy(dataset: Dataset, seed, target=0.95, max_epochs=30, train_fraction=2 / 3,
                            model: Optional[dict] = None, spec: Optional[PlotSpec] = None,
                            grayscale=True, cache: Optional[ImageCache] = None) -> TargetRun:
    """Epochs until held-out accuracy first reaches ``target``.

    The split is stratified and seeded by ``seed``; test accuracy is read
    after every epoch and training stops as soon as it reaches the target.
    """
    cache = cache or ImageCache()
    spec = spec or PlotSpec()
    train_s, test_s = stratified_split(dataset.samples, train_fraction, seed)
    x_tr, x_te = _images(train_s, spec, cache, grayscale), _images(test_s, spec, cache, grayscale)
    y_tr, y_te = _labels(train_s), _labels(test_s)
    cfg = ModelConfig.from_dict({**(model or {}), "n_classes": dataset.n_classes, "seed": seed,
                                 "epochs": max_epochs, "patience": 0, "target_loss": None})
    m = build_model(cfg, x_tr.shape[1:])
    accs = []

    def watch(model, record):
        accs.append(evaluate_accuracy(model, x_te, y_te))
        return accs[-1] >= target

    t0 = time.perf_counter()
    train(m, x_tr, y_tr, [s.id for s in train_s], callback=watch)
    return TargetRun(seed, len(accs), accs[-1] >= target, accs[-1], time.perf_counter() - t0)


def official_split_accuracy(dataset: Dataset, seed, model: Optional[dict] = None,
                            spec: Optional[PlotSpec] = None, grayscale=True,
                            cache: Optional[ImageCache] = None) -> TargetRun:
    """Train on the official train split with the model's own stopping rule, score the test split."""
    cache = cache or ImageCache()
    spec = spec or PlotSpec()
    x_tr, x_te = _images(dataset.train, spec, cache, grayscale), _images(dataset.test, spec, cache, grayscale)
    cfg = ModelConfig.from_dict({**(model or {}), "n_classes": dataset.n_classes, "seed": seed})
    m = build_model(cfg, x_tr.shape[1:])
    t0 = time.perf_counter()
    train(m, x_tr, _labels(dataset.train), [s.id for s in dataset.train])
    acc = evaluate_accuracy(m, x_te, _labels(dataset.test))
    return TargetRun(seed, len(m.history), True, acc, time.perf_counter() - t0)


@dataclass
class NormalizationRun(TargetRun):
    standardize: bool = True
    losses: tuple = ()
    dead_fraction: float = 0.0


def epochs_to_training_loss(images, labels, ids, n_classes, seed, standardize, target=0.1, max_epochs=60,
                            model: Optional[dict] = None) -> NormalizationRun:
    """Epochs until the training-set loss, measured with dropout off, reaches ``target``.

    ``images`` are raw uint8 renders; they are standardized here or only
    rescaled to [0, 1]. Also reports the dead block-1 map fraction of the
    final model on the training images.
    """
    from .preprocess import prepare
    x = np.stack([prepare(im, standardize=standardize, grayscale=True) for im in images])
    cfg = ModelConfig.from_dict({**(model or {}), "n_classes": n_classes, "seed": seed,
                                 "epochs": max_epochs, "patience": 0, "target_loss": None})
    m = build_model(cfg, x.shape[1:])
    losses = []

    def watch(model, record):
        losses.append(dataset_loss(model, x, labels))
        return losses[-1] <= target

    t0 = time.perf_counter()
    train(m, x, labels, ids, callback=watch)
    reached = losses[-1] <= target
    return NormalizationRun(seed, len(losses), reached, losses[-1], time.perf_counter() - t0,
                            standardize, tuple(losses), dead_map_fraction(m, x))


@dataclass
class NormalizationEffect:
    with_norm: list
    without_norm: list
    cap: int

    @property
    def median_with(self):
        return median(r.epochs for r in self.with_norm)

    @property
    def median_without(self):
        return median(r.epochs for r in self.without_norm)

    @property
    def ratio(self):
        return self.median_without / self.median_with

    @property
    def dead_with(self):
        return float(np.mean([r.dead_fraction for r in self.with_norm]))

    @property
    def dead_without(self):
        return float(np.mean([r.dead_fraction for r in self.without_norm]))


def normalization_effect(images, labels, ids, n_classes, seeds, target=0.1, max_epochs=60, factor=1.5,
                         model: Optional[dict] = None, progress=None) -> NormalizationEffect:
    """Epochs-to-loss with and without samplewise standardization.

    Standardized runs go first. Unstandardized runs are then capped at
    ``ceil(factor * median)`` epochs of the standardized ones; a run that
    hits the cap is censored there, which can only understate its epochs.
    """
    labels = np.asarray(labels)
    with_norm = []
    for s in seeds:
        with_norm.append(epochs_to_training_loss(images, labels, ids, n_classes, s, True, target, max_epochs, model))
        if progress:
            progress(with_norm[-1])
    cap = math.ceil(factor * median(r.epochs for r in with_norm))
    without = []
    for s in seeds:
        without.append(epochs_to_training_loss(images, labels, ids, n_classes, s, False, target, cap, model))
        if progress:
            progress(without[-1])
    return NormalizationEffect(with_norm, without, cap)
