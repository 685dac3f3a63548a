"""Experiment runner: render, normalize, train seeded runs, evaluate, report."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import stats
from .data import Dataset, gen_synthetic, load_baseline_csv, load_dataset, load_ucr_dir, stratified_split
from .model import (ModelConfig, build_model, evaluate_accuracy, predict_logits, raw_feature_maps, save_checkpoint,
                    train)
from .preprocess import prepare
from .rasterizer import PlotSpec, render_plot, series_key
from .tensor_core import softmax_cross_entropy

log = logging.getLogger(__name__)

VARIANTS = ("univariate", "combined_plot", "multi_head", "per_variable_univariate")
PRESETS = {"screen": 5, "full": 30}
RESULTS_FIELDS = ["dataset", "variant", "method", "run", "seed", "split", "accuracy", "epochs_ran", "wall_seconds"]
CACHE_ENV = "TS2IMG_CACHE_DIR"


@dataclass
class ExperimentConfig:
    """One experiment: a dataset, a model variant and ``runs`` seeds (1..runs).

    ``dataset`` is a reference: ``ucr:<Name>`` (official split under
    ``data_root``), ``synthetic:<kind>`` (generated, split per seed) or
    ``jsonl:<dir>`` (a saved dataset cache).
    """
    dataset: str
    variant: str = "univariate"
    x_scale: str = "linear"
    runs: int = 5
    model: dict = field(default_factory=dict)
    out_dir: str = "results"
    method: str = "CNN"
    grayscale: bool = False
    standardize: bool = True
    train_fraction: float = 0.8
    data_root: str = "data/ucr"
    synthetic_n_per_class: int = 100
    synthetic_seed: int = 7
    baselines: Optional[str] = None
    save_checkpoints: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.x_scale not in ("linear", "log10"):
            raise ValueError(f"x_scale must be 'linear' or 'log10', got {self.x_scale!r}")
        unknown = set(self.model) - set(ModelConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model settings {sorted(unknown)}")

    @property
    def seeds(self):
        return list(range(1, self.runs + 1))

    @property
    def plot_spec(self):
        return PlotSpec(x_scale=self.x_scale)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            raw = json.load(f)
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def with_preset(self, preset):
        if preset not in PRESETS:
            raise ValueError(f"preset must be one of {sorted(PRESETS)}")
        return dataclasses.replace(self, runs=PRESETS[preset])


def load_dataset_ref(ref, data_root="data/ucr", n_per_class=100, seed=7) -> Dataset:
    kind, _, arg = ref.partition(":")
    if not arg:
        raise ValueError(f"dataset reference {ref!r} must look like 'ucr:Name', 'synthetic:kind' or 'jsonl:dir'")
    if kind == "ucr":
        return load_ucr_dir(data_root, arg)
    if kind == "synthetic":
        return gen_synthetic(arg, n_per_class, seed)
    if kind == "jsonl":
        return load_dataset(arg)
    raise ValueError(f"unknown dataset source {kind!r}")


def check_arity(dataset: Dataset, variant):
    n_vars = len(dataset.variable_names)
    if variant in ("combined_plot", "multi_head", "per_variable_univariate") and n_vars < 2:
        raise ValueError(f"variant {variant} needs at least 2 variables; {dataset.name} has {n_vars}")
    if variant == "univariate" and n_vars != 1:
        raise ValueError(f"{dataset.name} has {n_vars} variables; use a multivariate variant")


# ---------------------------------------------------------------------------
# rendering with a content-addressed cache


def cache_dir():
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "ts2img")


class ImageCache:
    """Rendered plots on disk, keyed by the hash of (series values, PlotSpec)."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else cache_dir()
        self.hits = self.misses = 0

    def render(self, series, spec: PlotSpec):
        key = series_key(series, spec)
        path = self.root / key[:2] / f"{key}.npy"
        if path.exists():
            self.hits += 1
            return np.load(path)
        self.misses += 1
        pixels = render_plot(series, spec).to_uint8()
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp")
        with open(tmp, "wb") as f:
            np.save(f, pixels)
        os.replace(tmp, path)
        return pixels


def branches(dataset: Dataset, variant):
    """``(variant label, head groups)``; each head group is a list of variable names drawn in one image."""
    names = dataset.variable_names
    if variant == "univariate":
        return [(variant, [[names[0]]])]
    if variant == "combined_plot":
        return [(variant, [names])]
    if variant == "multi_head":
        return [(variant, [[n] for n in names])]
    return [(f"{variant}:{n}", [[n]]) for n in names]


def sample_images(samples, heads, spec, cache: ImageCache, grayscale=False, standardize=True):
    """One ``[N, H, W, C]`` float32 array per head."""
    out = []
    for group in heads:
        out.append(np.stack([
            prepare(cache.render([s.variables[v] for v in group], spec),
                    standardize=standardize, grayscale=grayscale)
            for s in samples
        ]))
    return out


# ---------------------------------------------------------------------------
# results CSV


def completed_runs(path):
    """``(dataset, variant, seed)`` triples already recorded for both splits."""
    if not Path(path).exists():
        return set()
    seen = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            key = (row["dataset"], row["variant"], int(row["seed"]))
            seen.setdefault(key, set()).add(row["split"])
    return {k for k, v in seen.items() if {"train", "test"} <= v}


def append_rows(path, rows):
    """Append whole lines in one write so concurrent runners never interleave."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    lines = []
    if new:
        lines.append(",".join(RESULTS_FIELDS))
    for r in rows:
        lines.append(",".join(str(r[k]) for k in RESULTS_FIELDS))
    with open(path, "a") as f:
        f.write("\n".join(lines) + "\n")
        f.flush()
        os.fsync(f.fileno())


def read_results(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# ---------------------------------------------------------------------------
# running


def _splits(dataset: Dataset, seed, train_fraction):
    if dataset.provenance == "ucr_official_split":
        return dataset.train, dataset.test
    return stratified_split(dataset.samples, train_fraction, seed)


def run_single(config: ExperimentConfig, dataset: Dataset, branch, seed, cache: ImageCache, callback=None):
    """Train and evaluate one seed on one branch; returns ``(rows, model)``."""
    label, heads = branch
    t0 = time.perf_counter()
    train_s, test_s = _splits(dataset, seed, config.train_fraction)
    spec = config.plot_spec
    opts = dict(grayscale=config.grayscale, standardize=config.standardize)
    x_train = sample_images(train_s, heads, spec, cache, **opts)
    x_test = sample_images(test_s, heads, spec, cache, **opts)
    y_train = np.array([s.label for s in train_s])
    y_test = np.array([s.label for s in test_s])
    mcfg = ModelConfig.from_dict({**config.model, "n_classes": dataset.n_classes,
                                  "n_heads": len(heads), "seed": seed})
    model = build_model(mcfg, x_train[0].shape[1:])
    model.metadata = {"dataset": dataset.name, "variant": label, "x_scale": config.x_scale,
                      "grayscale": config.grayscale, "standardize": config.standardize}
    train(model, x_train, y_train, ids=[s.id for s in train_s], callback=callback)
    accs = {"train": evaluate_accuracy(model, x_train, y_train),
            "test": evaluate_accuracy(model, x_test, y_test)}
    wall = round(time.perf_counter() - t0, 3)
    rows = [dict(dataset=dataset.name, variant=label, method=config.method, run=seed, seed=seed,
                 split=split, accuracy=f"{acc:.6f}", epochs_ran=len(model.history), wall_seconds=wall)
            for split, acc in accs.items()]
    return rows, model


def run_experiment(config: ExperimentConfig, dataset: Optional[Dataset] = None, callback=None):
    """Run every seed of every branch, appending to ``<out_dir>/results.csv``.

    Seeds already recorded are skipped, so an interrupted experiment resumes
    where it stopped. A failing run is logged to ``failures.jsonl`` and the
    remaining runs proceed. Returns the ``RunResult`` list of this call.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as f:
        json.dump(dataclasses.asdict(config), f, indent=2, sort_keys=True)
    if dataset is None:
        dataset = load_dataset_ref(config.dataset, config.data_root,
                                   config.synthetic_n_per_class, config.synthetic_seed)
    check_arity(dataset, config.variant)
    results_path = out / "results.csv"
    done = completed_runs(results_path)
    cache = ImageCache()
    results = []
    for branch in branches(dataset, config.variant):
        for seed in config.seeds:
            if (dataset.name, branch[0], seed) in done:
                log.info("skipping %s %s seed %d (already recorded)", dataset.name, branch[0], seed)
                continue
            try:
                rows, model = run_single(config, dataset, branch, seed, cache, callback)
            except Exception as exc:  # one bad run must not sink the others
                log.error("run %s %s seed %d failed: %s", dataset.name, branch[0], seed, exc)
                with open(out / "failures.jsonl", "a") as f:
                    f.write(json.dumps({"dataset": dataset.name, "variant": branch[0], "seed": seed,
                                        "error": repr(exc), "trace": traceback.format_exc()}) + "\n")
                continue
            append_rows(results_path, rows)
            if config.save_checkpoints:
                ckpt = out / "checkpoints" / f"{dataset.name}_{branch[0].replace(':', '-')}_seed{seed}.ckpt"
                ckpt.parent.mkdir(exist_ok=True)
                save_checkpoint(model, ckpt)
            results += [stats.RunResult(r["dataset"], r["method"], r["run"], r["split"], float(r["accuracy"]))
                        for r in rows]
            log.info("%s %s seed %d: test %.4f", dataset.name, branch[0], seed, float(rows[1]["accuracy"]))
    log.info("image cache: %d hits, %d misses", cache.hits, cache.misses)
    return results


# ---------------------------------------------------------------------------
# measurements


def dataset_loss(model, images, labels, batch_size=32):
    """Mean cross-entropy over a labelled set, dropout off."""
    logits = predict_logits(model, images, batch_size)
    return softmax_cross_entropy(logits.astype(np.float64), np.asarray(labels))[0]


def dead_map_fraction(model, images, block=1, threshold=0.01, head=0):
    """Share of a block's channels that stay near zero, averaged over images.

    A channel counts as dead on an image when its peak post-ReLU activation
    is below ``threshold`` times the largest peak of any channel on that
    image; an image with no activation at all counts every channel.
    """
    fractions = []
    for x in images:
        act = raw_feature_maps(model, x, block, head)
        peaks = act.reshape(-1, act.shape[-1]).max(axis=0)
        top = peaks.max()
        fractions.append(1.0 if top <= 0 else float(np.mean(peaks < threshold * top)))
    return float(np.mean(fractions))


# ---------------------------------------------------------------------------
# reports


def method_label(row):
    v = row["variant"]
    return row["method"] if v == "univariate" else f"{row['method']}[{v}]"


def results_to_runs(rows):
    """``RunResult`` list with the variant folded into the method name."""
    return [stats.RunResult(r["dataset"], method_label(r), int(r["run"]), r["split"], float(r["accuracy"]))
            for r in rows]


def write_report(results_csv, out_dir, baselines_csv=None):
    """Median table, rank table and one p-value matrix per dataset."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = results_to_runs(read_results(results_csv)) if results_csv else []
    if baselines_csv:
        for method, per in load_baseline_csv(baselines_csv).items():
            for dataset, accs in per.items():
                runs += [stats.RunResult(dataset, method, i + 1, "test", a) for i, a in enumerate(accs)]
    medians = stats.aggregate_medians(runs, "test")
    stats.write_medians_csv(out / "medians.csv", medians)
    table = stats.pivot(medians)
    methods = sorted({m for row in table.values() for m in row})
    stats.write_rank_csv(out / "ranks.csv", stats.rank_summary(table, methods))
    written = [out / "medians.csv", out / "ranks.csv"]
    for dataset in sorted(table):
        per = {"test": {}, "train": {}}
        for r in runs:
            if r.dataset == dataset:
                per[r.split].setdefault(r.method, []).append(r.accuracy)
        test = {m: v for m, v in per["test"].items() if len(v) >= 2}
        if len(test) < 2:
            log.warning("%s: fewer than two methods with repeated runs; no p-value matrix", dataset)
            continue
        matrix = stats.combined_pvalue_table(test, per["train"])
        path = out / f"pvalues_{dataset}.csv"
        stats.write_pvalue_csv(path, matrix)
        written.append(path)
    return written
