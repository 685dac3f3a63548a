"""Datasets: UCR TSV loading, synthetic generators, seeded splits, baseline results."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .rasterizer import TimeSeries
from .tensor_core import make_rng

log = logging.getLogger(__name__)

UCR_VARIABLE = "value"
_SPLIT_STREAM = 10
_SYNTH_STREAM = 20


@dataclass
class Sample:
    id: int
    label: int
    variables: dict

    def __post_init__(self):
        if not self.variables:
            raise ValueError(f"sample {self.id} has no variables")

    @property
    def variable_names(self):
        return list(self.variables)


@dataclass
class Dataset:
    name: str
    class_names: list
    train: list
    test: list = field(default_factory=list)
    provenance: str = "custom"  # or "ucr_official_split"

    def __post_init__(self):
        k = len(self.class_names)
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError(f"dataset {self.name}: duplicate sample ids")
        for s in self.samples:
            if not 0 <= s.label < k:
                raise ValueError(f"dataset {self.name}: sample {s.id} label {s.label} outside [0, {k})")

    @property
    def samples(self):
        return self.train + self.test

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def variable_names(self):
        return self.samples[0].variable_names if self.samples else []


# ---------------------------------------------------------------------------
# UCR


def _label_order(labels):
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def _parse_ucr(path):
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cells = line.split("\t")
            if len(cells) < 2:
                raise ValueError(f"{path}:{lineno}: expected <label><TAB><values...>")
            try:
                values = np.array([float(c) for c in cells[1:]])
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: unparsable cell ({e})") from None
            # trailing NaN padding encodes variable length
            finite = np.flatnonzero(~np.isnan(values))
            values = values[:finite[-1] + 1] if finite.size else values[:0]
            rows.append((cells[0].strip(), values))
    if not rows:
        raise ValueError(f"{path}: no data")
    return rows


def load_ucr_tsv(train_path, test_path, name=None) -> Dataset:
    """Load a UCR-archive train/test pair; labels are remapped to dense indices.

    The original label strings are kept in ``class_names`` (in sorted order).
    Series values are used exactly as parsed.
    """
    train_rows = _parse_ucr(train_path)
    test_rows = _parse_ucr(test_path)
    classes = _label_order({lab for lab, _ in train_rows})
    missing = {lab for lab, _ in test_rows} - set(classes)
    if missing:
        raise ValueError(f"test labels {sorted(missing)} do not occur in the training file")
    index = {lab: i for i, lab in enumerate(classes)}

    def samples(rows, offset):
        return [Sample(offset + i, index[lab], {UCR_VARIABLE: TimeSeries(v, name=UCR_VARIABLE)})
                for i, (lab, v) in enumerate(rows)]

    if name is None:
        name = os.path.basename(str(train_path)).split("_TRAIN")[0]
    train = samples(train_rows, 0)
    return Dataset(name, classes, train, samples(test_rows, len(train)), "ucr_official_split")


def load_ucr_dir(root, name) -> Dataset:
    """Load ``<root>/<name>/<name>_TRAIN.tsv`` and ``..._TEST.tsv``."""
    base = os.path.join(root, name, name)
    return load_ucr_tsv(base + "_TRAIN.tsv", base + "_TEST.tsv", name)


# ---------------------------------------------------------------------------
# splitting


def stratified_split(samples, train_fraction=0.8, seed=1):
    """Seeded per-class shuffle then cut; returns ``(train, test)``.

    Each class contributes ``floor(train_fraction * n_class)`` training
    samples; the leftover needed to reach ``floor(train_fraction * N)`` in
    total goes one at a time to the classes with the largest fractional
    parts. Input order is irrelevant: samples are first sorted by id.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    by_class = defaultdict(list)
    for s in sorted(samples, key=lambda s: s.id):
        by_class[s.label].append(s)
    labels = sorted(by_class)
    for lab in labels:
        if len(by_class[lab]) < 2:
            raise ValueError(f"class {lab} has {len(by_class[lab])} sample(s); both sides need one")
    exact = {lab: train_fraction * len(by_class[lab]) for lab in labels}
    cut = {lab: math.floor(exact[lab]) for lab in labels}
    leftover = math.floor(train_fraction * len(samples)) - sum(cut.values())
    for lab in sorted(labels, key=lambda lab: (-(exact[lab] - cut[lab]), lab))[:max(leftover, 0)]:
        cut[lab] += 1
    rng = make_rng(seed, _SPLIT_STREAM)
    train, test = [], []
    for lab in labels:
        group = by_class[lab]
        order = rng.permutation(len(group))
        n_train = min(max(cut[lab], 1), len(group) - 1)
        train += [group[i] for i in order[:n_train]]
        test += [group[i] for i in order[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# synthetic stand-ins


def _waveshape2(n, rng, next_id):
    samples = []
    for label in (0, 1):
        for _ in range(n):
            length = int(rng.integers(80, 200))
            t = np.arange(length)
            cycles = rng.uniform(1.5, 4.0)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.5, 2.0)
            carrier = np.sin(2 * np.pi * cycles * t / length + phase)
            wave = carrier if label == 0 else np.sign(carrier)
            values = amp * wave + rng.uniform(-1, 1) + rng.normal(0, 0.1 * amp, length)
            samples.append(Sample(next_id(), label, {"x": TimeSeries(values, name="x")}))
    return ["sine", "square"], samples


def _fisio_like(n, rng, next_id):
    samples = []
    for label in (0, 1):
        for _ in range(n):
            slope = rng.uniform(0.35, 0.6) if label == 0 else rng.uniform(0.75, 1.1)
            hr_len, ven_len = (int(v) for v in rng.integers(60, 151, size=2))
            t_hr, t_ven = np.arange(hr_len), np.arange(ven_len)
            hr = rng.uniform(65, 95) + slope * t_hr + rng.normal(0, 2.0, hr_len)
            ven = rng.uniform(10, 20) + 0.6 * slope * t_ven * (1 + 0.01 * t_ven) + rng.normal(0, 4.0, ven_len)
            samples.append(Sample(next_id(), label, {
                "HR": TimeSeries(hr, name="HR"), "VEN": TimeSeries(ven, name="VEN")}))
    return ["low_slope", "high_slope"], samples


def _optox_like(n, rng, next_id, n_classes=13):
    # induction-like rise on log time: a fast phase to an intermediate plateau,
    # then a slow phase to the final level; the intermediate plateau (as a
    # fraction of the total rise) and the final level are class specific, so
    # classes stay distinguishable after per-plot autoscaling
    samples = []
    plateaus = np.linspace(1.4, 4.0, n_classes)
    fractions = np.linspace(0.1, 0.9, n_classes)
    for label in range(n_classes):
        for _ in range(n):
            length = int(rng.integers(90, 130))
            t = np.logspace(-5, 0, length)
            tau = 10 ** rng.normal(-2.5, 0.1)
            top = plateaus[label] * rng.normal(1, 0.01)
            mid = 1 + (fractions[label] + rng.normal(0, 0.01)) * (top - 1)
            fast = 1 - np.exp(-t / (0.01 * tau))
            slow = 1 - np.exp(-t / tau)
            values = 1 + (mid - 1) * fast + (top - mid) * slow
            values = values + rng.normal(0, 0.01, length)
            samples.append(Sample(next_id(), label, {"F": TimeSeries(values, timestamps=t, name="F")}))
    return [f"contaminant_{i + 1}" for i in range(n_classes)], samples


_GENERATORS = {"waveshape2": _waveshape2, "fisio_like": _fisio_like, "optox_like": _optox_like}


def gen_synthetic(kind, n_per_class, seed) -> Dataset:
    """Synthetic labelled dataset (all samples in ``train``; split it yourself).

    ``waveshape2``: noisy sine vs noisy square, univariate, lengths 80-199.
    ``fisio_like``: HR and VEN series with independent lengths 60-150; the
    class is the steepness of the upward trend.
    ``optox_like``: 13 classes of log-time induction curves with
    class-specific plateau levels; timestamps are log-spaced.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {sorted(_GENERATORS)}")
    if n_per_class < 2:
        raise ValueError("n_per_class must be at least 2")
    rng = make_rng(seed, _SYNTH_STREAM)
    counter = iter(range(10 ** 9))
    classes, samples = _GENERATORS[kind](n_per_class, rng, lambda: next(counter))
    return Dataset(kind, classes, samples, [], "custom")


# ---------------------------------------------------------------------------
# JSON-lines cache


def _encode_series(ts: TimeSeries):
    vals = [None if math.isnan(v) else v for v in ts.values.tolist()]
    if ts.timestamps is None:
        return vals
    return {"values": vals, "timestamps": ts.timestamps.tolist()}


def _decode_series(name, obj):
    if isinstance(obj, dict):
        vals, ts = obj["values"], obj.get("timestamps")
    else:
        vals, ts = obj, None
    values = np.array([np.nan if v is None else v for v in vals], dtype=np.float64)
    return TimeSeries(values, None if ts is None else np.array(ts, dtype=np.float64), name=name)


def sample_to_json(s: Sample) -> str:
    return json.dumps({"id": s.id, "label": s.label,
                       "vars": {k: _encode_series(v) for k, v in s.variables.items()}})


def sample_from_json(line: str) -> Sample:
    d = json.loads(line)
    return Sample(int(d["id"]), int(d["label"]), {k: _decode_series(k, v) for k, v in d["vars"].items()})


def save_dataset(ds: Dataset, directory):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "meta.json"), "w") as f:
        json.dump({"name": ds.name, "class_names": ds.class_names, "provenance": ds.provenance}, f)
    for split in ("train", "test"):
        with open(os.path.join(directory, f"{split}.jsonl"), "w") as f:
            for s in getattr(ds, split):
                f.write(sample_to_json(s) + "\n")


def load_dataset(directory) -> Dataset:
    with open(os.path.join(directory, "meta.json")) as f:
        meta = json.load(f)
    splits = {}
    for split in ("train", "test"):
        with open(os.path.join(directory, f"{split}.jsonl")) as f:
            splits[split] = [sample_from_json(line) for line in f if line.strip()]
    return Dataset(meta["name"], meta["class_names"], splits["train"], splits["test"], meta["provenance"])


# ---------------------------------------------------------------------------
# published baselines


class BaselineResults(dict):
    """``method -> dataset -> [accuracy per run]`` (runs in ascending order)."""

    def count(self, method, dataset):
        return len(self.get(method, {}).get(dataset, []))

    def medians(self):
        return {(d, m): float(np.median(v)) for m, per in self.items() for d, v in per.items()}


def load_baseline_csv(path) -> BaselineResults:
    """Read ``method,dataset,run,accuracy`` rows (header line required)."""
    runs = defaultdict(dict)
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            log.warning("%s is empty; no baseline results loaded", path)
            return BaselineResults()
        missing = {"method", "dataset", "run", "accuracy"} - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            acc = float(row["accuracy"])
            if not 0 <= acc <= 1:
                raise ValueError(f"{path}:{lineno}: accuracy {acc} outside [0, 1]")
            key = (row["method"], row["dataset"])
            run = int(row["run"])
            if run in runs[key]:
                raise ValueError(f"{path}:{lineno}: duplicate run {run} for {key}")
            runs[key][run] = acc
    if not runs:
        log.warning("%s has no rows; no baseline results loaded", path)
    out = BaselineResults()
    for (method, dataset), per_run in runs.items():
        out.setdefault(method, {})[dataset] = [per_run[r] for r in sorted(per_run)]
    return out
