import logging
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ts2img.data import (Dataset, Sample, gen_synthetic, load_baseline_csv, load_dataset, load_ucr_dir,
                         load_ucr_tsv, sample_from_json, sample_to_json, save_dataset, stratified_split)
from ts2img.rasterizer import TimeSeries

UCR_ROOT = Path(__file__).resolve().parents[1] / "data" / "ucr"


def write_pair(tmp_path, train_lines, test_lines):
    tr, te = tmp_path / "X_TRAIN.tsv", tmp_path / "X_TEST.tsv"
    tr.write_text("\n".join(train_lines) + "\n")
    te.write_text("\n".join(test_lines) + "\n")
    return tr, te


def make_samples(counts):
    out, i = [], 0
    for label, n in enumerate(counts):
        for _ in range(n):
            out.append(Sample(i, label, {"v": TimeSeries(np.arange(3.0) + i)}))
            i += 1
    return out


# --- UCR parsing -----------------------------------------------------------


def test_parse_basic_line(tmp_path):
    ds = load_ucr_tsv(*write_pair(tmp_path, ["2\t0.1\t0.2\t0.3", "1\t1\t2\t3"], ["2\t0\t0\t0"]))
    s = ds.train[0]
    assert ds.class_names[s.label] == "2"
    assert s.variables["value"].values.tolist() == [0.1, 0.2, 0.3]
    assert ds.name == "X" and ds.provenance == "ucr_official_split"


def test_trailing_nan_trim(tmp_path):
    ds = load_ucr_tsv(*write_pair(tmp_path, ["1\t0.5\tNaN\tNaN", "2\t1\tNaN\t3"], ["1\t1\t1"]))
    assert ds.train[0].variables["value"].values.tolist() == [0.5]
    inner = ds.train[1].variables["value"].values
    assert len(inner) == 3 and np.isnan(inner[1])


def test_labels_sorted_numerically(tmp_path):
    ds = load_ucr_tsv(*write_pair(tmp_path, ["10\t1\t2", "2\t1\t2", "-1\t0\t0"], ["2\t1\t1"]))
    assert ds.class_names == ["-1", "2", "10"]


@pytest.mark.parametrize("train,test", [
    (["1\t0.1\tabc"], ["1\t0"]),
    (["1"], ["1\t0"]),
    (["1\t0.1\t0.2"], ["3\t0.1\t0.2"]),
    ([""], ["1\t0"]),
])
def test_parse_errors(tmp_path, train, test):
    with pytest.raises(ValueError):
        load_ucr_tsv(*write_pair(tmp_path, train, test))


@given(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=1, max_size=20))
@settings(max_examples=50, deadline=None)
def test_values_parse_exactly(tmp_path_factory, values):
    d = tmp_path_factory.mktemp("ucr")
    line = "1\t" + "\t".join(repr(v) for v in values)
    ds = load_ucr_tsv(*write_pair(d, [line], [line]))
    assert ds.train[0].variables["value"].values.tolist() == values


def test_coffee_shape():
    ds = load_ucr_dir(UCR_ROOT, "Coffee")
    assert (len(ds.train), len(ds.test), ds.n_classes) == (28, 28, 2)
    assert {len(s.variables["value"]) for s in ds.samples} == {286}


def test_trace_shape():
    ds = load_ucr_dir(UCR_ROOT, "Trace")
    assert (len(ds.train), len(ds.test), ds.n_classes) == (100, 100, 4)
    assert {len(s.variables["value"]) for s in ds.samples} == {275}


# --- splitting -------------------------------------------------------------


def test_split_balanced_100():
    train, test = stratified_split(make_samples([50, 50]), 0.8, seed=3)
    assert len(train) == 80 and len(test) == 20
    assert sum(s.label == 0 for s in train) == 40 and sum(s.label == 0 for s in test) == 10


def test_split_deterministic_and_order_free():
    samples = make_samples([30, 20, 13])
    a = stratified_split(samples, seed=9)
    b = stratified_split(samples[::-1], seed=9)
    assert [s.id for s in a[0]] == [s.id for s in b[0]]


def test_split_seeds_1_to_30_on_262():
    samples = make_samples([131, 131])
    partitions = set()
    for seed in range(1, 31):
        train, test = stratified_split(samples, 0.8, seed)
        assert (len(train), len(test)) == (209, 53)
        partitions.add(frozenset(s.id for s in train))
    assert len(partitions) == 30


@given(st.lists(st.integers(2, 40), min_size=2, max_size=6), st.floats(0.1, 0.9), st.integers(0, 10_000))
@settings(max_examples=100, deadline=None)
def test_split_partition_properties(counts, frac, seed):
    samples = make_samples(counts)
    train, test = stratified_split(samples, frac, seed)
    ids_tr, ids_te = {s.id for s in train}, {s.id for s in test}
    assert not ids_tr & ids_te
    assert ids_tr | ids_te == {s.id for s in samples}
    for label, n in enumerate(counts):
        k = sum(s.label == label for s in train)
        assert 1 <= k <= n - 1
        assert abs(k - frac * n) <= 1 or k in (1, n - 1)


def test_split_errors():
    with pytest.raises(ValueError):
        stratified_split(make_samples([1, 5]))
    with pytest.raises(ValueError):
        stratified_split(make_samples([5, 5]), train_fraction=1.0)


# --- synthetic generators --------------------------------------------------


def test_waveshape2_balanced():
    ds = gen_synthetic("waveshape2", 100, seed=7)
    labels = [s.label for s in ds.samples]
    assert len(labels) == 200 and labels.count(0) == labels.count(1) == 100


def test_fisio_like_independent_lengths():
    ds = gen_synthetic("fisio_like", 20, seed=1)
    assert ds.variable_names == ["HR", "VEN"]
    assert any(len(s.variables["HR"]) != len(s.variables["VEN"]) for s in ds.samples)


def test_optox_like_classes():
    ds = gen_synthetic("optox_like", 2, seed=1)
    assert ds.n_classes == 13 and len(ds.samples) == 26
    ts = ds.samples[0].variables["F"]
    assert ts.timestamps is not None and ts.timestamps[0] > 0


def test_generators_are_seeded():
    a = gen_synthetic("waveshape2", 5, seed=2).samples[3].variables["x"].values
    b = gen_synthetic("waveshape2", 5, seed=2).samples[3].variables["x"].values
    c = gen_synthetic("waveshape2", 5, seed=3).samples[3].variables["x"].values
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_generator_errors():
    with pytest.raises(ValueError):
        gen_synthetic("nope", 5, 1)
    with pytest.raises(ValueError):
        gen_synthetic("waveshape2", 1, 1)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset("d", ["a"], make_samples([0, 2]))
    dup = make_samples([2])
    with pytest.raises(ValueError):
        Dataset("d", ["a"], dup + dup)


# --- JSON lines ------------------------------------------------------------


def test_sample_json_roundtrip():
    ts = TimeSeries(np.array([1.0, np.nan, 3.0]), np.array([0.1, 0.2, 0.5]), name="F")
    s = Sample(4, 1, {"F": ts, "G": TimeSeries(np.array([2.0, 1.0]))})
    back = sample_from_json(sample_to_json(s))
    assert back.id == 4 and back.label == 1 and back.variable_names == ["F", "G"]
    np.testing.assert_array_equal(back.variables["F"].values, ts.values)
    np.testing.assert_array_equal(back.variables["F"].timestamps, ts.timestamps)
    assert back.variables["G"].timestamps is None


def test_dataset_roundtrip(tmp_path):
    ds = gen_synthetic("fisio_like", 3, seed=5)
    tr, te = stratified_split(ds.samples, seed=1)
    ds = Dataset(ds.name, ds.class_names, tr, te)
    save_dataset(ds, tmp_path / "cache")
    back = load_dataset(tmp_path / "cache")
    assert (back.name, back.class_names, back.provenance) == (ds.name, ds.class_names, ds.provenance)
    for a, b in zip(ds.samples, back.samples):
        assert (a.id, a.label) == (b.id, b.label)
        for k in a.variables:
            assert a.variables[k].values.tolist() == b.variables[k].values.tolist()


# --- baselines -------------------------------------------------------------


def test_baseline_groups(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("method,dataset,run,accuracy\nROCKET,Coffee,2,1.0\nROCKET,Coffee,1,0.96\nROCKET,Coffee,3,1.0\n")
    b = load_baseline_csv(p)
    assert b["ROCKET"]["Coffee"] == [0.96, 1.0, 1.0]
    assert b.count("ROCKET", "Coffee") == 3
    assert b.medians() == {("Coffee", "ROCKET"): 1.0}


def test_baseline_empty_warns(tmp_path, caplog):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with caplog.at_level(logging.WARNING):
        assert load_baseline_csv(p) == {}
    assert "empty" in caplog.text


@pytest.mark.parametrize("body", [
    "ROCKET,Coffee,1,1.2\n",
    "ROCKET,Coffee,1,0.9\nROCKET,Coffee,1,0.8\n",
])
def test_baseline_errors(tmp_path, body):
    p = tmp_path / "b.csv"
    p.write_text("method,dataset,run,accuracy\n" + body)
    with pytest.raises(ValueError):
        load_baseline_csv(p)


def test_baseline_missing_columns(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("method,dataset,accuracy\nA,B,0.5\n")
    with pytest.raises(ValueError, match="missing"):
        load_baseline_csv(p)
