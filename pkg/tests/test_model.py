import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ts2img.data import gen_synthetic
from ts2img.model import (CNN, ModelConfig, accuracy, build_model, describe, evaluate_accuracy,
                          extract_feature_maps, layer_specs, load_checkpoint, predict, save_checkpoint,
                          train)
from ts2img.preprocess import prepare
from ts2img.rasterizer import PlotSpec, render_plot
from ts2img.tensor_core import ShapeError

SMALL = dict(filter_schedule=(2, 2, 2, 2, 2), fc_units=(8, 8), batch_size=4)


def tiny_set(n=12, k=2, shape=(32, 48, 1), seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n,) + shape).astype(np.float32)
    y = np.arange(n) % k
    return x, y


def params_of(model):
    return {k: t.data.copy() for k, t in model.params.items()}


def test_default_filter_schedule():
    assert ModelConfig().filters == [16, 32, 64, 128, 256]


def test_layer_layout():
    kinds = [s.kind for s in layer_specs(ModelConfig(n_classes=5))]
    assert kinds[:15] == ["conv2d", "relu", "maxpool"] * 5
    assert kinds[15:] == ["flatten", "dense", "relu", "dropout", "dense", "relu", "dropout", "dense"]


def test_full_size_geometry():
    net = CNN(ModelConfig(n_classes=7), (288, 432, 3))
    flat = net.classifier.layers[0]
    assert net.heads[0].output_shape((288, 432, 3)) == (9, 13, 256)
    assert flat.output_shape((9, 13, 256)) == (9 * 13 * 256,)
    assert net.output_shape == (7,)
    fc = [l for l in net.classifier.layers if type(l).__name__ == "Dense"]
    assert [l.params[next(iter(l.params))].shape for l in fc][0] == (29952, 256)


def test_input_too_small():
    with pytest.raises(ShapeError):
        build_model(ModelConfig(), (31, 64, 1))


@pytest.mark.parametrize("bad", [dict(n_classes=1), dict(n_heads=0), dict(dropout_rate=1.0),
                                 dict(batch_size=0), dict(filter_schedule=(2, 2))])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ModelConfig(**bad)


def test_zero_epochs_keeps_init():
    x, y = tiny_set()
    m = build_model(ModelConfig(epochs=0, **SMALL), x.shape[1:])
    before = params_of(m)
    train(m, x, y)
    after = params_of(m)
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert m.history == []


def test_training_is_deterministic():
    x, y = tiny_set()
    runs = []
    for _ in range(2):
        m = build_model(ModelConfig(epochs=3, seed=5, **SMALL), x.shape[1:])
        train(m, x, y)
        runs.append(params_of(m))
    assert all(np.array_equal(runs[0][k], runs[1][k]) for k in runs[0])


def test_seed_changes_result():
    x, y = tiny_set()
    a = build_model(ModelConfig(seed=1, **SMALL), x.shape[1:])
    b = build_model(ModelConfig(seed=2, **SMALL), x.shape[1:])
    pa, pb = params_of(a), params_of(b)
    assert not any(np.array_equal(pa[k], pb[k]) for k in pa if k.endswith(".w"))


def test_order_invariance():
    x, y = tiny_set()
    ids = [f"s{i:03d}" for i in range(len(y))]
    perm = np.random.default_rng(3).permutation(len(y))
    a = train(build_model(ModelConfig(epochs=2, **SMALL), x.shape[1:]), x, y, ids)
    b = train(build_model(ModelConfig(epochs=2, **SMALL), x.shape[1:]), x[perm], y[perm], [ids[i] for i in perm])
    pa, pb = params_of(a), params_of(b)
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_single_head_matches_plain_builder():
    cfg = ModelConfig(n_heads=1, **SMALL)
    net = CNN(cfg, (32, 48, 1))
    plain = [s.kind for s in layer_specs(cfg)]
    assert [type(l).__name__.lower() for l in net.layers()] == [
        {"conv2d": "conv2d", "relu": "relu", "maxpool": "maxpool2x2", "flatten": "flatten",
         "dense": "dense", "dropout": "dropout"}[k] for k in plain]


def test_multi_head_shapes_and_sharing():
    cfg = ModelConfig(n_heads=3, **SMALL)
    net = CNN(cfg, (32, 48, 1))
    x = [np.zeros((2, 32, 48, 1), np.float32)] * 3
    assert net.forward(x).shape == (2, 2)
    assert len(net.heads) == 3
    shared = CNN(ModelConfig(n_heads=3, share_head_weights=True, **SMALL), (32, 48, 1))
    assert len(shared.params) < len(net.params)
    with pytest.raises(ShapeError):
        net.forward(x[:2])


def test_multi_head_training_runs():
    x, y = tiny_set()
    m = build_model(ModelConfig(n_heads=2, epochs=2, **SMALL), x.shape[1:])
    train(m, [x, x[::-1].copy()], y)
    assert len(m.history) == 2


def test_training_errors():
    x, y = tiny_set()
    m = build_model(ModelConfig(**SMALL), x.shape[1:])
    with pytest.raises(ValueError):
        train(m, x[:0], y[:0])
    with pytest.raises(ValueError):
        train(m, x, y + 5)


def test_callback_can_stop():
    x, y = tiny_set()
    m = build_model(ModelConfig(epochs=10, **SMALL), x.shape[1:])
    train(m, x, y, callback=lambda model, rec: rec["epoch"] == 2)
    assert len(m.history) == 2


def test_accuracy_edges():
    assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert accuracy([0, 1, 0], [1, 0, 1]) == 0.0
    with pytest.raises(ShapeError):
        accuracy([1, 0], [1])


def test_random_model_chance_level():
    k = 4
    x, y = tiny_set(n=10_000, k=k, shape=(32, 32, 1), seed=1)
    m = build_model(ModelConfig(n_classes=k, **SMALL), x.shape[1:])
    assert abs(evaluate_accuracy(m, x, y, batch_size=500) - 1 / k) <= 0.02


def test_predict_shape_mismatch():
    x, _ = tiny_set()
    m = build_model(ModelConfig(**SMALL), x.shape[1:])
    with pytest.raises(ShapeError):
        predict(m, np.zeros((2, 32, 40, 1), np.float32))


def test_learns_separable_plots():
    ds = gen_synthetic("waveshape2", 10, seed=4)
    spec = PlotSpec(width_px=96, height_px=64)
    x = np.stack([prepare(render_plot(list(s.variables.values()), spec).to_uint8(), grayscale=True)
                  for s in ds.samples])
    y = np.array([s.label for s in ds.samples])
    m = build_model(ModelConfig(epochs=30, batch_size=8, target_loss=0.02, seed=1), x.shape[1:])
    train(m, x, y, [s.id for s in ds.samples])
    assert evaluate_accuracy(m, x, y) >= 0.99
    assert len(m.history) <= 30


def test_feature_maps():
    m = build_model(ModelConfig(), (64, 96, 1))
    img = np.random.default_rng(0).normal(size=(64, 96, 1)).astype(np.float32)
    maps = extract_feature_maps(m, img, 1)
    assert len(maps) == 16 and maps[0].shape == (64, 96)
    assert all(0 <= mp.min() and mp.max() <= 1 for mp in maps)
    assert [extract_feature_maps(m, img, b)[0].shape for b in (2, 3)] == [(32, 48), (16, 24)]
    assert len(extract_feature_maps(m, img, 5)) == 256
    with pytest.raises(ValueError):
        extract_feature_maps(m, img, 6)


def test_zero_image_gives_constant_block1_maps():
    m = build_model(ModelConfig(), (32, 48, 3))
    for mp in extract_feature_maps(m, np.zeros((32, 48, 3), np.float32), 1):
        assert np.ptp(mp) == 0


def test_checkpoint_roundtrip(tmp_path):
    x, y = tiny_set()
    m = build_model(ModelConfig(epochs=2, **SMALL), x.shape[1:])
    train(m, x, y)
    m.metadata = {"standardize": True}
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.config == m.config and back.history == m.history and back.metadata == m.metadata
    np.testing.assert_array_equal(predict(back, x), predict(m, x))
    assert describe(back) == describe(m)
    raw = path.read_bytes()
    assert raw[:8] == b"TS2IMGCK"
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nope" + raw[4:])
    with pytest.raises(ValueError):
        load_checkpoint(bad)


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
@settings(max_examples=5, deadline=None)
def test_history_length_matches_epochs(epochs, seed):
    x, y = tiny_set(n=4)
    m = build_model(ModelConfig(epochs=epochs, seed=seed, patience=0, **SMALL), x.shape[1:])
    train(m, x, y)
    assert len(m.history) == epochs
