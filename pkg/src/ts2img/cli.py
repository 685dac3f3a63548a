"""Command-line entry point: ``ts2img <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .model import extract_feature_maps, load_checkpoint, save_checkpoint
from .pngio import read_png, write_png
from .preprocess import prepare
from .rasterizer import PlotSpec, render_plot

log = logging.getLogger("ts2img")


def _dataset_ref(text):
    return text if ":" in text else f"ucr:{text}"


def cmd_render(args):
    ds = harness.load_dataset_ref(_dataset_ref(args.dataset), args.data_root, args.n_per_class, args.seed)
    spec = PlotSpec(x_scale="log10" if args.log_x else "linear")
    count = 0
    for split in ("train", "test"):
        target = Path(args.out) / ds.name / split
        for s in getattr(ds, split):
            target.mkdir(parents=True, exist_ok=True)
            if args.overlay or len(s.variables) == 1:
                write_png(target / f"{s.id}.png", render_plot(list(s.variables.values()), spec).to_uint8())
                count += 1
                continue
            for name, series in s.variables.items():
                write_png(target / f"{s.id}_{name}.png", render_plot([series], spec).to_uint8())
                count += 1
    print(f"wrote {count} images under {Path(args.out) / ds.name}")


def cmd_train(args):
    config = harness.ExperimentConfig.from_json(args.config)
    dataset = harness.load_dataset_ref(config.dataset, config.data_root,
                                       config.synthetic_n_per_class, config.synthetic_seed)
    harness.check_arity(dataset, config.variant)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = harness.ImageCache()
    for branch in harness.branches(dataset, config.variant):
        rows, model = harness.run_single(config, dataset, branch, args.seed, cache)
        harness.append_rows(out / "results.csv", rows)
        ckpt = out / f"model_{branch[0].replace(':', '-')}_seed{args.seed}.ckpt"
        save_checkpoint(model, ckpt)
        accs = ", ".join(f"{r['split']} {r['accuracy']}" for r in rows)
        print(f"{dataset.name} {branch[0]} seed {args.seed}: {accs} ({rows[0]['epochs_ran']} epochs) -> {ckpt}")


def cmd_runs(args):
    config = harness.ExperimentConfig.from_json(args.config)
    if args.preset:
        config = config.with_preset(args.preset)
    results = harness.run_experiment(config)
    tests = [r.accuracy for r in results if r.split == "test"]
    if tests:
        print(f"{len(tests)} new runs, median test accuracy {float(np.median(tests)):.4f}")
    else:
        print("nothing to do; every seed is already recorded")


def feature_grid(maps, pad=2):
    """Tile equally sized [0, 1] maps into one 8-bit image with white gutters."""
    h, w = maps[0].shape
    cols = math.ceil(math.sqrt(len(maps)))
    rows = math.ceil(len(maps) / cols)
    grid = np.full((rows * (h + pad) - pad, cols * (w + pad) - pad), 255, dtype=np.uint8)
    for i, m in enumerate(maps):
        r, c = divmod(i, cols)
        grid[r * (h + pad):r * (h + pad) + h, c * (w + pad):c * (w + pad) + w] = np.round(m * 255)
    return grid[:, :, None]


def cmd_featuremaps(args):
    model = load_checkpoint(args.checkpoint)
    meta = model.metadata
    image = read_png(args.image)
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    x = prepare(image, standardize=meta.get("standardize", True), grayscale=meta.get("grayscale", False),
                dtype=model.config.np_dtype)
    maps = extract_feature_maps(model, x, args.block, args.head)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{Path(args.image).stem}_block{args.block}.png"
    write_png(path, feature_grid(maps))
    print(f"{len(maps)} maps of {maps[0].shape[0]}x{maps[0].shape[1]} -> {path}")


def cmd_stats(args):
    for p in harness.write_report(args.results, args.out, args.baselines):
        print(p)


def cmd_report(args):
    out = Path(args.out)
    baselines = args.baselines
    if baselines is None and (out / "config.json").exists():
        baselines = json.loads((out / "config.json").read_text()).get("baselines")
    for p in harness.write_report(out / "results.csv", out / "report", baselines):
        print(p)


def build_parser():
    p = argparse.ArgumentParser(prog="ts2img", description="Time series classification through rendered line plots.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render a dataset to PNG plots")
    r.add_argument("--dataset", required=True, help="ucr:Name, synthetic:kind, jsonl:dir or a bare UCR name")
    r.add_argument("--out", required=True)
    r.add_argument("--log-x", action="store_true", help="logarithmic time axis")
    r.add_argument("--overlay", action="store_true", help="draw all variables of a sample in one plot")
    r.add_argument("--data-root", default="data/ucr")
    r.add_argument("--n-per-class", type=int, default=100, help="synthetic datasets only")
    r.add_argument("--seed", type=int, default=7, help="synthetic datasets only")
    r.set_defaults(func=cmd_render)

    t = sub.add_parser("train", help="train one seed and save a checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=1)
    t.set_defaults(func=cmd_train)

    n = sub.add_parser("runs", help="run all seeds of an experiment (resumable)")
    n.add_argument("--config", required=True)
    n.add_argument("--preset", choices=sorted(harness.PRESETS))
    n.set_defaults(func=cmd_runs)

    f = sub.add_parser("featuremaps", help="export a block's feature maps as a PNG grid")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--image", required=True)
    f.add_argument("--block", type=int, required=True)
    f.add_argument("--head", type=int, default=0)
    f.add_argument("--out", default=".")
    f.set_defaults(func=cmd_featuremaps)

    s = sub.add_parser("stats", help="medians, ranks and p-value matrices from result files")
    s.add_argument("--results")
    s.add_argument("--baselines")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stats)

    o = sub.add_parser("report", help="report tables for an experiment directory")
    o.add_argument("--out", required=True)
    o.add_argument("--baselines")
    o.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
