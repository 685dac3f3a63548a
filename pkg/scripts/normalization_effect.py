"""Epochs to a training-loss target with and without samplewise standardization.

Trains on optox_like synthetic plots (log-scaled time axis) and also reports
the share of near-dead block-1 feature maps in each condition.
"""
import argparse

from ts2img.data import gen_synthetic
from ts2img.experiments import normalization_effect
from ts2img.rasterizer import PlotSpec, render_plot


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--n-per-class", type=int, default=2)
    ap.add_argument("--width", type=int, default=216, help="render width; height is two thirds of it")
    ap.add_argument("--target", type=float, default=0.1)
    ap.add_argument("--max-epochs", type=int, default=60)
    args = ap.parse_args()

    ds = gen_synthetic("optox_like", args.n_per_class, seed=3)
    spec = PlotSpec(x_scale="log10", width_px=args.width, height_px=args.width * 2 // 3)
    images = [render_plot([s.variables["F"]], spec).to_uint8() for s in ds.train]

    def show(r):
        mode = "standardized" if r.standardize else "raw"
        state = "reached" if r.reached else "censored"
        print(f"{mode:>12} seed {r.seed}: {r.epochs} epochs ({state}, loss {r.value:.3f}), "
              f"dead maps {r.dead_fraction:.3f}", flush=True)

    eff = normalization_effect(images, [s.label for s in ds.train], [s.id for s in ds.train], ds.n_classes,
                               args.seeds, args.target, args.max_epochs, model={"batch_size": 4}, progress=show)
    print(f"median epochs {eff.median_with} standardized vs {eff.median_without} raw "
          f"(cap {eff.cap}, ratio {eff.ratio:.2f})")
    print(f"mean dead block-1 maps {eff.dead_with:.3f} standardized vs {eff.dead_without:.3f} raw")


if __name__ == "__main__":
    main()
