"""Epochs until waveshape2 (200 train / 100 test, grayscale) reaches a test-accuracy target."""
import argparse
import logging
from statistics import median

from ts2img.data import gen_synthetic
from ts2img.experiments import epochs_to_test_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--target", type=float, default=0.95)
    ap.add_argument("--max-epochs", type=int, default=30)
    ap.add_argument("--batch-size", type=int, default=16)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    ds = gen_synthetic("waveshape2", 150, seed=7)
    runs = []
    for seed in args.seeds:
        r = epochs_to_test_accuracy(ds, seed, args.target, args.max_epochs, 2 / 3, {"batch_size": args.batch_size})
        runs.append(r)
        print(f"seed {seed}: test accuracy {r.value:.3f} after {r.epochs} epochs ({r.seconds:.0f}s)")
    print(f"median test accuracy {median(r.value for r in runs):.3f}, "
          f"median epochs {median(r.epochs for r in runs)}")


if __name__ == "__main__":
    main()
