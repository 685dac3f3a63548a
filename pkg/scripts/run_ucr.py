"""Official-split UCR runs: median test accuracy over seeds.

Examples:
    python scripts/run_ucr.py Coffee --seeds 1 2 3 4 5
    python scripts/run_ucr.py Trace --model '{"batch_size": 8, "epochs": 15, "target_loss": 0.05}'
"""
import argparse
import json
from statistics import median

from ts2img.data import load_ucr_dir
from ts2img.experiments import official_split_accuracy

DEFAULT_MODEL = {"batch_size": 8, "epochs": 100, "patience": 10}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("datasets", nargs="+")
    ap.add_argument("--data-root", default="data/ucr")
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--model", type=json.loads, default=DEFAULT_MODEL,
                    help="ModelConfig overrides as JSON")
    ap.add_argument("--gray", action="store_true", help="train on luminance only")
    args = ap.parse_args()

    for name in args.datasets:
        ds = load_ucr_dir(args.data_root, name)
        accs = []
        for seed in args.seeds:
            r = official_split_accuracy(ds, seed, args.model, grayscale=args.gray)
            accs.append(r.value)
            print(f"{name} seed {seed}: test {r.value:.4f}, {r.epochs} epochs, {r.seconds:.0f}s", flush=True)
        print(f"{name}: median test accuracy {median(accs):.4f}")


if __name__ == "__main__":
    main()
