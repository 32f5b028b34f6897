"""Train on two toy datasets (B rotates every class orientation) and swap policies.

Prints a 2x2 table: rows are the dataset whose recognizer and test split are
used, columns the dataset the policy was trained on.
"""
import argparse
import logging

from videoiq.config import TrainConfig
from videoiq.evaluate import cross_policy_eval
from videoiq.pipeline import run_pipeline, shifted_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--offset", type=float, default=3.141592653589793 / 8, help="orientation shift of dataset B (rad)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = TrainConfig(seed=args.seed)
    runs = {"A": run_pipeline(base), "B": run_pipeline(shifted_config(base, args.offset))}
    print(f"{'recognizer/test':<16}{'policy A':>10}{'policy B':>10}")
    for name, native in runs.items():
        test, man = native.splits["test"]
        cells = [cross_policy_eval(runs[p].policy, native.recognizer, test, native.actions, man).top1 for p in runs]
        print(f"{name:<16}" + "".join(f"{c:>10.1f}" for c in cells))


if __name__ == "__main__":
    main()
