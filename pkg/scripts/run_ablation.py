"""Ablations on the synthetic task: learned vs fixed eta, HiPPO vs random init.

    python scripts/run_ablation.py --epochs 5
"""
import argparse
import itertools
import logging

import numpy as np
import torch

from s5rf.experiments import run, synthetic_config

ARMS = [("hippo", False), ("hippo", True), ("random", False), ("random", True)]


def ablation(seeds=(0, 1, 2), epochs=5):
    """Final test accuracy per (init, fix_eta) arm, one entry per seed."""
    results = {arm: [] for arm in ARMS}
    for (init, fix_eta), seed in itertools.product(ARMS, seeds):
        _, hist, _, _ = run(synthetic_config(seed, epochs, init=init, fix_eta=fix_eta))
        results[(init, fix_eta)].append(hist[-1]["val_acc"])
    return results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=5)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    torch.set_num_threads(1)
    for (init, fix_eta), accs in ablation(args.seeds, args.epochs).items():
        eta = "fixed" if fix_eta else "learned"
        print(f"{init:6s} eta={eta:7s} acc={np.mean(accs):.3f}  per-seed {np.round(accs, 3).tolist()}")


if __name__ == "__main__":
    main()
