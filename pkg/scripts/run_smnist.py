"""Reduced sequential-MNIST run: (1,128x2,10), ZOH first layer.

    python scripts/run_smnist.py --epochs 20 --out runs/smnist
"""
import argparse
import logging

import torch

from s5rf.experiments import run, smnist_config
from s5rf.metrics import count_params
from s5rf.layers import S5RFModel


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--permute", action="store_true")
    ap.add_argument("--target", type=float, default=None, help="stop once test accuracy reaches this")
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    cfg = smnist_config(args.seed, args.epochs, args.permute)
    total, groups = count_params(S5RFModel(cfg.model))
    logging.info("params %d %s", total, groups)
    _, hist, seconds, _ = run(cfg, out_dir=args.out, target_accuracy=args.target)
    best = max(h["val_acc"] for h in hist)
    logging.info("best test accuracy %.4f after %d epochs, %.1f min", best, len(hist), seconds / 60)
    return best


if __name__ == "__main__":
    main()
