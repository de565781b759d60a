"""Synthetic resonance task: 4 classes, one 32-neuron layer, several seeds.

    python scripts/run_synthetic.py --seeds 0 1 2 --out runs/synthetic
"""
import argparse
import logging
from pathlib import Path

import torch

from s5rf.experiments import run, synthetic_config
from s5rf.metrics import count_sops, export_raster


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--target", type=float, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    for seed in args.seeds:
        out = Path(args.out) / f"seed{seed}" if args.out else None
        model, hist, seconds, (_, test) = run(synthetic_config(seed, args.epochs), out, args.target)
        sops = count_sops(model, test)
        print(f"seed {seed}: test acc {hist[-1]['val_acc']:.3f} after {len(hist)} epochs "
              f"({seconds:.0f}s), {sops.total_sops:.1f} spikes/sample")
        if out:
            with torch.no_grad():
                _, spikes = model(test.inputs[:1], return_spikes=True)
            export_raster(spikes[0][0], out / "raster", title=f"layer 0, seed {seed}")


if __name__ == "__main__":
    main()
