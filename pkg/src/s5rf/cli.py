"""Command-line entry point: ``s5rf <command> ...``.

Exit status is 0 on success, 2 for invalid configuration or input, and 3
for numeric failures (non-finite loss, failed eigensolve, gradient check
above tolerance).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np
import torch

from .config import RunConfig, load_config, to_dict
from .errors import InvalidConfigError, InvalidInputError, NumericFailureError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
GRADCHECK_TOL = 1e-4


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def format_defaults(cfg=None) -> str:
    """Render a config (the defaults if omitted) as TOML text."""
    lines = []

    def emit(table, prefix):
        scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
        if prefix:
            lines.append(f"[{prefix}]")
        lines.extend(f"{k} = {_toml_value(v)}" for k, v in scalars.items())
        lines.append("")
        for k, v in table.items():
            if isinstance(v, dict):
                emit(v, f"{prefix}.{k}" if prefix else k)

    emit(to_dict(cfg or RunConfig()), "")
    return "\n".join(lines).strip() + "\n"


def cmd_train(args):
    from .data import load_datasets
    from .layers import S5RFModel
    from .training import fit

    cfg = load_config(args.config)
    torch.manual_seed(cfg.train.seed)
    train, test = load_datasets(cfg.data, cfg.model.num_classes, cfg.train.seed)
    model = S5RFModel(cfg.model)
    hist = fit(model, train, test, cfg, out_dir=args.out, target_accuracy=args.target)
    last = hist[-1]
    print(json.dumps({"epochs": len(hist), "train_loss": last["train_loss"], "val_acc": last["val_acc"],
                      "sops": last["sops"]}))


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .data import load_manifest_dataset
    from .metrics import evaluate

    model = load_checkpoint(args.checkpoint)
    data = load_manifest_dataset(args.data, model.cfg.num_classes).to(next(model.parameters()).dtype)
    out = evaluate(model, data, convention=args.convention)
    sops = out["sops"]
    print(json.dumps({"accuracy": out["accuracy"], "loss": out["loss"], "total_sops": sops.total_sops,
                      "per_layer_spikes": sops.per_layer_spikes, "convention": sops.convention}))


def cmd_inspect(args):
    from .checkpoint import load_checkpoint
    from .metrics import count_params

    model = load_checkpoint(args.checkpoint)
    total, groups = count_params(model)
    print(f"parameters: {total} " + " ".join(f"{k}={v}" for k, v in groups.items()))
    with torch.no_grad():
        for i, layer in enumerate(model.layers):
            lam = layer.lambdas().numpy()
            eta = layer.eta().numpy()
            print(f"layer {i}: H={lam.size} mode={layer.mode.value} "
                  f"Re(lambda) [{lam.real.min():.4g}, {lam.real.max():.4g}] "
                  f"Im(lambda) [{lam.imag.min():.4g}, {lam.imag.max():.4g}] "
                  f"eta [{eta.min():.4g}, {eta.max():.4g}]")
        tau = model.readout.log_tau.exp().numpy()
        print(f"readout: tau [{tau.min():.4g}, {tau.max():.4g}]")


def cmd_convert(args):
    from .data import csv_to_evsq

    seq = csv_to_evsq(args.csv, args.out, duration=args.duration, num_bins=args.bins,
                      num_channels=args.channels, label=args.label, pool=args.pool)
    print(f"wrote {args.out}: L={seq.shape[0]} C={seq.shape[1]} events={int(seq.raster.sum())}")


def cmd_gradcheck(args):
    from .data import load_datasets
    from .layers import S5RFModel
    from .training import grad_check

    cfg = load_config(args.config)
    cfg.data.train_samples = max(args.samples, 1)
    cfg.data.test_samples = 1
    train, _ = load_datasets(cfg.data, cfg.model.num_classes, cfg.train.seed)
    model = S5RFModel(cfg.model, dtype=torch.float64)
    if model.cfg.activation == "spike":
        # the hard threshold has no derivative to compare against
        model.set_activation("smooth")
    batch = train.to(torch.float64)
    err = grad_check(model, (batch.inputs[:args.samples], batch.soft_labels[:args.samples]),
                     epsilon=args.epsilon, n_params=args.n_params, seed=cfg.train.seed)
    print(f"max relative error {err:.3e} over {args.n_params} scalars (activation={model.cfg.activation})")
    if not np.isfinite(err) or err > args.tol:
        raise NumericFailureError(f"gradient check failed: {err:.3e} > {args.tol:.1e}", residual=err)


def cmd_synth(args):
    from .data import gen_synthetic_freq_task

    if args.task != "freq":
        raise InvalidConfigError(f"unknown synthetic task {args.task!r}")
    for split, n, seed in (("train", args.train, args.seed), ("test", args.test, args.seed + 1)):
        m = gen_synthetic_freq_task(args.classes, args.length, args.channels, n, seed, args.out, split)
        print(f"{split}: {len(m.items)} sequences -> {args.out}/{split}.tsv")


def build_parser():
    p = argparse.ArgumentParser(
        prog="s5rf", description="Spiking SSM training and analysis tools.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config file defaults (TOML):\n\n" + format_defaults(),
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    d = argparse.ArgumentDefaultsHelpFormatter

    s = sub.add_parser("train", help="train from a config file", formatter_class=d)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--target", type=float, default=None, help="stop once test accuracy reaches this")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a manifest", formatter_class=d)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="manifest .tsv")
    s.add_argument("--convention", choices=["spikes", "fanout"], default="spikes")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", help="parameter and eigenvalue summary", formatter_class=d)
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("convert", help="(time_us, channel) CSV to EVSQ", formatter_class=d)
    s.add_argument("--csv", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--duration", type=float, required=True, help="recording length in microseconds")
    s.add_argument("--bins", type=int, default=250, help="time steps T")
    s.add_argument("--channels", type=int, default=700, help="input channels C before pooling")
    s.add_argument("--pool", type=int, default=5, help="OR-pooling factor over channels")
    s.add_argument("--label", type=int, default=None)
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("gradcheck", help="autograd vs finite differences", formatter_class=d)
    s.add_argument("--config", required=True)
    s.add_argument("--samples", type=int, default=2)
    s.add_argument("--n-params", type=int, default=100)
    s.add_argument("--epsilon", type=float, default=1e-6)
    s.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic dataset", formatter_class=d)
    s.add_argument("--task", default="freq")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--length", type=int, default=128)
    s.add_argument("--channels", type=int, default=8)
    s.add_argument("--train", type=int, default=2000)
    s.add_argument("--test", type=int, default=400)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        args.func(args)
    except (InvalidConfigError, InvalidInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailureError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
