"""Spiking-operation and parameter accounting, raster export, evaluation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .training import cross_entropy_loss

CONVENTIONS = ("spikes", "fanout")


@dataclass
class SopReport:
    per_layer_spikes: list  # mean spikes per sample, one entry per S5-RF layer
    total_sops: float
    convention: str = "spikes"
    per_layer_sops: list = field(default_factory=list)
    samples: int = 0


def _fanouts(model):
    widths = [layer.size for layer in model.layers[1:]] + [model.cfg.num_classes]
    return widths


def sop_report(spike_counts, samples, fanouts, convention="spikes"):
    """Build a report from exact integer spike tallies per layer."""
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown SOP convention {convention!r}")
    counts = [int(c) for c in spike_counts]
    mult = fanouts if convention == "fanout" else [1] * len(counts)
    sops = [c * m for c, m in zip(counts, mult)]
    n = max(samples, 1)
    return SopReport(
        per_layer_spikes=[c / n for c in counts],
        total_sops=sum(sops) / n,
        convention=convention,
        per_layer_sops=[s / n for s in sops],
        samples=samples,
    )


@torch.no_grad()
def _run(model, dataset, batch_size):
    counts = np.zeros(len(model.layers), dtype=np.int64)
    logits_all = []
    for start in range(0, len(dataset), batch_size):
        x = dataset.inputs[start:start + batch_size]
        logits, spikes = model(x, return_spikes=True)
        for i, s in enumerate(spikes):
            counts[i] += int(s.to(torch.int64).sum()) if model.cfg.activation == "spike" else 0
        logits_all.append(logits)
    return torch.cat(logits_all), counts


def count_sops(model, dataset, convention="spikes", batch_size=256) -> SopReport:
    model.eval()
    _, counts = _run(model, dataset, batch_size)
    return sop_report(counts, len(dataset), _fanouts(model), convention)


def evaluate(model, dataset, batch_size=256, convention="spikes"):
    """Accuracy of argmax(logits) against argmax(label), mean CE loss and SOPs."""
    model.eval()
    logits, counts = _run(model, dataset, batch_size)
    labels = dataset.soft_labels.to(logits.dtype)
    acc = float((logits.argmax(-1) == labels.argmax(-1)).to(torch.float64).mean())
    loss = float(cross_entropy_loss(logits, labels))
    return {"accuracy": acc, "loss": loss,
            "sops": sop_report(counts, len(dataset), _fanouts(model), convention)}


def count_params(model):
    """Learnable real scalars by group (complex weights count twice via re/im).

    ``neuron`` holds the per-state SSM scalars; the readout time constants are
    counted with the readout weights.
    """
    groups = {"encoder": 0, "connections": 0, "neuron": 0, "readout": 0}
    for name, p in model.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("log_neg_real", "freq", "log_eta"):
            key = "neuron"
        elif name.startswith("encoder."):
            key = "encoder"
        elif name.startswith("readout."):
            key = "readout"
        else:
            key = "connections"
        groups[key] += p.numel()
    return sum(groups.values()), groups


def export_raster(spikes, path, image=True, title=None):
    """Write spike coordinates to ``<path>.csv`` and a raster plot to ``<path>.png``."""
    spikes = np.asarray(spikes.detach().cpu() if torch.is_tensor(spikes) else spikes)
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    steps, neurons = np.nonzero(spikes)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "neuron"])
        w.writerows(zip(steps.tolist(), neurons.tolist()))
    png_path = None
    if image:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 3))
        ax.scatter(steps, neurons, s=2, marker="|", color="k")
        ax.set_xlim(-0.5, spikes.shape[0] - 0.5)
        ax.set_ylim(-0.5, spikes.shape[1] - 0.5)
        ax.set_xlabel("step")
        ax.set_ylabel("neuron")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        png_path = path.with_suffix(".png")
        fig.savefig(png_path, dpi=100)
        plt.close(fig)
    return csv_path, png_path


def read_raster_csv(path, shape):
    raster = np.zeros(shape, dtype=np.uint8)
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for k, i in rows:
            raster[int(k), int(i)] = 1
    return raster
