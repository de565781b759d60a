"""Reference experiment configurations and a small driver shared by the
scripts and the acceptance suite."""
from __future__ import annotations

import time

import torch

from .config import AblationConfig, DataConfig, ModelConfig, RunConfig, TrainConfig
from .data import load_datasets
from .layers import S5RFModel
from .training import fit


def synthetic_config(seed=0, epochs=30, *, init="hippo", fix_eta=False) -> RunConfig:
    """4-class resonance task, C=8, L=128, one 32-neuron layer."""
    model = ModelConfig(input_dim=8, layer_sizes=[32], block_size=32, num_classes=4, seed=seed,
                        init=init, scan_mode="sequential")
    train = TrainConfig(lr_connections=1e-2, lr_neuron=1e-2, epochs=epochs, batch_size=32, seed=seed,
                        ablation=AblationConfig(fix_eta=fix_eta))
    data = DataConfig(task="freq", train_samples=2000, test_samples=400, seq_len=128, channels=8)
    return RunConfig(model=model, train=train, data=data).validate()


def smnist_config(seed=0, epochs=20, permute=False) -> RunConfig:
    """(1,128x2,10) on pixel streams, ZOH first layer.

    The bundled MNIST sample holds 5000 images, so the split is 4000/1000.
    """
    model = ModelConfig(
        input_dim=1, layer_sizes=[128, 128], block_size=32, num_classes=10,
        first_layer_mode="zoh", seed=seed, eta_init="log_uniform", eta_min=1e-3, eta_max=1e-1,
        scan_mode="sequential",
    )
    train = TrainConfig(lr_connections=4e-3, lr_neuron=2e-3, weight_decay=0.01, epochs=epochs,
                        batch_size=32, seed=seed, warmup_steps=100)
    data = DataConfig(task="smnist", train_samples=4000, test_samples=1000, seq_len=784, channels=1,
                      permute=permute)
    return RunConfig(model=model, train=train, data=data).validate()


def run(cfg: RunConfig, out_dir=None, target_accuracy=None, data=None):
    """Train one configuration; returns ``(model, history, seconds, (train, test))``.

    ``data`` may pass pre-built datasets to skip regeneration.
    """
    torch.manual_seed(cfg.train.seed)
    train, test = data if data is not None else load_datasets(cfg.data, cfg.model.num_classes, cfg.train.seed)
    model = S5RFModel(cfg.model)
    t0 = time.time()
    hist = fit(model, train, test, cfg, out_dir=out_dir, target_accuracy=target_accuracy)
    return model, hist, time.time() - t0, (train, test)

