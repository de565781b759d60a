"""Loss, grouped Adam, cosine schedule, BPTT epochs and gradient checking."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, TrainConfig, to_dict
from .errors import InvalidInputError, NumericFailureError

log = logging.getLogger(__name__)

NEURON_PARAMS = ("log_neg_real", "freq", "log_eta", "log_tau")
MIN_DECAY = 1e-4


def cross_entropy_loss(logits, labels):
    """Mean over the batch of ``-sum(labels * log_softmax(logits))``.

    ``labels`` may be soft (rows on the simplex) or integer class indices.
    """
    if labels.dtype in (torch.int32, torch.int64):
        labels = torch.nn.functional.one_hot(labels, logits.shape[-1]).to(logits.dtype)
    if labels.shape != logits.shape:
        raise InvalidInputError(f"labels {tuple(labels.shape)} do not match logits {tuple(logits.shape)}")
    sums = labels.sum(-1)
    if not torch.allclose(sums, torch.ones_like(sums), atol=1e-6, rtol=0):
        raise InvalidInputError("label rows must sum to 1")
    return -(labels * torch.log_softmax(logits, dim=-1)).sum(-1).mean()


def cosine_lr(step, total, lr_max, lr_min=0.0):
    if total <= 0:
        return lr_max
    step = min(max(step, 0), total)
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * step / total))


@dataclass
class ParamGroup:
    name: str
    members: list
    lr: float
    weight_decay: float
    names: list = field(default_factory=list)
    base_lr: float = None

    def __post_init__(self):
        if self.base_lr is None:
            self.base_lr = self.lr


def param_groups(model, cfg: TrainConfig):
    """Split a model's parameters into connection / neuron / encoder / readout groups.

    Only the neuron group is exempt from weight decay. Frozen parameters
    (``fix_eta``) are left out entirely.
    """
    buckets = {"connections": [], "neuron": [], "encoder": [], "readout": []}
    for name, p in model.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if cfg.ablation.fix_eta and leaf == "log_eta":
            continue
        if leaf in NEURON_PARAMS:
            key = "neuron"
        elif name.startswith("encoder."):
            key = "encoder"
        elif name.startswith("readout."):
            key = "readout"
        else:
            key = "connections"
        buckets[key].append((name, p))
    groups = []
    for key, items in buckets.items():
        if not items:
            continue
        neuron = key == "neuron"
        groups.append(ParamGroup(
            name=key,
            members=[p for _, p in items],
            names=[n for n, _ in items],
            lr=cfg.lr_neuron if neuron else cfg.lr_connections,
            weight_decay=0.0 if neuron else cfg.weight_decay,
        ))
    return groups


def adam_step(groups, grads, state, t, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update with bias correction and decoupled weight decay.

    ``grads`` maps each parameter to its gradient (``None`` skips it);
    ``state`` maps each parameter to its ``(m, v)`` moments and is updated
    in place. ``t`` is the 1-based step count.
    """
    b1, b2 = betas
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    with torch.no_grad():
        for g in groups:
            for p in g.members:
                grad = grads.get(p)
                if grad is None:
                    continue
                m, v = state.get(p, (torch.zeros_like(p), torch.zeros_like(p)))
                m.mul_(b1).add_(grad, alpha=1 - b1)
                v.mul_(b2).addcmul_(grad, grad, value=1 - b2)
                state[p] = (m, v)
                if g.weight_decay:
                    p.mul_(1 - g.lr * g.weight_decay)
                denom = (v / c2).sqrt_().add_(eps)
                p.addcdiv_(m, denom, value=-g.lr / c1)
    return state


class Adam:
    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8):
        self.groups = groups
        self.betas = betas
        self.eps = eps
        self.state = {}
        self.t = 0

    def step(self):
        self.t += 1
        grads = {p: p.grad for g in self.groups for p in g.members}
        adam_step(self.groups, grads, self.state, self.t, self.betas, self.eps)

    def zero_grad(self):
        for g in self.groups:
            for p in g.members:
                p.grad = None

    def set_schedule(self, step, total, min_lr=0.0, warmup=0):
        for g in self.groups:
            if warmup and step < warmup:
                g.lr = g.base_lr * (step + 1) / warmup
            else:
                g.lr = cosine_lr(step - warmup, total - warmup, g.base_lr, min(min_lr, g.base_lr))

    def state_arrays(self):
        """Flat dict of moment arrays for checkpointing."""
        out = {}
        for g in self.groups:
            for name, p in zip(g.names, g.members):
                if p in self.state:
                    m, v = self.state[p]
                    out[f"adam.m.{name}"] = m.detach().cpu().numpy()
                    out[f"adam.v.{name}"] = v.detach().cpu().numpy()
        return out


def grad_norms(groups):
    out = {}
    for g in groups:
        sq = sum(float((p.grad.detach() ** 2).sum()) for p in g.members if p.grad is not None)
        out[g.name] = math.sqrt(sq)
    return out


def clip_grad_norm(groups, max_norm):
    params = [p for g in groups for p in g.members if p.grad is not None]
    total = math.sqrt(sum(float((p.grad.detach() ** 2).sum()) for p in params))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad.mul_(scale)
    return total


def project_decay(model):
    """Keep every layer decay at or above MIN_DECAY."""
    with torch.no_grad():
        for layer in model.layers:
            layer.log_neg_real.clamp_(min=math.log(MIN_DECAY))


class Trainer:
    """Owns the optimiser state and runs BPTT epochs over a dataset."""

    def __init__(self, model, cfg: TrainConfig, steps_per_epoch: int):
        self.model = model
        self.cfg = cfg.validate()
        self.groups = param_groups(model, cfg)
        self.opt = Adam(self.groups, tuple(cfg.betas), cfg.eps)
        self.steps_per_epoch = steps_per_epoch
        self.total_steps = max(cfg.epochs * steps_per_epoch, 1)
        self.step = 0
        self.epoch = 0

    def train_epoch(self, data):
        from .data import augment_batch

        cfg = self.cfg
        model = self.model
        model.train()
        rng = np.random.default_rng([cfg.seed, self.epoch, 7])
        order = rng.permutation(len(data))
        tot_loss = tot_correct = tot_spikes = 0.0
        n_seen = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = data.inputs[idx], data.soft_labels[idx]
            x, y = augment_batch(x, y, idx, self.epoch, cfg)
            self.opt.set_schedule(self.step, self.total_steps, cfg.min_lr, cfg.warmup_steps)
            logits, spikes = model(x, return_spikes=True)
            loss = cross_entropy_loss(logits, y)
            self.opt.zero_grad()
            loss.backward()
            if not torch.isfinite(loss):
                raise NumericFailureError(
                    f"non-finite loss at step {self.step}",
                    diagnostics={"step": self.step, "grad_norms": grad_norms(self.groups)},
                )
            if cfg.clip_norm:
                clip_grad_norm(self.groups, cfg.clip_norm)
            self.opt.step()
            if cfg.ablation.enforce_positive_decay:
                project_decay(model)
            self.step += 1
            n = len(idx)
            n_seen += n
            tot_loss += float(loss.detach()) * n
            tot_correct += float((logits.argmax(-1) == y.argmax(-1)).sum())
            tot_spikes += float(sum(s.detach().sum() for s in spikes))
        self.epoch += 1
        self._check_finite()
        return {"loss": tot_loss / n_seen, "accuracy": tot_correct / n_seen, "sops": tot_spikes / n_seen}

    def _check_finite(self):
        for name, p in self.model.named_parameters():
            if not torch.isfinite(p).all():
                raise NumericFailureError(f"parameter {name} became non-finite after epoch {self.epoch}")


def fit(model, train_data, test_data, run_cfg: RunConfig, out_dir=None, target_accuracy=None,
        checkpoint_every=0, progress=None):
    """Train for ``run_cfg.train.epochs`` epochs, evaluating after each.

    Writes the run directory layout (config snapshot, metrics CSV, seed
    record, checkpoints) when ``out_dir`` is given. Stops early once the
    test accuracy reaches ``target_accuracy``.
    """
    from .checkpoint import save_checkpoint
    from .metrics import evaluate

    cfg = run_cfg.train
    steps = math.ceil(len(train_data) / cfg.batch_size)
    trainer = Trainer(model, cfg, steps)
    history = []
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(to_dict(run_cfg), indent=2, sort_keys=True))
        (out / "seed.txt").write_text(f"model_seed={run_cfg.model.seed}\ntrain_seed={cfg.seed}\n")
        with open(out / "metrics.csv", "w", newline="") as fh:
            csv.writer(fh).writerow(["epoch", "train_loss", "train_acc", "val_acc", "sops", "lr"])
    for epoch in range(cfg.epochs):
        t0 = time.time()
        tr = trainer.train_epoch(train_data)
        lr = trainer.groups[0].lr
        ev = evaluate(model, test_data) if test_data is not None else None
        row = {
            "epoch": epoch + 1,
            "train_loss": tr["loss"],
            "train_acc": tr["accuracy"],
            "val_acc": ev["accuracy"] if ev else float("nan"),
            "sops": ev["sops"].total_sops if ev else tr["sops"],
            "lr": lr,
            "seconds": time.time() - t0,
        }
        history.append(row)
        log.info("epoch %d loss %.4f train %.3f val %.3f (%.1fs)", row["epoch"], row["train_loss"],
                 row["train_acc"], row["val_acc"], row["seconds"])
        if progress:
            progress(row)
        if out:
            with open(out / "metrics.csv", "a", newline="") as fh:
                csv.writer(fh).writerow([row[k] for k in ("epoch", "train_loss", "train_acc", "val_acc", "sops", "lr")])
            if checkpoint_every and (epoch + 1) % checkpoint_every == 0:
                save_checkpoint(out / f"epoch{epoch + 1:03d}.ckpt", model)
        if target_accuracy is not None and ev and ev["accuracy"] >= target_accuracy:
            break
    if out:
        save_checkpoint(out / "final.ckpt", model)
    return history


def _flat_params(model):
    return [(n, p) for n, p in model.named_parameters()]


def grad_check(model, sample, epsilon=1e-6, n_params=100, seed=0, floor=1e-6):
    """Compare autograd gradients to central differences on random scalars.

    The relative error of one scalar is ``|g - g_fd| / max(|g|, |g_fd|, floor)``;
    ``floor`` keeps gradients that are numerically zero from dividing by
    round-off. Returns the maximum over the sampled scalars. The model must
    already be in double precision.
    """
    u, labels = sample
    params = _flat_params(model)
    if any(p.dtype != torch.float64 for _, p in params):
        raise InvalidInputError("grad_check requires a float64 model")
    sizes = [p.numel() for _, p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_params, total), replace=False)

    def loss_fn():
        return cross_entropy_loss(model(u), labels)

    model.zero_grad()
    loss_fn().backward()
    grads = torch.cat([p.grad.reshape(-1) for _, p in params]).detach().clone()
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            p = params[i][1].view(-1)
            j = int(flat - offsets[i])
            orig = p[j].item()
            p[j] = orig + epsilon
            up = loss_fn().item()
            p[j] = orig - epsilon
            down = loss_fn().item()
            p[j] = orig
            fd = (up - down) / (2 * epsilon)
            g = grads[flat].item()
            err = abs(g - fd) / max(abs(g), abs(fd), floor)
            worst = max(worst, err)
    return worst
