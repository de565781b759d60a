"""Event rasters: preprocessing, augmentation, file formats and datasets.

EVSQ layout (all integers little-endian)::

    b"EVSQ" | version u16 | L u32 | C u32 | label u16
    [if label == 0xFFFF: K u16 | K x f32 soft label]
    ceil(L*C/8) bytes: row-major raster, bit-packed LSB first

Label 0xFFFE marks an unlabeled sequence, so hard labels stop at 0xFFFD.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from .errors import InvalidConfigError, InvalidInputError

EVSQ_MAGIC = b"EVSQ"
EVSQ_VERSION = 1
SOFT_LABEL = 0xFFFF
NO_LABEL = 0xFFFE


@dataclass
class EventSequence:
    raster: np.ndarray  # (L, C) uint8 in {0, 1}
    label: Union[int, np.ndarray, None] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.raster = np.asarray(self.raster, dtype=np.uint8)
        if self.raster.ndim != 2 or 0 in self.raster.shape:
            raise InvalidInputError(f"raster must be a non-empty (L, C) array, got {self.raster.shape}")
        if self.raster.max(initial=0) > 1:
            raise InvalidInputError("raster entries must be 0 or 1")

    @property
    def shape(self):
        return self.raster.shape

    def label_vector(self, num_classes):
        if self.label is None:
            raise InvalidInputError("sequence has no label")
        if np.ndim(self.label) == 0:
            v = np.zeros(num_classes)
            v[int(self.label)] = 1.0
            return v
        return np.asarray(self.label, dtype=np.float64)


@dataclass
class DatasetManifest:
    items: list  # [(path, label)]
    num_channels: int
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        for path, label in self.items:
            if not 0 <= int(label) < self.num_classes:
                raise InvalidInputError(f"label {label} of {path} outside [0, {self.num_classes})")


# preprocessing --------------------------------------------------------------

def bin_events(raw, num_bins: int, duration: float, num_channels: int) -> EventSequence:
    """Bin ``(time, channel)`` events into a binary raster.

    Bins are left-closed: bin k covers ``[duration*k/T, duration*(k+1)/T)``.
    Several events in one bin and channel still produce a single 1.
    """
    raster = np.zeros((num_bins, num_channels), dtype=np.uint8)
    for t, c in raw:
        t, c = float(t), int(c)
        if not 0 <= t < duration:
            raise InvalidInputError(f"event time {t} outside [0, {duration})")
        if not 0 <= c < num_channels:
            raise InvalidInputError(f"channel {c} outside [0, {num_channels})")
        k = int(math.floor(t * num_bins / duration))
        if k + 1 < num_bins and duration * (k + 1) / num_bins <= t:
            k += 1
        elif k > 0 and duration * k / num_bins > t:
            k -= 1
        raster[min(k, num_bins - 1), c] = 1
    return EventSequence(raster, meta={"duration": duration, "events": len(raw)})


def pool_channels(seq: EventSequence, factor: int, mode: str = "or", min_count: int = 1) -> EventSequence:
    """Merge consecutive groups of ``factor`` channels.

    ``"or"`` fires if any channel in the group fired, ``"count"`` if at least
    ``min_count`` did, and ``"stride"`` keeps only the first channel of each group.
    """
    L, C = seq.shape
    if factor < 1 or C % factor:
        raise InvalidConfigError(f"pool factor {factor} does not divide {C} channels")
    groups = seq.raster.reshape(L, C // factor, factor)
    if mode == "or":
        pooled = groups.max(axis=2)
    elif mode == "count":
        pooled = (groups.sum(axis=2) >= min_count).astype(np.uint8)
    elif mode == "stride":
        pooled = groups[:, :, 0]
    else:
        raise InvalidConfigError(f"unknown pooling mode {mode!r}")
    return EventSequence(np.ascontiguousarray(pooled), seq.label, dict(seq.meta))


def shift_raster(raster, shift: int):
    """Move every channel by ``shift``; channels pushed off the edge are lost."""
    out = np.zeros_like(raster)
    C = raster.shape[-1]
    if abs(shift) >= C:
        return out
    if shift > 0:
        out[..., shift:] = raster[..., : C - shift]
    elif shift < 0:
        out[..., : C + shift] = raster[..., -shift:]
    else:
        out[...] = raster
    return out


def channel_shift(seq: EventSequence, max_shift: int, prob: float, rng) -> EventSequence:
    if not 0 <= prob <= 1:
        raise InvalidConfigError("prob must lie in [0, 1]")
    if rng.random() >= prob:
        return seq
    shift = int(rng.integers(-max_shift, max_shift + 1))
    return EventSequence(shift_raster(seq.raster, shift), seq.label, dict(seq.meta, shift=shift))


def cutmix_label(a_raster, b_raster, k1, k2, label_a, label_b):
    kept = float(a_raster.sum() - a_raster[k1:k2].sum())
    inserted = float(b_raster[k1:k2].sum())
    if kept + inserted == 0:
        return np.asarray(label_a, dtype=np.float64)
    return (kept * np.asarray(label_a) + inserted * np.asarray(label_b)) / (kept + inserted)


def cutmix_events(a: EventSequence, b: EventSequence, rng=None, num_classes=None, interval=None) -> EventSequence:
    """Replace a random time interval of ``a`` with the same interval of ``b``.

    The soft label weights each source by its share of spikes in the result;
    with no spikes at all the label of ``a`` is kept.
    """
    if a.shape != b.shape:
        raise InvalidInputError(f"cutmix needs equal shapes, got {a.shape} and {b.shape}")
    L = a.shape[0]
    if interval is None:
        k1, k2 = sorted(int(k) for k in rng.integers(0, L + 1, size=2))
    else:
        k1, k2 = interval
    if num_classes is None:
        num_classes = len(a.label) if np.ndim(a.label) else max(int(a.label), int(b.label)) + 1
    la, lb = a.label_vector(num_classes), b.label_vector(num_classes)
    mixed = a.raster.copy()
    mixed[k1:k2] = b.raster[k1:k2]
    label = cutmix_label(a.raster, b.raster, k1, k2, la, lb)
    return EventSequence(mixed, label, dict(a.meta, cutmix=(k1, k2)))


def rasterize_pixel_stream(image) -> np.ndarray:
    """Row-major flatten of a 28x28 image into a (784, 1) amplitude sequence."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (28, 28):
        raise InvalidInputError(f"expected a 28x28 image, got {image.shape}")
    return image.reshape(784, 1)


def check_permutation(permutation, length=None):
    perm = np.asarray(permutation, dtype=np.int64)
    n = length if length is not None else perm.shape[0]
    if perm.ndim != 1 or perm.shape[0] != n or not np.array_equal(np.sort(perm), np.arange(n)):
        raise InvalidConfigError("permutation must be a bijection on the sequence indices")
    return perm


def permute_pixels(seq, permutation):
    seq = np.asarray(seq)
    perm = check_permutation(permutation, seq.shape[0])
    return seq[perm]


def fixed_permutation(length=784, seed=0):
    return np.random.default_rng(seed).permutation(length)


# synthetic task ---------------------------------------------------------------

def class_frequencies(num_classes: int) -> np.ndarray:
    """Angular frequencies (rad/step) evenly spread inside [0.05, 0.5] cycles/step."""
    centres = 0.05 + 0.45 * (np.arange(num_classes) + 0.5) / num_classes
    return 2 * np.pi * centres


def synthetic_freq_arrays(num_classes, length, channels, samples, seed, peak_rate=0.5):
    """Rasters whose per-step event probability is modulated at a class frequency.

    Class k fires each channel independently with probability
    ``peak_rate * (1 + sin(omega_k * t + phase)) / 2``; the phase is random per
    sample. Classes are assigned round-robin.
    """
    if num_classes < 2:
        raise InvalidConfigError("need at least two classes")
    rng = np.random.default_rng(seed)
    labels = np.arange(samples) % num_classes
    omegas = class_frequencies(num_classes)[labels]
    phases = rng.uniform(0, 2 * np.pi, size=samples)
    t = np.arange(length)
    rate = peak_rate * 0.5 * (1 + np.sin(omegas[:, None] * t[None, :] + phases[:, None]))
    rasters = (rng.random((samples, length, channels)) < rate[:, :, None]).astype(np.uint8)
    return rasters, labels


def gen_synthetic_freq_task(num_classes, length, channels, samples, seed, out_dir, split="train"):
    """Write the synthetic task as EVSQ files plus a manifest; return the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rasters, labels = synthetic_freq_arrays(num_classes, length, channels, samples, seed)
    items = []
    for i, (r, y) in enumerate(zip(rasters, labels)):
        name = f"{split}_{i:06d}.evsq"
        write_evsq(out_dir / name, EventSequence(r, int(y)))
        items.append((name, int(y)))
    manifest = DatasetManifest(items, channels, num_classes, split)
    write_manifest(out_dir / f"{split}.tsv", manifest)
    return manifest


# file formats -------------------------------------------------------------------

def encode_evsq(seq: EventSequence) -> bytes:
    L, C = seq.shape
    parts = [EVSQ_MAGIC, struct.pack("<HII", EVSQ_VERSION, L, C)]
    if seq.label is None or np.ndim(seq.label) == 0:
        label = NO_LABEL if seq.label is None else int(seq.label)
        if seq.label is not None and not 0 <= label < NO_LABEL:
            raise InvalidInputError(f"integer label {label} does not fit in u16")
        parts.append(struct.pack("<H", label))
    else:
        soft = np.asarray(seq.label, dtype="<f4")
        parts.append(struct.pack("<HH", SOFT_LABEL, soft.shape[0]))
        parts.append(soft.tobytes())
    parts.append(np.packbits(seq.raster.reshape(-1), bitorder="little").tobytes())
    return b"".join(parts)


def decode_evsq(data: bytes) -> EventSequence:
    if data[:4] != EVSQ_MAGIC:
        raise InvalidInputError("not an EVSQ file (bad magic)")
    version, L, C = struct.unpack_from("<HII", data, 4)
    if version != EVSQ_VERSION:
        raise InvalidInputError(f"unsupported EVSQ version {version}")
    off = 14
    (label,) = struct.unpack_from("<H", data, off)
    off += 2
    if label == SOFT_LABEL:
        (k,) = struct.unpack_from("<H", data, off)
        off += 2
        label = np.frombuffer(data, dtype="<f4", count=k, offset=off).copy()
        off += 4 * k
    elif label == NO_LABEL:
        label = None
    nbytes = (L * C + 7) // 8
    if len(data) - off != nbytes:
        raise InvalidInputError(f"EVSQ payload has {len(data) - off} bytes, expected {nbytes}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=off), count=L * C, bitorder="little")
    return EventSequence(bits.reshape(L, C), label)


def write_evsq(path, seq: EventSequence):
    Path(path).write_bytes(encode_evsq(seq))


def read_evsq(path) -> EventSequence:
    seq = decode_evsq(Path(path).read_bytes())
    seq.meta["source"] = str(path)
    return seq


def write_manifest(path, manifest: DatasetManifest):
    lines = [f"{p}\t{int(y)}" for p, y in manifest.items]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_manifest(path, num_classes=None, split=None) -> DatasetManifest:
    path = Path(path)
    items = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            p, y = line.split("\t")
            items.append((p, int(y)))
        except ValueError:
            raise InvalidInputError(f"{path}:{n}: expected 'path<TAB>label'") from None
    if not items:
        raise InvalidInputError(f"manifest {path} is empty")
    first = read_evsq(path.parent / items[0][0])
    k = num_classes if num_classes is not None else max(y for _, y in items) + 1
    return DatasetManifest(items, first.shape[1], k, split or path.stem)


def load_manifest_dataset(path, num_classes=None) -> "EventDataset":
    path = Path(path)
    m = read_manifest(path, num_classes)
    rasters = np.stack([read_evsq(path.parent / p).raster for p, _ in m.items])
    return EventDataset.from_arrays(rasters, np.array([y for _, y in m.items]), m.num_classes)


def csv_to_evsq(csv_path, out_path, duration, num_bins, num_channels, label=None, pool=1):
    """Convert ``time_us,channel`` rows (optional header) into one EVSQ file."""
    raw = []
    with open(csv_path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                raw.append((float(row[0]), int(row[1])))
            except ValueError:
                if raw:
                    raise InvalidInputError(f"bad CSV row {row!r}") from None
    seq = bin_events(raw, num_bins, duration, num_channels)
    if pool > 1:
        seq = pool_channels(seq, pool)
    seq.label = label
    write_evsq(out_path, seq)
    return seq


# in-memory datasets ---------------------------------------------------------------

@dataclass
class EventDataset:
    inputs: torch.Tensor  # (N, L, C) float
    soft_labels: torch.Tensor  # (N, K) float

    @classmethod
    def from_arrays(cls, inputs, labels, num_classes, dtype=torch.float32):
        labels = np.asarray(labels)
        if labels.ndim == 1:
            soft = np.eye(num_classes)[labels]
        else:
            soft = labels
        return cls(torch.as_tensor(np.asarray(inputs), dtype=dtype), torch.as_tensor(soft, dtype=dtype))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def targets(self):
        return self.soft_labels.argmax(-1)

    def subset(self, idx):
        return EventDataset(self.inputs[idx], self.soft_labels[idx])

    def to(self, dtype):
        return EventDataset(self.inputs.to(dtype), self.soft_labels.to(dtype))


def sample_rng(seed, index, epoch):
    """Per-sample generator so augmentation ignores batching and worker order."""
    return np.random.default_rng([int(seed), int(index), int(epoch)])


def augment_batch(x, y, idx, epoch, cfg):
    """Training-time channel shift and in-batch event cutmix."""
    if not (cfg.channel_shift or cfg.cutmix):
        return x, y
    xs = x.numpy().copy()
    ys = y.numpy().copy()
    src_x, src_y = xs.copy(), ys.copy()
    for i, sample in enumerate(idx):
        rng = sample_rng(cfg.seed, sample, epoch)
        if cfg.channel_shift and rng.random() < cfg.channel_shift_prob:
            xs[i] = shift_raster(xs[i], int(rng.integers(-cfg.max_shift, cfg.max_shift + 1)))
        if cfg.cutmix and len(idx) > 1 and rng.random() < cfg.cutmix_prob:
            j = (i + 1 + int(rng.integers(len(idx) - 1))) % len(idx)
            L = xs.shape[1]
            k1, k2 = sorted(int(k) for k in rng.integers(0, L + 1, size=2))
            label = cutmix_label(xs[i], src_x[j], k1, k2, ys[i], src_y[j])
            xs[i, k1:k2] = src_x[j, k1:k2]
            ys[i] = label
    return torch.from_numpy(xs), torch.from_numpy(ys)


def load_mnist_subset(train=5000, test=1000, seed=0, permute=False):
    """sMNIST-style pixel streams from the 5k MNIST sample bundled with mlxtend.

    Returns ``(train_ds, test_ds)`` with inputs of shape (N, 784, 1) in [0, 1].
    The bundled sample has 5000 images, so ``train + test`` may not exceed it.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # optional dependency
        raise InvalidConfigError("the MNIST subset needs the optional 'mlxtend' package") from exc
    images, labels = mnist_data()
    if train + test > len(images):
        raise InvalidConfigError(f"only {len(images)} images available, asked for {train + test}")
    order = np.random.default_rng(seed).permutation(len(images))
    images = images[order].astype(np.float64) / 255.0
    labels = labels[order]
    seqs = np.stack([rasterize_pixel_stream(im.reshape(28, 28)) for im in images])
    if permute:
        perm = fixed_permutation(784, seed)
        seqs = seqs[:, perm]
    tr = EventDataset.from_arrays(seqs[:train], labels[:train], 10)
    te = EventDataset.from_arrays(seqs[train:train + test], labels[train:train + test], 10)
    return tr, te


def load_datasets(data_cfg, num_classes, seed=0):
    """Train and test sets for a ``DataConfig``."""
    if data_cfg.task == "freq":
        tr_seed, te_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
        tr = synthetic_freq_arrays(num_classes, data_cfg.seq_len, data_cfg.channels, data_cfg.train_samples, tr_seed)
        te = synthetic_freq_arrays(num_classes, data_cfg.seq_len, data_cfg.channels, data_cfg.test_samples, te_seed)
        return EventDataset.from_arrays(*tr, num_classes), EventDataset.from_arrays(*te, num_classes)
    if data_cfg.task == "manifest":
        if not data_cfg.train_manifest:
            raise InvalidConfigError("task 'manifest' needs train_manifest")
        tr = load_manifest_dataset(data_cfg.train_manifest, num_classes)
        te = load_manifest_dataset(data_cfg.test_manifest, num_classes) if data_cfg.test_manifest else None
        return tr, te
    if data_cfg.task == "smnist":
        return load_mnist_subset(data_cfg.train_samples, data_cfg.test_samples, seed=seed,
                                 permute=data_cfg.permute)
    raise InvalidConfigError(f"unknown data task {data_cfg.task!r}")
