"""Datasets, splits, client partitioning, and batch iteration.

The default task is a seeded synthetic 10-class 32x32x3 image problem:
each class owns a smooth random texture with class-specific per-channel
gains, and samples are noisy draws around it. A loader for the common
pickled 32x32 image-batch archive layout is included for real-data runs;
nothing is ever downloaded.
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SOURCES = ("synthetic_gaussian_blobs", "small_image_set")


@dataclass
class DatasetSpec:
    source: str = "synthetic_gaussian_blobs"
    classes: int = 10
    samples_per_class: int = 60
    image_size: tuple = (3, 32, 32)
    ratios: tuple = (0.70, 0.15, 0.15)
    noise: float = 1.0
    path: str | None = None  # archive directory for small_image_set

    def validate(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown dataset source {self.source!r}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {self.ratios}")
        if min(self.ratios) < 0:
            raise ValueError("split ratios must be non-negative")
        return self


@dataclass
class Dataset:
    x: np.ndarray  # (N, C, H, W) float64, normalized
    y: np.ndarray  # (N,) int64
    train_idx: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    val_idx: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    test_idx: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))


def _upsample(block: np.ndarray, factor: int) -> np.ndarray:
    return np.kron(block, np.ones((factor, factor)))


def make_synthetic(spec: DatasetSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Class-conditional Gaussian textures with per-channel gain structure."""
    c, h, w = spec.image_size
    coarse = h // 4
    xs = []
    ys = []
    for cls in range(spec.classes):
        texture = np.stack([_upsample(rng.normal(0.0, 1.0, (coarse, coarse)), 4)
                            for _ in range(c)])
        gains = np.exp(rng.normal(0.0, 0.6, size=(c, 1, 1)))
        template = gains * texture
        noise = rng.normal(0.0, spec.noise, size=(spec.samples_per_class, c, h, w))
        xs.append(template[None] + noise)
        ys.append(np.full(spec.samples_per_class, cls, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    return x, y


def load_image_batches(directory) -> tuple[np.ndarray, np.ndarray]:
    """Load a directory of pickled 32x32 image batches.

    Expects files whose unpickled dict carries ``data`` (N x 3072 uint8 rows,
    channel-major) and ``labels``/``fine_labels``; train batches are any file
    starting with ``data_batch``, the test batch is appended last if present.
    """
    directory = Path(directory)
    batch_files = sorted(directory.glob("data_batch*")) + sorted(directory.glob("test_batch*"))
    if not batch_files:
        raise FileNotFoundError(f"no image batches found under {directory}")
    xs, ys = [], []
    for path in batch_files:
        with open(path, "rb") as fh:
            raw = pickle.load(fh, encoding="bytes")
        raw = {k.decode() if isinstance(k, bytes) else k: v for k, v in raw.items()}
        data = np.asarray(raw["data"], dtype=np.uint8)
        labels = raw.get("labels", raw.get("fine_labels"))
        xs.append(data.reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
        ys.append(np.asarray(labels, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def build_dataset(spec: DatasetSpec, rng: np.random.Generator) -> Dataset:
    """Materialize the dataset, split pools, and normalize by train stats."""
    spec.validate()
    if spec.source == "synthetic_gaussian_blobs":
        x, y = make_synthetic(spec, rng)
    else:
        if not spec.path:
            raise ValueError("small_image_set requires a dataset path")
        x, y = load_image_batches(spec.path)
    train_idx, val_idx, test_idx = split_pools(y, spec.ratios, rng)
    mean = x[train_idx].mean(axis=(0, 2, 3), keepdims=True)
    std = x[train_idx].std(axis=(0, 2, 3), keepdims=True)
    std[std == 0] = 1.0
    x = (x - mean) / std
    return Dataset(x=x, y=y, train_idx=train_idx, val_idx=val_idx, test_idx=test_idx)


def split_pools(labels: np.ndarray, ratios: tuple,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified disjoint exhaustive train/val/test index pools."""
    train, val, test = [], [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = rng.permutation(idx)
        n = idx.size
        n_train = int(ratios[0] * n)
        n_val = int((ratios[0] + ratios[1]) * n) - n_train
        train.append(idx[:n_train])
        val.append(idx[n_train:n_train + n_val])
        test.append(idx[n_train + n_val:])
    return (np.sort(np.concatenate(train)),
            np.sort(np.concatenate(val)),
            np.sort(np.concatenate(test)))


def partition_pool(pool: np.ndarray, num_clients: int,
                   rng: np.random.Generator) -> list[np.ndarray]:
    """Random disjoint exhaustive split of an index pool across clients."""
    if num_clients < 1:
        raise ValueError("need at least one client")
    if num_clients > pool.size:
        raise ValueError(
            f"cannot partition {pool.size} samples across {num_clients} clients"
        )
    shuffled = rng.permutation(pool)
    return [np.sort(part) for part in np.array_split(shuffled, num_clients)]


def iter_batches(x: np.ndarray, y: np.ndarray, indices: np.ndarray,
                 batch_size: int, rng: np.random.Generator | None = None,
                 augment: bool = False):
    """Yield (xb, yb) batches; shuffles and flips only when an rng is given.

    Order: a fresh permutation of ``indices``, then contiguous slices; the
    last partial batch is kept. Augmentation is a per-sample horizontal flip.
    """
    order = indices if rng is None else indices[rng.permutation(indices.size)]
    for start in range(0, order.size, batch_size):
        sel = order[start:start + batch_size]
        xb = x[sel].copy()
        if augment and rng is not None:
            flip = rng.random(sel.size) < 0.5
            xb[flip] = xb[flip, :, :, ::-1]
        yield xb, y[sel]
