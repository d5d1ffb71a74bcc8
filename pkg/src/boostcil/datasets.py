"""Desk-scale dataset loaders.

Every loader returns an :class:`ArrayDataset`: dense float32 instances,
int64 labels in ``0..num_classes-1``, and fixed train/test splits.  The
stream layer is agnostic to where the arrays came from.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

DATA_DIR_ENV = "BOOSTCIL_DATA_DIR"


def data_dir() -> str:
    """Cache directory for dataset files (env-overridable)."""
    return os.environ.get(DATA_DIR_ENV, os.path.join(os.path.expanduser("~"), ".boostcil"))


@dataclass(frozen=True)
class ArrayDataset:
    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int

    def __post_init__(self):
        for arr in (self.train_x, self.train_y, self.test_x, self.test_y):
            arr.setflags(write=False)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.train_x.shape[1:])


def make_blobs(
    num_classes: int = 10,
    dim: int = 16,
    train_per_class: int = 100,
    test_per_class: int = 50,
    center_scale: float = 3.0,
    cluster_std: float = 1.0,
    seed: int = 0,
) -> ArrayDataset:
    """Gaussian-blob classification set with one isotropic cluster per class."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=center_scale, size=(num_classes, dim))
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(num_classes):
        n = train_per_class + test_per_class
        points = centers[c] + rng.normal(scale=cluster_std, size=(n, dim))
        train_x.append(points[:train_per_class])
        test_x.append(points[train_per_class:])
        train_y.append(np.full(train_per_class, c))
        test_y.append(np.full(test_per_class, c))
    return ArrayDataset(
        name=f"blobs{num_classes}x{dim}",
        train_x=np.concatenate(train_x).astype(np.float32),
        train_y=np.concatenate(train_y).astype(np.int64),
        test_x=np.concatenate(test_x).astype(np.float32),
        test_y=np.concatenate(test_y).astype(np.int64),
        num_classes=num_classes,
    )


def load_digits_dataset(test_per_class: int = 40, seed: int = 0) -> ArrayDataset:
    """8x8 handwritten-digit images (10 classes), shipped with scikit-learn.

    Pixels are scaled to [0, 1] and shaped (n, 1, 8, 8); the split is a
    deterministic per-class shuffle.
    """
    from sklearn.datasets import load_digits

    bunch = load_digits()
    x = (bunch.images.astype(np.float32) / 16.0)[:, None, :, :]
    y = bunch.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        test_idx.append(idx[:test_per_class])
        train_idx.append(idx[test_per_class:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    return ArrayDataset(
        name="digits",
        train_x=x[train_idx],
        train_y=y[train_idx],
        test_x=x[test_idx],
        test_y=y[test_idx],
        num_classes=10,
    )


def get_dataset(spec: dict | str) -> ArrayDataset:
    """Build a dataset from a config entry: a name or {"name": ..., params}."""
    if isinstance(spec, str):
        spec = {"name": spec}
    params = {k: v for k, v in spec.items() if k != "name"}
    name = spec["name"]
    if name == "blobs":
        return make_blobs(**params)
    if name == "digits":
        return load_digits_dataset(**params)
    raise ValueError(f"unknown dataset {name!r}")
