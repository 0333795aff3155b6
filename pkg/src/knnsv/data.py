"""Synthetic datasets for tests, benchmarks and the detection experiment."""

from __future__ import annotations

import numpy as np

from .core import Dataset


def gaussian_blobs(n: int, dim: int = 10, n_classes: int = 2, separation: float = 4.0,
                   seed: int = 0) -> Dataset:
    """Unit-variance isotropic blobs, one per class, centered ``separation`` apart on the first axis."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, n_classes, size=n)
    x = rng.standard_normal((n, dim))
    x[:, 0] += separation * (y - (n_classes - 1) / 2)
    return Dataset(x, y, n_classes=n_classes)


def random_regression(n: int, dim: int = 3, seed: int = 0, noise: float = 0.1) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim))
    coef = rng.standard_normal(dim)
    y = x @ coef + noise * rng.standard_normal(n)
    return Dataset(x, y, task="regression")
