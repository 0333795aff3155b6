"""Shared data types for KNN data valuation.

Training and validation sets use the same :class:`Dataset` container.
Training indices are 0-based throughout the package; "rank" means the
1-based position of a point in ascending distance order from a query.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"

METHODS = (
    "original-classification",
    "soft-classification",
    "original-regression",
    "soft-regression",
)


class InputError(ValueError):
    """Raised for malformed inputs (shape mismatch, bad labels, bad parameters)."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``x`` of shape (N, d) and a label vector ``y`` of length N.

    Classification labels are integer class ids in ``[0, n_classes)``;
    regression labels are reals.
    """

    x: np.ndarray
    y: np.ndarray
    task: str = CLASSIFICATION
    n_classes: int | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise InputError(f"features must be a non-empty (N, d) matrix, got shape {x.shape}")
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise InputError(f"unknown task {self.task!r}")
        y = np.asarray(self.y)
        if y.shape != (x.shape[0],):
            raise InputError(f"expected {x.shape[0]} labels, got shape {y.shape}")
        n_classes = self.n_classes
        if self.task == CLASSIFICATION:
            if not np.all(np.mod(y, 1) == 0):
                raise InputError("classification labels must be integers")
            y = y.astype(np.int64)
            if n_classes is None:
                n_classes = max(int(y.max()) + 1, 2)
            if n_classes < 2:
                raise InputError("n_classes must be at least 2")
            if y.min() < 0 or y.max() >= n_classes:
                raise InputError(f"classification labels must lie in [0, {n_classes})")
        else:
            y = y.astype(np.float64)
            n_classes = None
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n_classes", n_classes)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __len__(self):
        return self.n

    def with_labels(self, y) -> Dataset:
        return Dataset(self.x, y, self.task, self.n_classes)

    def check_compatible(self, other: Dataset):
        if other.dim != self.dim:
            raise InputError(f"feature dimension mismatch: {self.dim} vs {other.dim}")
        if other.task != self.task:
            raise InputError(f"task mismatch: {self.task} vs {other.task}")


TestSet = Dataset


@dataclass(frozen=True)
class ValuationConfig:
    k: int = 5
    method: str = "soft-classification"
    n_classes: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.k < 1:
            raise InputError("k must be >= 1")
        if self.is_classification and self.n_classes is not None and self.n_classes < 2:
            raise InputError("n_classes must be >= 2 for classification")

    @property
    def is_classification(self) -> bool:
        return self.method.endswith("classification")


@dataclass(frozen=True)
class SortedIndex:
    """Training indices in ascending distance to a query, ties by index."""

    order: np.ndarray
    distances: np.ndarray

    @classmethod
    def from_distances(cls, distances) -> SortedIndex:
        distances = np.asarray(distances, dtype=np.float64)
        order = np.argsort(distances)
        ordered = distances[order]
        if np.any(ordered[1:] == ordered[:-1]):
            # stable sort keeps equal distances in index order
            order = np.argsort(distances, kind="stable")
            ordered = distances[order]
        return cls(order, ordered)

    @cached_property
    def position(self) -> np.ndarray:
        """0-based place of each training index in ``order``."""
        pos = np.empty_like(self.order)
        pos[self.order] = np.arange(self.order.size)
        return pos

    def __len__(self):
        return self.order.size


def check_values(values, n: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (n,):
        raise InputError(f"value vector must have length {n}, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InputError("value vector contains non-finite entries")
    return values


@lru_cache(maxsize=64)
def harmonic_tables(n: int) -> dict[str, np.ndarray]:
    """Prefix tables indexed by m = 0..n.

    ``h1[m] = sum_{j<=m} 1/j``, ``h2[m] = sum_{j<=m} 1/j^2``,
    ``hs[m] = sum_{j<=m} 1/(j+1)``, ``hw[m] = sum_{j<=m} j/(j+1)^2``.
    """
    j = np.arange(1, n + 1, dtype=np.float64)
    zero = np.zeros(1)
    tables = {
        "h1": np.concatenate([zero, np.cumsum(1.0 / j)]),
        "h2": np.concatenate([zero, np.cumsum(1.0 / j**2)]),
        "hs": np.concatenate([zero, np.cumsum(1.0 / (j + 1))]),
        "hw": np.concatenate([zero, np.cumsum(j / (j + 1) ** 2)]),
    }
    for t in tables.values():
        t.flags.writeable = False
    return tables
