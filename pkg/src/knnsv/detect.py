"""Mislabeled-data detection from data values.

Flip a fraction of training labels, value the noisy training set against a
clean validation set, flag low-valued points, and score the flags with F1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import CLASSIFICATION, Dataset, InputError, ValuationConfig
from .exact import knn_shapley


@dataclass(frozen=True)
class DetectionReport:
    flags: np.ndarray
    truth: np.ndarray
    f1: float
    rule: str

    def __post_init__(self):
        if self.flags.shape != self.truth.shape:
            raise InputError("flags and truth must have the same length")


def flip_labels(dataset: Dataset, rate: float, seed: int) -> tuple[Dataset, np.ndarray]:
    """Replace ``floor(rate * N)`` labels, chosen without replacement, by a different class.

    The new class is uniform over the other C - 1 classes.
    """
    if dataset.task != CLASSIFICATION:
        raise InputError("label flipping needs a classification dataset")
    if not 0 < rate < 1:
        raise InputError("flip rate must lie in (0, 1)")
    n_flip = int(np.floor(rate * dataset.n))
    if n_flip < 1:
        raise InputError(f"flip rate {rate} flips no points out of {dataset.n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(dataset.n, n_flip, replace=False)
    y = dataset.y.copy()
    # shift by 1..C-1 so the new label is uniform over the other classes
    shift = rng.integers(1, dataset.n_classes, size=n_flip)
    y[idx] = (y[idx] + shift) % dataset.n_classes
    truth = np.zeros(dataset.n, dtype=bool)
    truth[idx] = True
    return dataset.with_labels(y), truth


def detect_ranking(values, percentile: float = 10.0) -> np.ndarray:
    """Flag values strictly below the linearly interpolated ``percentile``."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 1:
        raise InputError("no values to rank")
    return values < np.percentile(values, percentile, method="linear")


def two_means_1d(values, tol: float = 1e-10, max_iter: int = 1000) -> tuple[float, float]:
    """Lloyd's 2-means on scalars, centers started at the min and max.

    A value equidistant from both centers joins the lower one.
    """
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    for _ in range(max_iter):
        upper = np.abs(values - hi) < np.abs(values - lo)
        new_lo = float(values[~upper].mean()) if (~upper).any() else lo
        new_hi = float(values[upper].mean()) if upper.any() else hi
        shift = max(abs(new_lo - lo), abs(new_hi - hi))
        lo, hi = new_lo, new_hi
        if shift <= tol:
            break
    return lo, hi


def detect_cluster(values) -> np.ndarray:
    """Flag values strictly below the lower of two 1-D k-means centers."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise InputError("cluster rule needs at least two values")
    return values < min(two_means_1d(values))


def f1_score(flags, truth) -> float:
    flags = np.asarray(flags, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if flags.shape != truth.shape:
        raise InputError("flags and truth must have the same length")
    tp = int(np.sum(flags & truth))
    if tp == 0:
        return 0.0
    precision = tp / int(flags.sum())
    recall = tp / int(truth.sum())
    return 2 * precision * recall / (precision + recall)


RULES = {"rank": detect_ranking, "cluster": detect_cluster}


def run_detection(train: Dataset, test: Dataset, method: str = "soft-classification",
                  rule: str = "rank", flip_rate: float = 0.1, k: int = 5, seed: int = 0,
                  threads=None, name: str = "") -> tuple[DetectionReport, dict]:
    """Flip, value, flag and score one run; returns the report and its JSON record."""
    if rule not in RULES:
        raise InputError(f"rule must be one of {sorted(RULES)}")
    noisy, truth = flip_labels(train, flip_rate, seed)
    config = ValuationConfig(k=k, method=method, n_classes=train.n_classes)
    values = knn_shapley(noisy, test, config, threads=threads)
    flags = RULES[rule](values)
    report = DetectionReport(flags, truth, f1_score(flags, truth), rule)
    record = {
        "dataset": name, "method": method, "rule": rule, "k": k, "seed": seed,
        "f1": report.f1, "n": train.n, "n_flipped": int(truth.sum()),
    }
    return report, record


def format_record(record: dict) -> str:
    return json.dumps(record, sort_keys=False)

