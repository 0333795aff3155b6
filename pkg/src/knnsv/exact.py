"""Closed-form Shapley values for unweighted KNN, one sort per test point.

The ``*_sorted`` functions take per-point quantities already arranged in
ascending distance from the test point (position 0 is the nearest) and
return values in that same order. The ``sv_*`` wrappers take a
:class:`SortedIndex` and scatter the result back to training indices.
Each recursion runs from the farthest point inward, so after sorting the
whole vector costs O(N).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import Dataset, InputError, SortedIndex, ValuationConfig, harmonic_tables
from .utilities import sort_by_distance


class UnsupportedRegimeError(InputError):
    """The closed form is not valid for the requested (N, K)."""


def _accumulate(last: float, increments: np.ndarray) -> np.ndarray:
    # phi_i = phi_N + sum_{l >= i} (phi_l - phi_{l+1})
    tail = np.cumsum(increments[::-1])[::-1]
    return np.append(last + tail, last)


def original_classification_sorted(match, k: int) -> np.ndarray:
    match = np.asarray(match, dtype=np.float64)
    n = match.size
    if n < 1:
        raise InputError("need at least one training point")
    last = match[-1] / max(k, n)
    i = np.arange(1, n, dtype=np.float64)
    inc = (match[:-1] - match[1:]) / k * np.minimum(k, i) / i
    return _accumulate(last, inc)


def soft_increment_coefficients(n: int, k: int, ranks: np.ndarray) -> np.ndarray:
    """Bracketed factor of the soft-label increment at 1-based ``ranks``.

    For n > k this is H_K + (min(i,K)(N-1)/i - K)/K. For n <= k every
    coalition in the difference is smaller than K and the factor collapses
    to H_{N-1}, which is also what the general form gives at n == k.
    """
    h1 = harmonic_tables(k)["h1"]
    ranks = np.asarray(ranks, dtype=np.float64)
    if n <= k:
        return np.full(ranks.shape, h1[n - 1])
    return h1[k] + (np.minimum(ranks, k) * (n - 1) / ranks - k) / k


def soft_classification_sorted(match, k: int, c: int) -> np.ndarray:
    match = np.asarray(match, dtype=np.float64)
    n = match.size
    if n < 1:
        raise InputError("need at least one training point")
    if n == 1:
        return np.array([match[0] - 1.0 / c])
    hs = harmonic_tables(k)["hs"]
    s = match[:-1].sum()
    last = (match[-1] - s / (n - 1)) * hs[min(k, n) - 1] / n + (match[-1] - 1.0 / c) / n
    i = np.arange(1, n)
    inc = (match[:-1] - match[1:]) / (n - 1) * soft_increment_coefficients(n, k, i)
    return _accumulate(last, inc)


def soft_regression_sorted(y, y_test: float, k: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n <= k:
        raise UnsupportedRegimeError(
            f"soft-label regression values need N > K (got N={n}, K={k})"
        )
    tab = harmonic_tables(k)
    h1, h2, hw = tab["h1"], tab["h2"], tab["hw"]

    i = np.arange(1, n, dtype=np.float64)  # 1-based ranks 1..N-1
    mi = np.minimum(k, i)
    a1 = h2[k] + ((n - 1) * mi / i - k) / k**2
    a3 = h1[k] + mi * (n - 1) / (i * k) - 1.0

    # shift term (K-1)K / (2(N-2)); zero when K == 1, which covers N == 2
    shift = (k - 1) * k / (2.0 * (n - 2)) if k > 1 else 0.0

    def g(t):
        t = np.asarray(t, dtype=np.float64)
        num = (n - 1) * np.minimum(k, t) * np.minimum(k - 1, t - 1)
        den = 2.0 * (t - 1) * t
        out = np.divide(num, den, out=np.zeros_like(t), where=den > 0)
        return out - shift

    total = y.sum()
    prefix = np.concatenate([[0.0], np.cumsum(y)])  # prefix[m] = y_1 + ... + y_m
    # far[l] = y_l * g(l - 1) for l = 1..N, suffix-summed from l = i + 2
    ell = np.arange(1, n + 1, dtype=np.float64)
    far = y * g(ell - 1)
    far_suffix = np.concatenate([np.cumsum(far[::-1])[::-1], [0.0]])  # far_suffix[m] = sum_{l>m} far
    idx = np.arange(1, n)
    rest = total - y[:-1] - y[1:]
    a2_mean = rest / (n - 2) * hw[k - 1] if k > 1 else np.zeros(n - 1)
    a2 = a2_mean + (prefix[idx - 1] * g(i) + far_suffix[idx + 1]) / k**2

    yi, yn = y[:-1], y[1:]
    inc = (yn - yi) / (n - 1) * ((yi + yn) * a1 + 2 * a2 - 2 * y_test * a3)

    s1 = y[:-1].sum()
    s2 = (y[:-1] ** 2).sum()
    y_last = y[-1]
    star = 0.0
    for j in range(1, k):
        quad = j * (j - 1) / ((n - 1) * (n - 2)) * s1**2 + j * (n - j - 1) / ((n - 1) * (n - 2)) * s2
        star += (2 * j + 1) / (j**2 * (j + 1) ** 2) * quad
        star += (-2 * y_last / (j + 1) ** 2 - 2 * y_test / (j * (j + 1))) * j / (n - 1) * s1
        star += (y_last / (j + 1) - 2 * y_test) * (-y_last / (j + 1))
    last = star / n + (y_test**2 - (y_last - y_test) ** 2) / n
    return _accumulate(last, inc)


def _scatter(sorted_index: SortedIndex, sorted_values: np.ndarray) -> np.ndarray:
    out = np.empty_like(sorted_values)
    out[sorted_index.order] = sorted_values
    return out


def sv_original_classification(sorted_index, labels, y_test, k) -> np.ndarray:
    match = np.asarray(labels)[sorted_index.order] == y_test
    return _scatter(sorted_index, original_classification_sorted(match, k))


def sv_soft_classification(sorted_index, labels, y_test, k, c) -> np.ndarray:
    match = np.asarray(labels)[sorted_index.order] == y_test
    return _scatter(sorted_index, soft_classification_sorted(match, k, c))


def sv_soft_regression(sorted_index, labels, y_test, k) -> np.ndarray:
    ys = np.asarray(labels, dtype=np.float64)[sorted_index.order]
    return _scatter(sorted_index, soft_regression_sorted(ys, float(y_test), k))


def aggregate_over_test_set(per_test) -> np.ndarray:
    """Sum per-test-point value vectors in test-set order."""
    per_test = list(per_test)
    if not per_test:
        raise InputError("no per-test-point vectors to aggregate")
    n = len(per_test[0])
    total = np.zeros(n)
    for v in per_test:
        if len(v) != n:
            raise InputError(f"value vectors differ in length: {n} vs {len(v)}")
        total += v
    return total


def value_for_test_point(train: Dataset, x_test, y_test, config: ValuationConfig) -> np.ndarray:
    sorted_index = sort_by_distance(train, x_test)
    method = config.method
    if method == "original-classification":
        return sv_original_classification(sorted_index, train.y, y_test, config.k)
    if method == "soft-classification":
        c = config.n_classes or train.n_classes
        return sv_soft_classification(sorted_index, train.y, y_test, config.k, c)
    if method == "soft-regression":
        return sv_soft_regression(sorted_index, train.y, y_test, config.k)
    raise InputError(
        "original-regression has no closed form; use oracle.shapley_exact_enumeration"
    )


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("KNNSV_THREADS", "1"))
    return max(1, threads)


def knn_shapley(train: Dataset, test: Dataset, config: ValuationConfig, threads=None) -> np.ndarray:
    """Exact KNN Shapley values of every training point, summed over the test set."""
    train.check_compatible(test)
    threads = resolve_threads(threads)

    def one(t):
        return value_for_test_point(train, test.x[t], test.y[t], config)

    if threads == 1:
        per_test = map(one, range(test.n))
        return aggregate_over_test_set(per_test)
    with ThreadPoolExecutor(threads) as pool:
        # map yields in submission order, so the reduction order is fixed
        return aggregate_over_test_set(pool.map(one, range(test.n)))
