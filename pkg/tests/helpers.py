import numpy as np

from knnsv.core import SortedIndex


def ladder(rng, n):
    # distinct distances in random storage order
    return SortedIndex.from_distances(rng.permutation(n) + 0.5 * rng.random(n))


def in_rank_order(n):
    return SortedIndex.from_distances(np.arange(1, n + 1, dtype=float))
