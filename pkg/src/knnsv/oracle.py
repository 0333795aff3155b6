"""Brute-force Shapley values by enumerating every subset of players.

This is the reference the closed-form recursions and the LSH approximation
are checked against. It makes 2**n utility calls, so it refuses n > 20.
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

from .core import InputError

MAX_PLAYERS = 20


def _layer_weights(n: int) -> list[float]:
    # weight of a coalition of size s (not containing i): 1 / (n * C(n-1, s))
    if n <= 15:
        return [1.0 / (n * math.comb(n - 1, s)) for s in range(n)]
    return [
        math.exp(-math.log(n) - (math.lgamma(n) - math.lgamma(s + 1) - math.lgamma(n - s)))
        for s in range(n)
    ]


def shapley_exact_enumeration(utility, n: int) -> np.ndarray:
    """Exact Shapley values of the game ``utility`` on players ``0..n-1``.

    ``utility`` receives a sorted tuple of player indices (the empty tuple
    included). Each coalition is evaluated once and its value is credited to
    members and debited from non-members with the matching layer weight, so
    memory stays O(n).
    """
    if n < 1:
        raise InputError("need at least one player")
    if n > MAX_PLAYERS:
        raise InputError(f"subset enumeration over {n} players is too large (limit {MAX_PLAYERS})")
    weights = _layer_weights(n)
    phi = np.zeros(n)
    for size in range(n + 1):
        # members gain w(size-1) * v(S); non-members lose w(size) * v(S)
        layer_total = 0.0
        member_total = [0.0] * n
        for subset in combinations(range(n), size):
            value = utility(subset)
            if not math.isfinite(value):
                raise ArithmeticError(f"utility returned non-finite value {value!r} for {subset}")
            layer_total += value
            for i in subset:
                member_total[i] += value
        member_total = np.array(member_total)
        if size > 0:
            phi += weights[size - 1] * member_total
        if size < n:
            phi -= weights[size] * (layer_total - member_total)
    return phi
