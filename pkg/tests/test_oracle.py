import math

import numpy as np
import pytest

from knnsv.core import InputError
from knnsv.oracle import shapley_exact_enumeration
from knnsv.utilities import bind_utility
from helpers import in_rank_order


def test_single_player():
    phi = shapley_exact_enumeration(lambda s: 3.0 if s else 1.0, 1)
    assert phi.tolist() == [2.0]


def test_symmetric_players_get_equal_values():
    phi = shapley_exact_enumeration(lambda s: float(len(s) ** 2), 2)
    assert phi[0] == phi[1] == 2.0


def test_soft_label_three_points():
    u = bind_utility("soft-classification", in_rank_order(3), np.array([1, 0, 1]), 1, 1, 2)
    np.testing.assert_allclose(shapley_exact_enumeration(u, 3), [2 / 3, -1 / 3, 1 / 6], atol=1e-15)


def test_efficiency_and_linearity_on_random_games():
    rng = np.random.default_rng(5)
    for n in range(1, 9):
        t1, t2 = rng.normal(size=2**n), rng.normal(size=2**n)

        def game(table):
            return lambda s: table[sum(1 << i for i in s)]

        p1 = shapley_exact_enumeration(game(t1), n)
        p2 = shapley_exact_enumeration(game(t2), n)
        assert abs(p1.sum() - (t1[-1] - t1[0])) < 1e-12
        mix = shapley_exact_enumeration(game(2.5 * t1 - 0.5 * t2), n)
        np.testing.assert_allclose(mix, 2.5 * p1 - 0.5 * p2, atol=1e-10)


def test_dummy_player_gets_zero():
    # player 2 never changes the value
    phi = shapley_exact_enumeration(lambda s: float(len(set(s) - {2})), 4)
    assert phi[2] == 0.0


def test_large_n_uses_log_gamma_weights():
    # additive game: every player's value is its own weight
    w = np.arange(1.0, 17.0)
    phi = shapley_exact_enumeration(lambda s: float(w[list(s)].sum()), 16)
    np.testing.assert_allclose(phi, w, rtol=1e-12)


def test_refuses_too_many_players():
    with pytest.raises(InputError, match="too large"):
        shapley_exact_enumeration(lambda s: 0.0, 21)
    with pytest.raises(InputError):
        shapley_exact_enumeration(lambda s: 0.0, 0)


def test_non_finite_utility_propagates():
    with pytest.raises(ArithmeticError):
        shapley_exact_enumeration(lambda s: math.nan if len(s) == 2 else 0.0, 3)
