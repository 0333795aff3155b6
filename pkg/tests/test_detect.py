import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knnsv.core import InputError
from knnsv.data import gaussian_blobs, random_regression
from knnsv.detect import (
    detect_cluster,
    detect_ranking,
    f1_score,
    flip_labels,
    run_detection,
    two_means_1d,
)


class TestFlips:
    def test_count(self):
        _, truth = flip_labels(gaussian_blobs(100, 2), 0.1, 0)
        assert truth.sum() == 10

    def test_binary_flip_is_complement(self):
        ds = gaussian_blobs(100, 2)
        noisy, truth = flip_labels(ds, 0.2, 1)
        assert np.all(noisy.y[truth] == 1 - ds.y[truth])
        assert np.all(noisy.y[~truth] == ds.y[~truth])

    def test_multiclass_changes_label(self):
        ds = gaussian_blobs(300, 2, n_classes=4)
        noisy, truth = flip_labels(ds, 0.3, 2)
        assert np.all(noisy.y[truth] != ds.y[truth])
        assert set(np.unique(noisy.y)) <= {0, 1, 2, 3}

    def test_deterministic(self):
        ds = gaussian_blobs(100, 2)
        a, ta = flip_labels(ds, 0.1, 5)
        b, tb = flip_labels(ds, 0.1, 5)
        assert np.array_equal(ta, tb) and np.array_equal(a.y, b.y)

    def test_regression_rejected(self):
        with pytest.raises(InputError):
            flip_labels(random_regression(20), 0.1, 0)


class TestRanking:
    def test_one_to_ten(self):
        flags = detect_ranking(np.arange(1.0, 11.0))
        assert np.percentile(np.arange(1.0, 11.0), 10) == pytest.approx(1.9)
        assert flags.tolist() == [True] + [False] * 9

    def test_all_equal(self):
        assert not detect_ranking(np.full(20, 0.3)).any()

    def test_outlier(self):
        v = np.random.default_rng(0).normal(size=100)
        v[42] = -1e3
        assert detect_ranking(v)[42]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200, unique=True))
    def test_flags_at_most_a_tenth(self, values):
        assert detect_ranking(values).sum() <= np.ceil(0.1 * len(values))


class TestCluster:
    def test_balanced_bimodal(self):
        v = np.array([0, 0, 0, 1, 1, 1.0])
        assert two_means_1d(v) == (0.0, 1.0)
        assert not detect_cluster(v).any()

    def test_negative_point(self):
        v = np.array([-1, 0, 0, 1, 1, 1.0])
        lo, hi = two_means_1d(v)
        assert lo == pytest.approx(-1 / 3) and hi == 1.0
        assert detect_cluster(v).tolist() == [True] + [False] * 5

    def test_identical_values(self):
        assert not detect_cluster(np.full(5, 2.0)).any()

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.integers(-1000, 1000), min_size=2, max_size=60),
        st.integers(-500, 500),
        st.sampled_from([0.5, 2.0, 8.0]),
    )
    def test_shift_and_scale_invariant(self, ints, shift, scale):
        # dyadic scales and integer data keep the arithmetic exact
        v = np.array(ints, dtype=float)
        base = detect_cluster(v)
        assert np.array_equal(detect_cluster(v + shift), base)
        assert np.array_equal(detect_cluster(v * scale), base)


class TestF1:
    def test_perfect(self):
        t = np.array([True, False, True])
        assert f1_score(t, t) == 1.0

    def test_no_flags(self):
        assert f1_score(np.zeros(4, bool), np.array([1, 0, 0, 1], bool)) == 0.0

    def test_half_overlap(self):
        truth = np.zeros(40, bool)
        truth[:10] = True
        flags = np.zeros(40, bool)
        flags[5:15] = True
        assert f1_score(flags, truth) == pytest.approx(0.5)

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            f1_score(np.zeros(3, bool), np.zeros(4, bool))


def test_pipeline_is_deterministic_across_threads():
    train = gaussian_blobs(300, 5, seed=1)
    test = gaussian_blobs(40, 5, seed=2)
    a, ra = run_detection(train, test, seed=3, threads=1)
    b, rb = run_detection(train, test, seed=3, threads=3)
    assert ra == rb and np.array_equal(a.flags, b.flags)
    assert set(ra) == {"dataset", "method", "rule", "k", "seed", "f1", "n", "n_flipped"}


def test_unknown_rule():
    ds = gaussian_blobs(20, 2)
    with pytest.raises(InputError):
        run_detection(ds, ds, rule="median")
