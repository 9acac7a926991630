import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dbce.grid import LabelRangeError, argmax_labels, check_probs, one_hot, softmax


def test_one_hot_single_pixel():
    planes = one_hot(np.array([[0]]), 2)
    assert planes.tolist() == [[[1.0]], [[0.0]]]


def test_one_hot_checkerboard():
    planes = one_hot(np.array([[0, 1], [1, 0]]), 2)
    np.testing.assert_array_equal(planes[0], [[1, 0], [0, 1]])
    np.testing.assert_array_equal(planes[1], [[0, 1], [1, 0]])


def test_one_hot_rejects_out_of_range_with_coordinate():
    with pytest.raises(LabelRangeError) as exc:
        one_hot(np.array([[0, 1], [3, 0]]), 3)
    assert exc.value.coord == (1, 0)
    assert "(1, 0)" in str(exc.value)


def test_one_hot_batch_shape():
    masks = np.zeros((4, 5, 6), dtype=int)
    assert one_hot(masks, 3).shape == (4, 3, 5, 6)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.int64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=12),
                  elements=st.integers(0, 3)))
def test_one_hot_partitions(mask):
    planes = one_hot(mask, 4)
    np.testing.assert_array_equal(planes.sum(axis=0), 1.0)
    for c in range(4):
        np.testing.assert_array_equal(planes[c] == 1, mask == c)


def test_softmax_zero_logits_are_uniform():
    np.testing.assert_array_equal(softmax(np.zeros((2, 3, 3))), 0.5)


def test_softmax_ln3():
    p = softmax(np.array([[[math.log(3)]], [[0.0]]]))
    # e^{ln 3} / (e^{ln 3} + 1) = 3/4
    assert p[0, 0, 0] == pytest.approx(0.75, abs=1e-15)
    assert p[1, 0, 0] == pytest.approx(0.25, abs=1e-15)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(3, 4, 4))
    np.testing.assert_allclose(softmax(z + 17.5), softmax(z), atol=1e-15)


def test_softmax_rejects_nonfinite():
    z = np.zeros((2, 2, 2))
    z[1, 0, 1] = np.inf
    with pytest.raises(ValueError):
        softmax(z)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 5), st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-50, 50)))
def test_softmax_sums_to_one(z):
    np.testing.assert_allclose(softmax(z).sum(axis=0), 1.0, atol=1e-12, rtol=0)


def test_softmax_extreme_logits_stable():
    z = np.array([[[1000.0]], [[-1000.0]]])
    p = softmax(z)
    assert np.all(np.isfinite(p)) and p[0, 0, 0] == 1.0


def test_argmax_basic_and_tie():
    probs = np.array([[[0.9, 0.5]], [[0.1, 0.5]]])
    np.testing.assert_array_equal(argmax_labels(probs), [[0, 0]])


def test_argmax_recovers_mask_roundtrip():
    rng = np.random.default_rng(3)
    mask = rng.integers(0, 3, size=(8, 8))
    for k in (0.01, 1.0, 40.0):
        assert np.array_equal(argmax_labels(softmax(k * one_hot(mask, 3))), mask)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.int64, (6, 6), elements=st.integers(0, 2)), st.floats(1e-3, 1e3))
def test_argmax_invariant_to_positive_scaling(mask, k):
    assert np.array_equal(argmax_labels(softmax(k * one_hot(mask, 3))), mask)


def test_check_probs_rejects_bad_sums():
    p = np.full((2, 2, 2), 0.6)
    with pytest.raises(ValueError, match="sum to 1"):
        check_probs(p)
