import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surfkmc.exact import ExactVectorSum, from_exact, to_exact


def test_roundtrip_exact_for_representable_values():
    for x in (0.0, 1.0, -1.5, 1e-300, 5e-324, 1.7e308, math.pi):
        assert from_exact(to_exact(x)) == x


def test_non_finite_rejected():
    for x in (math.inf, -math.inf, math.nan):
        with pytest.raises(ValueError):
            to_exact(x)


def test_sum_is_order_independent_where_floats_are_not():
    xs = [1e16, 1.0, -1e16, 1.0]
    assert (1e16 + 1.0) - 1e16 + 1.0 != 2.0  # the float trap being avoided
    fwd = ExactVectorSum(1)
    for x in xs:
        fwd.add([x])
    rev = ExactVectorSum(1)
    for x in reversed(xs):
        rev.add([x])
    assert fwd.sum_array()[0] == 2.0
    assert rev.sum_array()[0] == 2.0


def test_merge_matches_single_accumulator_bitwise():
    rng = np.random.default_rng(5)
    vecs = rng.normal(size=(40, 6)) * 10.0 ** rng.integers(-12, 12, (40, 1))
    whole = ExactVectorSum(6)
    for v in vecs:
        whole.add(v)
    left, right = ExactVectorSum(6), ExactVectorSum(6)
    for v in vecs[:17]:
        left.add(v)
    for v in vecs[17:]:
        right.add(v)
    merged = left.merge(right)
    assert merged.count == whole.count == 40
    assert merged.sum_array().tobytes() == whole.sum_array().tobytes()


def test_mean_and_empty_mean():
    acc = ExactVectorSum(2)
    acc.add([1.0, 2.0])
    acc.add([2.0, 4.0])
    np.testing.assert_array_equal(acc.mean_array(), [1.5, 3.0])
    with pytest.raises(ValueError):
        ExactVectorSum(2).mean_array()


def test_size_mismatch_rejected():
    acc = ExactVectorSum(3)
    with pytest.raises(ValueError):
        acc.add([1.0, 2.0])
    with pytest.raises(ValueError):
        acc.merge(ExactVectorSum(4))


@given(st.lists(st.floats(min_value=-1e30, max_value=1e30,
                          allow_nan=False, allow_infinity=False),
                min_size=1, max_size=30),
       st.integers(0, 29))
@settings(max_examples=60, deadline=None)
def test_any_split_point_merges_to_the_same_bits(xs, cut):
    cut = cut % len(xs)
    whole = ExactVectorSum(1)
    for x in xs:
        whole.add([x])
    a, b = ExactVectorSum(1), ExactVectorSum(1)
    for x in xs[:cut]:
        a.add([x])
    for x in xs[cut:]:
        b.add([x])
    assert a.merge(b).sum_array().tobytes() == whole.sum_array().tobytes()
