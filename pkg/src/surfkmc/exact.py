"""Order-independent exact accumulation of doubles.

Ensemble reductions must give the same answer no matter how trajectories
are batched across workers.  Floating-point addition is not associative,
so sums are accumulated as exact integers instead: every finite double is
an integer multiple of 2^-1074, so x * 2^1074 is an exact Python int and
integer addition is associative and exact.  The rounding back to double
happens once, at the end, via correctly rounded integer division.
"""

import numpy as np

# 2^1074 clears the denominator of any finite double, subnormals included.
_SHIFT = 1074
_SCALE = 1 << _SHIFT


def to_exact(x):
    """Exact integer representation of a finite double: round(x * 2^1074)."""
    x = float(x)
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError("cannot represent non-finite value exactly")
    n, d = x.as_integer_ratio()
    # d is a power of two dividing 2^1074
    return n * (_SCALE // d)


def from_exact(acc):
    """Correctly rounded double for an exact accumulator value."""
    if acc == 0:
        return 0.0
    # int/int true division is correctly rounded in CPython
    return acc / _SCALE


class ExactVectorSum:
    """Per-component exact sums of double vectors.

    add() folds in one float vector; merge() combines two accumulators.
    Both are exact, so any grouping of the same multiset of vectors yields
    bit-identical results.
    """

    def __init__(self, size):
        self.size = int(size)
        self.totals = [0] * self.size
        self.count = 0

    def add(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.size:
            raise ValueError(f"expected {self.size} components, got {vec.size}")
        totals = self.totals
        for i, x in enumerate(vec.ravel().tolist()):
            n, d = x.as_integer_ratio()
            totals[i] += n * (_SCALE // d)
        self.count += 1

    def merge(self, other):
        if other.size != self.size:
            raise ValueError("size mismatch in merge")
        self.totals = [a + b for a, b in zip(self.totals, other.totals)]
        self.count += other.count
        return self

    def sum_array(self):
        return np.array([from_exact(t) for t in self.totals])

    def mean_array(self):
        if self.count == 0:
            raise ValueError("empty accumulator has no mean")
        return np.array([from_exact(t) / self.count for t in self.totals])
