"""Distance kernel, counters, streams and per-query distance scopes."""

import math

import numpy as np
import pytest

from gann.core import (
    Candidate,
    DistanceScope,
    DistCounter,
    euclidean,
    sort_candidates,
    squared_euclidean,
    squared_euclidean_many,
    stream,
)
from gann.errors import DimensionMismatchError


def test_three_four_five():
    counter = DistCounter()
    assert euclidean(np.array([0.0, 0.0]), np.array([3.0, 4.0]), counter) == 5.0
    assert squared_euclidean(np.array([0.0, 0.0]), np.array([3.0, 4.0]), counter) == 25.0
    assert counter.count == 2


def test_identity_is_zero():
    x = np.array([0.5, -1.25, 3.0], dtype=np.float32)
    assert euclidean(x, x, DistCounter()) == 0.0
    assert squared_euclidean(x, x, DistCounter()) == 0.0


def test_matches_scalar_loop():
    rng = np.random.default_rng(3)
    a, b = rng.random(8).astype(np.float32), rng.random(8).astype(np.float32)
    expected = math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))
    assert euclidean(a, b, DistCounter()) == pytest.approx(expected, rel=1e-6)


def test_symmetry_and_triangle_inequality():
    rng = np.random.default_rng(4)
    counter = DistCounter()
    for _ in range(100):
        a, b, c = rng.normal(size=(3, 6))
        assert euclidean(a, b, counter) == euclidean(b, a, counter)
        assert euclidean(a, c, counter) <= (euclidean(a, b, counter) + euclidean(b, c, counter)) * (1 + 1e-5)


def test_squared_order_agrees_with_true_order():
    rng = np.random.default_rng(5)
    q = rng.random(4)
    rows = rng.random((10, 4))
    squared = [squared_euclidean(r, q, DistCounter()) for r in rows]
    true = [euclidean(r, q, DistCounter()) for r in rows]
    assert list(np.argsort(squared)) == list(np.argsort(true))


def test_dimension_mismatch_raises():
    with pytest.raises(DimensionMismatchError):
        euclidean(np.zeros(3), np.zeros(4), DistCounter())
    with pytest.raises(DimensionMismatchError):
        squared_euclidean_many(np.zeros((2, 3)), np.zeros(4), DistCounter())


def test_batch_kernel_agrees_and_counts_rows():
    rng = np.random.default_rng(6)
    rows = rng.random((7, 5)).astype(np.float32)
    q = rng.random(5).astype(np.float32)
    counter = DistCounter()
    batch = squared_euclidean_many(rows, q, counter)
    assert counter.count == 7
    single = [squared_euclidean(r, q, DistCounter()) for r in rows]
    assert batch.tolist() == pytest.approx(single, rel=1e-12)


def test_counter_reset_returns_total():
    counter = DistCounter()
    counter.add(3)
    assert counter.reset() == 3
    assert counter.count == 0


def test_streams_replay_and_separate():
    assert np.array_equal(stream(9, 1).random(5), stream(9, 1).random(5))
    assert not np.array_equal(stream(9, 1).random(5), stream(9, 2).random(5))
    assert not np.array_equal(stream(9, 1).random(5), stream(10, 1).random(5))


def test_sort_candidates_breaks_ties_by_id():
    items = [Candidate(5, 1.0), Candidate(2, 1.0), Candidate(9, 0.5)]
    assert [c.node for c in sort_candidates(items)] == [9, 2, 5]


def test_scope_evaluates_each_node_once():
    data = np.arange(12, dtype=np.float32).reshape(6, 2)
    scope = DistanceScope(data, np.zeros(2, dtype=np.float32))
    scope.distance(3)
    scope.distance(3)
    assert scope.counter.count == 1
    found = scope.lookup([3, 4, 4, 5])
    assert [c.node for c in found] == [3, 4, 5]
    assert scope.counter.count == 3
    assert scope.annotate([5, 0])[0].node == 0
    assert scope.counter.count == 4
    assert scope.evaluated == 4 and 0 in scope and 1 not in scope


def test_scope_charge_always_counts_and_remember_never_does():
    data = np.zeros((3, 2), dtype=np.float32)
    scope = DistanceScope(data, np.ones(2, dtype=np.float32))
    scope.charge(np.zeros((2, 2)))
    scope.charge(np.zeros((2, 2)))
    assert scope.counter.count == 4
    scope.remember([Candidate(1, 2.0)])
    assert scope.distance(1) == 2.0
    assert scope.counter.count == 4


def test_scope_rejects_wrong_query_shape():
    with pytest.raises(DimensionMismatchError):
        DistanceScope(np.zeros((3, 2)), np.zeros(3))
