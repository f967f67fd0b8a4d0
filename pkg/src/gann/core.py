"""Scalar types, the Euclidean kernel and distance-calculation accounting.

Every distance evaluation in the toolkit goes through ``euclidean``,
``squared_euclidean``, their batch form ``squared_euclidean_many`` or one of the
compiled loops in :mod:`gann.kernels`; each charges a :class:`DistCounter` with
exactly the number of evaluations made.
Comparisons use squared distances, reported values use true distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import DimensionMismatchError

NodeId = int


class Candidate(NamedTuple):
    """A node with its distance to some reference point.

    Inside search and pruning ``dist`` holds the squared distance; results
    handed back to callers (``QueryResult.answers``, ground truth) hold the
    Euclidean distance.
    """

    node: NodeId
    dist: float


@dataclass
class DistCounter:
    """Number of full d-dimensional distance evaluations within one scope."""

    count: int = 0

    def add(self, evaluations: int = 1) -> None:
        self.count += evaluations

    def reset(self) -> int:
        """Return the count and start a new scope."""
        total, self.count = self.count, 0
        return total


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != 1 or b.ndim != 1 or a.shape[0] != b.shape[0] or a.shape[0] < 1:
        raise DimensionMismatchError(
            f"vectors must share one dimensionality >= 1, got {a.shape} and {b.shape}"
        )


def squared_euclidean(a: np.ndarray, b: np.ndarray, counter: DistCounter) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    _check_dims(a, b)
    counter.add(1)
    return float(kernels.sq_dist(a, b))


def euclidean(a: np.ndarray, b: np.ndarray, counter: DistCounter) -> float:
    return math.sqrt(squared_euclidean(a, b, counter))


def squared_euclidean_many(
    rows: np.ndarray, q: np.ndarray, counter: DistCounter
) -> np.ndarray:
    """Squared distances from every row of ``rows`` to ``q``; one count per row."""
    rows = np.asarray(rows)
    q = np.asarray(q)
    if rows.ndim != 2 or q.ndim != 1 or rows.shape[1] != q.shape[0]:
        raise DimensionMismatchError(
            f"cannot compare rows of shape {rows.shape} with a vector of {q.shape}"
        )
    counter.add(rows.shape[0])
    return kernels.sq_rows(rows, q)


def stream(seed: int, stream_id: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream_id)``.

    The Philox key packs the 64-bit seed into the high word and the stream id
    into the low word, so draws are replayable and independent of call order.
    """
    key = ((seed & 0xFFFFFFFFFFFFFFFF) << 64) | (stream_id & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def sort_candidates(items: Iterable[Candidate]) -> List[Candidate]:
    """Ascending by distance, ties by smaller NodeId."""
    return sorted(items, key=lambda c: (c.dist, c.node))


@dataclass
class DistanceScope:
    """Memoized squared distances from one reference vector to dataset rows.

    A scope belongs to one query (or one insertion during a build); nodes are
    evaluated at most once, so the counter equals the number of distinct rows
    touched plus any extra evaluations charged through :meth:`charge`.
    """

    data: np.ndarray
    query: np.ndarray
    counter: DistCounter = field(default_factory=DistCounter)
    _cache: Dict[int, float] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.query = np.asarray(self.query)
        if self.query.ndim != 1 or self.query.shape[0] != self.data.shape[1]:
            raise DimensionMismatchError(
                f"query of shape {self.query.shape} against dimension {self.data.shape[1]}"
            )

    def __contains__(self, node: int) -> bool:
        return node in self._cache

    @property
    def evaluated(self) -> int:
        return len(self._cache)

    def distance(self, node: int) -> float:
        """Squared distance to one row."""
        cached = self._cache.get(node)
        if cached is None:
            cached = squared_euclidean(self.data[node], self.query, self.counter)
            self._cache[node] = cached
        return cached

    def lookup(self, nodes: Sequence[int]) -> List[Candidate]:
        """Candidates for ``nodes`` (deduplicated, in order); unseen rows in one batch."""
        unique = list(dict.fromkeys(nodes))
        new = [v for v in unique if v not in self._cache]
        if new:
            values = squared_euclidean_many(self.data[new], self.query, self.counter)
            self._cache.update(zip(new, values.tolist()))
        return [Candidate(v, self._cache[v]) for v in unique]

    def annotate(self, nodes: Sequence[int]) -> List[Candidate]:
        """Squared-distance candidates for ``nodes`` (deduplicated), sorted."""
        return sort_candidates(self.lookup(nodes))

    def remember(self, seeds: Iterable[Candidate]) -> None:
        """Adopt pre-annotated squared distances without charging the counter."""
        for c in seeds:
            self._cache.setdefault(c.node, c.dist)

    def known(self) -> Tuple[np.ndarray, np.ndarray]:
        """Evaluated nodes ascending by id, with their squared distances."""
        if not self._cache:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
        ids = np.fromiter(self._cache.keys(), dtype=np.int64, count=len(self._cache))
        d2 = np.fromiter(self._cache.values(), dtype=np.float64, count=len(self._cache))
        order = np.argsort(ids)
        return ids[order], d2[order]

    def absorb(self, nodes: np.ndarray, d2: np.ndarray) -> None:
        """Record rows a compiled loop evaluated for this scope; one count each."""
        self.counter.add(len(nodes))
        self._cache.update(zip(nodes.tolist(), d2.tolist()))

    def charge(self, rows: np.ndarray) -> np.ndarray:
        """Evaluate non-node vectors (centroids); always counted."""
        return squared_euclidean_many(rows, self.query, self.counter)
