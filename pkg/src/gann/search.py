"""Beam search, the full query pipeline and the recall metric."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .core import Candidate, DistanceScope, DistCounter, sort_candidates
from .data import VectorSet
from .errors import DimensionMismatchError, ParameterError
from .graph import FlatGraph, Index, LayeredGraph, Partition, PartitionedIndex
from .models import DCMode, SearchParams
from .seeds import SeedIndex, sn_descend

logger = logging.getLogger(__name__)


@dataclass
class QueryResult:
    """Answers nearest first with Euclidean distances, plus query cost."""

    answers: List[Candidate]
    distance_calcs: int
    visited: int

    @property
    def ids(self) -> List[int]:
        return [c.node for c in self.answers]


@dataclass
class BeamOutcome:
    """Final candidate pool C and expansion order V, squared distances."""

    pool_ids: np.ndarray
    pool_d2: np.ndarray
    expanded_ids: np.ndarray
    expanded_d2: np.ndarray

    def nearest(self, k: int) -> List[Candidate]:
        return [Candidate(v, d) for v, d in zip(self.pool_ids[:k].tolist(), self.pool_d2[:k].tolist())]

    @property
    def pool(self) -> List[Candidate]:
        return self.nearest(len(self.pool_ids))

    @property
    def expanded(self) -> List[Candidate]:
        return [Candidate(v, d) for v, d in zip(self.expanded_ids.tolist(), self.expanded_d2.tolist())]

    @property
    def visited(self) -> int:
        return len(self.expanded_ids)


def beam(
    g: FlatGraph, scope: DistanceScope, seeds: Iterable[Candidate], l: int
) -> BeamOutcome:
    """Best-first beam search over ``g`` from pre-annotated seeds.

    C is bounded at ``l`` and sorted by (distance, id); the nearest unexpanded
    member of C is expanded next until every member of C has been expanded.
    Distances come from ``scope``, so a node evaluated earlier in the same
    query (seed selection, upper layers) is not paid twice; nodes first met
    here are evaluated by the compiled loop and charged to the scope after.
    """
    start = sort_candidates({c.node: c for c in seeds}.values())
    seed_ids = np.fromiter((c.node for c in start), dtype=np.int64, count=len(start))
    seed_d2 = np.fromiter((c.dist for c in start), dtype=np.float64, count=len(start))
    known_ids, known_d2 = scope.known()
    pool_ids, pool_d2, exp_ids, exp_d2, new_ids, new_d2 = kernels.beam_expand(
        g.ids, g.deg, scope.data, scope.query, seed_ids, seed_d2, known_ids, known_d2, l
    )
    scope.absorb(new_ids, new_d2)
    return BeamOutcome(pool_ids, pool_d2, exp_ids, exp_d2)


def _answers(pool: Sequence[Candidate], k: int) -> List[Candidate]:
    return [Candidate(c.node, math.sqrt(c.dist)) for c in pool[:k]]


def beam_search(
    g: FlatGraph,
    vectors: VectorSet,
    q: np.ndarray,
    seeds: Sequence[Candidate],
    k: int,
    l: int,
    counter: DistCounter,
    scope: Optional[DistanceScope] = None,
) -> QueryResult:
    """Search ``g`` for the ``k`` nearest rows to ``q`` with beam width ``l``."""
    if not seeds:
        raise ParameterError("beam search needs at least one seed")
    if l < k or k < 1:
        raise ParameterError(f"need 1 <= k <= l, got k={k}, l={l}")
    if scope is None:
        scope = DistanceScope(vectors.values, q, counter)
        scope.remember(seeds)
    before = scope.counter.count
    outcome = beam(g, scope, seeds, l)
    return QueryResult(
        _answers(outcome.nearest(k), k),
        scope.counter.count - before,
        outcome.visited,
    )


def _probe(
    part: Partition, vectors: VectorSet, q: np.ndarray, k: int, l: int
) -> Tuple[List[Candidate], int, int]:
    counter = DistCounter()
    scope = DistanceScope(part.local_values(vectors.values), q, counter)
    seeds = [Candidate(0, scope.distance(0))]
    outcome = beam(part.graph, scope, seeds, l)
    hits = [Candidate(int(part.members[c.node]), c.dist) for c in outcome.nearest(k)]
    return hits, counter.count, outcome.visited


def _search_partitions(
    index: PartitionedIndex,
    vectors: VectorSet,
    q: np.ndarray,
    k: int,
    l: int,
    p: SearchParams,
) -> QueryResult:
    ranking = DistanceScope(vectors.values, q)
    d2 = ranking.charge(index.centroids)
    order = np.lexsort((np.arange(len(d2)), d2))[: p.nprobe]
    probes = [index.partitions[i] for i in order.tolist()]
    if p.parallel_probes and len(probes) > 1:
        with ThreadPoolExecutor(max_workers=len(probes)) as pool:
            outcomes = list(pool.map(lambda part: _probe(part, vectors, q, k, l), probes))
    else:
        outcomes = [_probe(part, vectors, q, k, l) for part in probes]
    merged = sort_candidates(c for hits, _, _ in outcomes for c in hits)
    calcs = ranking.counter.count + sum(n for _, n, _ in outcomes)
    visited = sum(v for _, _, v in outcomes)
    return QueryResult(_answers(merged, k), calcs, visited)


def _index_dim(index: Index) -> int:
    if isinstance(index, LayeredGraph):
        return index.base.dim
    return index.dim


def search_index(
    index: Index,
    seed_index: Optional[SeedIndex],
    vectors: VectorSet,
    q: np.ndarray,
    p: SearchParams,
    query_index: int = 0,
) -> QueryResult:
    """Seed selection, beam search and (for separate DC) partition fan-out."""
    q = np.asarray(q, dtype=np.float32)
    dim = _index_dim(index)
    if q.ndim != 1 or q.shape[0] != vectors.d or (dim and dim != vectors.d):
        raise DimensionMismatchError(
            f"query of shape {q.shape} / index dim {dim} against data dim {vectors.d}"
        )
    if index.n != vectors.n:
        raise DimensionMismatchError(f"index over {index.n} nodes, data has {vectors.n}")
    k = min(p.k, vectors.n)
    l = max(p.beam_l, k)
    if isinstance(index, PartitionedIndex) and index.mode == DCMode.SEPARATE:
        return _search_partitions(index, vectors, q, k, l, p)

    scope = DistanceScope(vectors.values, q)
    if isinstance(index, LayeredGraph):
        graph = index.base
        seeds = [sn_descend(index, q, vectors, scope.counter, scope)]
    else:
        graph = index.merged_graph() if isinstance(index, PartitionedIndex) else index
        if seed_index is None:
            raise ParameterError("a flat index needs a seed index")
        seeds = seed_index.seeds(q, p.seeds, scope, query_index)
    outcome = beam(graph, scope, seeds, l)
    return QueryResult(
        _answers(outcome.nearest(k), k), scope.counter.count, outcome.visited
    )


def recall(
    result: Union[QueryResult, Sequence[int]],
    truth: Union[Sequence[int], Sequence[Candidate], np.ndarray],
    k: int,
) -> float:
    """Fraction of the true top-k ids present in the result's top k."""
    got = result.ids if isinstance(result, QueryResult) else list(result)
    true_ids = [t.node if isinstance(t, Candidate) else int(t) for t in list(truth)[:k]]
    if len(true_ids) < k:
        raise ParameterError(f"ground truth has {len(true_ids)} entries, need {k}")
    return len(set(got[:k]) & set(true_ids)) / k
