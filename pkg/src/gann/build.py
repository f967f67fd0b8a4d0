"""Graph construction: incremental insertion, NN-Descent, ND refinement and DC.

Every builder owns a :class:`~gann.profiler.Profiler`; the phase counters are
the only place distance evaluations are charged, so a ``BuildReport`` total is
always the sum of its phases.
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from typing import ContextManager, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .config import settings
from .core import Candidate, DistanceScope, DistCounter, squared_euclidean_many, stream
from .data import VectorSet
from .diversify import CandidateList, Diversifier, pruning_ratio
from .errors import ParameterError
from .graph import (
    FlatGraph,
    Index,
    LayeredGraph,
    Partition,
    PartitionedIndex,
    ensure_connected,
    graph_stats,
)
from .models import BuildAlgo, BuildParams, BuildReport, DCMode, NDKind, SSKind
from .profiler import Profiler
from .search import beam
from .seeds import (
    SeedIndex,
    approximate_medoid,
    build_seed_index,
    draw_levels,
    greedy_descend,
    ks_seeds,
)

logger = logging.getLogger(__name__)

SHUFFLE_STREAM = 0x5348_5546_0000_0000
NND_STREAM = 0x4E4E_4400_0000_0000
PARTITION_STREAM = 0x5041_5254_0000_0000
# KS seeds during insertion must not replay the query-time draws
KS_BUILD_SALT = 0x4255_494C_4400_0000


@dataclass
class BuildResult:
    index: Index
    seed_index: Optional[SeedIndex]
    report: BuildReport


def _report(
    algo: str,
    profiler: Profiler,
    g: FlatGraph,
    entry: Optional[int],
    **extra: object,
) -> BuildReport:
    wall_time = profiler.stop()
    logger.debug("%s bottlenecks: %s", algo, profiler.summary()["bottlenecks"])
    return BuildReport(
        algo=algo,
        distance_calcs=profiler.distance_calcs,
        wall_time=wall_time,
        phases=profiler.phase_reports(),
        stats=graph_stats(g, entry),
        **extra,
    )


# ------------------------------------------------------------- incremental (II)


class IncrementalBuilder:
    """Inserts nodes one at a time into a flat graph, or a layered one for SN.

    Each node is located by a beam search over the already-inserted portion,
    wired to the survivors of ``p.nd`` over that search's pool and visited set,
    and linked back from each survivor. A survivor whose list is full is
    re-pruned over its list plus the new node.
    """

    def __init__(self, vectors: VectorSet, p: BuildParams) -> None:
        self.vectors = vectors
        self.p = p
        self.profiler = Profiler("ii")
        self.diversifier = Diversifier.from_params(p)
        self.layered = p.ss == SSKind.SN
        n = vectors.n
        if p.shuffle:
            self.order = stream(p.seed, SHUFFLE_STREAM).permutation(n)
        else:
            self.order = np.arange(n)
        if self.layered:
            self.levels = draw_levels(n, p.m, p.seed)
            height = int(self.levels.max()) + 1
        else:
            self.levels = np.zeros(n, dtype=np.int64)
            height = 1
        self.layers = [FlatGraph(n, p.cap_r, vectors.d) for _ in range(height)]
        self.entry = int(self.order[0])
        self.top = int(self.levels[self.entry])
        self.inserted = np.zeros(n, dtype=bool)
        self.inserted_order: List[int] = []
        self.seed_index: Optional[SeedIndex] = None
        self._locks = [threading.Lock() for _ in range(n)] if p.workers > 1 else None
        self._entry_lock = threading.Lock()

    def _lock(self, u: int) -> ContextManager[object]:
        return self._locks[u] if self._locks is not None else nullcontext()

    def _mark(self, u: int) -> None:
        self.inserted_order.append(u)
        self.inserted[u] = True

    def _seeds(self, u: int, scope: DistanceScope) -> List[Candidate]:
        """Build-time seeds, restricted to nodes already in the graph."""
        assert self.seed_index is not None
        idx = self.seed_index
        done = self.inserted_order
        count = len(done)
        s = self.p.seed_count_s or self.p.beam_l_build
        if idx.kind == SSKind.KS:
            picks = ks_seeds(count, min(s, count), u, self.p.seed ^ KS_BUILD_SALT)
            return scope.annotate([done[i] for i in picks])
        if idx.kind in (SSKind.MD, SSKind.SF):
            node = idx.node if self.inserted[idx.node] else done[0]
            return [Candidate(node, scope.distance(node))]
        pool = [v for v in idx.pool(self.vectors[u], s, scope) if self.inserted[v]]
        return scope.annotate(pool or [done[0]])[:s]

    def _connect(
        self, g: FlatGraph, u: int, neighbors: List[int], counter: DistCounter
    ) -> None:
        with self._lock(u):
            g.set_neighbors(u, neighbors)
        for v in neighbors:
            with self._lock(v):
                current = g.neighbors(v)
                if u in current:
                    continue
                if len(current) < g.cap_r:
                    g.add_neighbor(v, u)
                else:
                    kept = self.diversifier.prune_node(self.vectors, v, current + [u], counter)
                    g.set_neighbors(v, kept)

    def _insert(self, u: int, prof: Profiler) -> Tuple[int, int]:
        level = int(self.levels[u])
        with self._entry_lock:
            entry, top = self.entry, self.top
        seen = kept = 0
        with prof.time_block("candidate_search") as counter:
            scope = DistanceScope(self.vectors.values, self.vectors[u], counter)
            if self.layered:
                cur = entry
                for at in range(top, level, -1):
                    cur = greedy_descend(self.layers[at], cur, scope)
                seeds = [Candidate(cur, scope.distance(cur))]
            else:
                seeds = self._seeds(u, scope)
        for at in range(min(level, top), -1, -1):
            with prof.time_block("candidate_search"):
                outcome = beam(self.layers[at], scope, seeds, self.p.beam_l_build)
            candidates = CandidateList.merge(
                u,
                np.concatenate([outcome.pool_ids, outcome.expanded_ids]),
                np.concatenate([outcome.pool_d2, outcome.expanded_d2]),
            )
            with prof.time_block("pruning") as counter:
                neighbors = self.diversifier.prune(self.vectors, candidates, counter)
                self._connect(self.layers[at], u, neighbors, counter)
            seen += len(candidates)
            kept += len(neighbors)
            seeds = outcome.pool
        self._mark(u)
        if level > top:
            with self._entry_lock:
                if level > self.top:
                    self.entry, self.top = u, level
        return seen, kept

    def _insert_all(self, nodes: Sequence[int], prof: Profiler) -> Tuple[int, int]:
        seen = kept = 0
        for i, u in enumerate(nodes, 1):
            a, b = self._insert(int(u), prof)
            seen += a
            kept += b
            if i % 10_000 == 0:
                logger.debug("%s: inserted %d/%d", prof.label, i, len(nodes))
        return seen, kept

    def _insert_parallel(self, nodes: List[int]) -> Tuple[int, int]:
        workers = min(self.p.workers, len(nodes))
        chunks = [nodes[i::workers] for i in range(workers)]
        profilers = [Profiler(f"ii-worker-{i}") for i in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            totals = list(pool.map(self._insert_all, chunks, profilers))
        for prof in profilers:
            self.profiler.merge(prof)
        return sum(t[0] for t in totals), sum(t[1] for t in totals)

    def run(self) -> BuildResult:
        p = self.p
        with self.profiler.time_block("seed_index") as counter:
            if not self.layered:
                self.seed_index = build_seed_index(self.vectors, p, counter)
        self._mark(self.entry)
        rest = self.order[1:].tolist()
        if p.workers > 1 and len(rest) > 1:
            seen, kept = self._insert_parallel(rest)
        else:
            seen, kept = self._insert_all(rest, self.profiler)

        index: Index
        if self.layered:
            index = LayeredGraph(self.layers, self.levels, self.entry)
            self.seed_index = build_seed_index(self.vectors, p, DistCounter(), layered=index)
        else:
            index = self.layers[0]
        report = _report(
            "ii", self.profiler, self.layers[0], self.entry,
            pruning_ratio=pruning_ratio(seen, kept),
        )
        return BuildResult(index, self.seed_index, report)


def build_ii(vectors: VectorSet, p: BuildParams) -> Tuple[Index, BuildReport]:
    """II build: FlatGraph, or LayeredGraph when ``p.ss`` is SN."""
    result = IncrementalBuilder(vectors, p).run()
    return result.index, result.report


# ------------------------------------------------------ neighborhood propagation


@dataclass
class KnnTable:
    """Bounded neighbor rows sorted by (squared distance, id), with new flags."""

    ind: np.ndarray
    dist: np.ndarray
    flag: np.ndarray

    def rows(self) -> List[List[int]]:
        return self.ind.tolist()


def _random_table(
    vectors: VectorSet, k: int, seed: int, counter: DistCounter
) -> KnnTable:
    n = vectors.n
    rng = stream(seed, NND_STREAM)
    ind = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float64)
    for u in range(n):
        picks = rng.choice(n - 1, size=k, replace=False)
        picks[picks >= u] += 1
        d2 = squared_euclidean_many(vectors.values[picks], vectors[u], counter)
        order = np.lexsort((picks, d2))
        ind[u] = picks[order]
        dist[u] = d2[order]
    return KnnTable(ind, dist, np.ones((n, k), dtype=np.uint8))


def _join_round(vectors: VectorSet, table: KnnTable, counter: DistCounter) -> int:
    """One local join over forward and reverse neighbors; returns accepted updates."""
    accepted, evaluations = kernels.local_join(vectors.values, table.ind, table.dist, table.flag)
    counter.add(int(evaluations))
    return int(accepted)


def _check_nnd(n: int, k: int, max_iters: int, delta: float) -> None:
    if not 1 <= k < n:
        raise ParameterError(f"NN-Descent needs 1 <= k < n, got k={k}, n={n}")
    if max_iters < 1:
        raise ParameterError("max_iters must be >= 1")
    if not 0.0 <= delta < 1.0:
        raise ParameterError(f"delta must be in [0, 1), got {delta}")


def _propagate(
    vectors: VectorSet,
    k: int,
    max_iters: int,
    delta: float,
    seed: int,
    counter: DistCounter,
) -> Tuple[KnnTable, List[int]]:
    _check_nnd(vectors.n, k, max_iters, delta)
    table = _random_table(vectors, k, seed, counter)
    updates: List[int] = []
    threshold = delta * vectors.n * k
    for it in range(max_iters):
        accepted = _join_round(vectors, table, counter)
        updates.append(accepted)
        logger.debug("nndescent iteration %d: %d updates", it + 1, accepted)
        if accepted == 0 or accepted < threshold:
            break
    return table, updates


def random_knn_graph(vectors: VectorSet, k: int, seed: int = 0) -> FlatGraph:
    """The NN-Descent starting point: k distinct random out-neighbors per node."""
    _check_nnd(vectors.n, k, 1, 0.0)
    table = _random_table(vectors, k, seed, DistCounter())
    return FlatGraph(vectors.n, k, vectors.d, table.rows())


def nndescent(
    vectors: VectorSet,
    k: int,
    max_iters: int = settings.nnd_max_iters,
    delta: float = settings.nnd_delta,
    seed: int = 0,
) -> Tuple[FlatGraph, BuildReport]:
    """Approximate k-NN graph by neighborhood propagation."""
    profiler = Profiler("nnd")
    with profiler.time_block("propagation") as counter:
        table, updates = _propagate(vectors, k, max_iters, delta, seed, counter)
    g = FlatGraph(vectors.n, k, vectors.d, table.rows())
    report = _report("nnd", profiler, g, None, iterations=len(updates), updates=updates)
    return g, report


def _refine(
    g: FlatGraph, vectors: VectorSet, div: Diversifier, counter: DistCounter
) -> FlatGraph:
    out = FlatGraph(g.n, div.cap_r, vectors.d)
    for u in range(g.n):
        ids = g.neighbors(u)
        if div.kind == NDKind.NOND and len(ids) <= div.cap_r:
            out.set_neighbors(u, ids)
            continue
        kept = set(div.prune_node(vectors, u, ids, counter))
        out.set_neighbors(u, [v for v in ids if v in kept])
    return out


def refine_with_nd(
    g: FlatGraph, vectors: VectorSet, nd: NDKind, p: BuildParams
) -> Tuple[FlatGraph, BuildReport, float]:
    """Re-prune every list of ``g`` with ``nd``; surviving edges keep their order."""
    if g.n != vectors.n:
        raise ParameterError(f"graph over {g.n} nodes, data has {vectors.n}")
    div = Diversifier.from_params(p, nd)
    profiler = Profiler(f"refine-{div.label}")
    with profiler.time_block("pruning") as counter:
        out = _refine(g, vectors, div, counter)
    ratio = pruning_ratio(g.num_edges, out.num_edges)
    report = _report(profiler.label, profiler, out, None, pruning_ratio=ratio)
    return out, report, ratio


def _run_nnd(vectors: VectorSet, p: BuildParams) -> BuildResult:
    """NN-Descent base graph, ND refinement (unless NoND), connectivity repair."""
    profiler = Profiler("nnd")
    ratio = None
    iterations = 0
    g = FlatGraph(vectors.n, p.cap_r, vectors.d)
    if vectors.n > 1:
        k = min(p.cap_r, vectors.n - 1)
        with profiler.time_block("propagation") as counter:
            table, updates = _propagate(
                vectors, k, p.nnd_max_iters, p.nnd_delta, p.seed, counter
            )
        iterations = len(updates)
        g = FlatGraph(vectors.n, p.cap_r, vectors.d, table.rows())
        if p.nd != NDKind.NOND:
            with profiler.time_block("pruning") as counter:
                refined = _refine(g, vectors, Diversifier.from_params(p), counter)
            ratio = pruning_ratio(g.num_edges, refined.num_edges)
            g = refined
    with profiler.time_block("repair") as counter:
        entry = approximate_medoid(vectors, counter)
        g = ensure_connected(g, entry, vectors, counter, Diversifier.from_params(p))
    with profiler.time_block("seed_index") as counter:
        seed_index = build_seed_index(vectors, p, counter)
    report = _report("nnd", profiler, g, entry, pruning_ratio=ratio, iterations=iterations)
    return BuildResult(g, seed_index, report)


# ------------------------------------------------------------ divide and conquer


def balanced_partition(
    vectors: VectorSet,
    leaf_size: int,
    seed: int,
    counter: Optional[DistCounter] = None,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Recursive balanced 2-means into disjoint parts of at most ``leaf_size``.

    Points are ordered by how much closer they are to the first center than to
    the second and cut at the middle, so children differ in size by at most one.
    Members come back ascending; centroids are float32 means.
    """
    if leaf_size < 2:
        raise ParameterError(f"leaf_size must be >= 2, got {leaf_size}")
    counter = counter or DistCounter()
    rng = stream(seed, PARTITION_STREAM)
    values = vectors.values
    out: List[Tuple[np.ndarray, np.ndarray]] = []

    def split(members: np.ndarray) -> None:
        if len(members) <= leaf_size:
            centroid = values[members].astype(np.float64).mean(axis=0)
            out.append((members, centroid.astype(np.float32)))
            return
        pts = values[members]
        centers = pts[rng.choice(len(members), size=2, replace=False)].astype(np.float64)
        half = len(members) // 2
        for _ in range(settings.km_iters):
            gap = squared_euclidean_many(pts, centers[0], counter) - squared_euclidean_many(
                pts, centers[1], counter
            )
            order = np.lexsort((members, gap))
            left, right = order[:half], order[half:]
            centers = np.stack(
                [pts[side].astype(np.float64).mean(axis=0) for side in (left, right)]
            )
        split(np.sort(members[left]))
        split(np.sort(members[right]))

    split(np.arange(vectors.n, dtype=np.int64))
    return out


def _nearest_first(
    vectors: VectorSet, members: np.ndarray, centroid: np.ndarray, counter: DistCounter
) -> np.ndarray:
    """Move the member nearest the centroid to local id 0 (the partition seed)."""
    d2 = squared_euclidean_many(vectors.values[members], centroid, counter)
    best = int(np.lexsort((members, d2))[0])
    return np.concatenate([members[best : best + 1], np.delete(members, best)])


def _build_part(vectors: VectorSet, p: BuildParams) -> Tuple[Profiler, BuildResult]:
    builder = IncrementalBuilder(vectors, p)
    result = builder.run()
    return builder.profiler, result


def _run_dc(vectors: VectorSet, p: BuildParams, mode: DCMode) -> BuildResult:
    if p.ss == SSKind.SN:
        raise ParameterError("divide-and-conquer builds flat partitions; SN needs --algo ii")
    profiler = Profiler(f"dc-{mode.value}")
    with profiler.time_block("partition") as counter:
        parts = balanced_partition(vectors, p.leaf_size, p.seed, counter)
        if mode == DCMode.SEPARATE:
            parts = [(_nearest_first(vectors, m, c, counter), c) for m, c in parts]
    logger.info("partitioned %d points into %d parts", vectors.n, len(parts))

    sub_params = p.model_copy(update={"deterministic": True, "threads": 1})
    subsets = [vectors.subset(members) for members, _ in parts]
    if p.workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=min(p.workers, len(parts))) as pool:
            built = list(pool.map(lambda s: _build_part(s, sub_params), subsets))
    else:
        built = [_build_part(s, sub_params) for s in subsets]
    for sub_profiler, _ in built:
        profiler.merge(sub_profiler)

    if mode == DCMode.SEPARATE:
        partitions = []
        for (members, centroid), (_, result) in zip(parts, built):
            assert isinstance(result.index, FlatGraph)
            partitions.append(Partition(members, centroid, result.index))
        index = PartitionedIndex(partitions, mode, vectors.n, vectors.d, p.cap_r)
        report = _report(profiler.label, profiler, index.merged_graph(), None)
        return BuildResult(index, None, report)

    g = FlatGraph(vectors.n, p.cap_r, vectors.d)
    for (members, _), (_, result) in zip(parts, built):
        assert isinstance(result.index, FlatGraph)
        for u in range(len(members)):
            g.set_neighbors(int(members[u]), members[result.index.neighbors(u)].tolist())
    with profiler.time_block("repair") as counter:
        entry = approximate_medoid(vectors, counter)
        g = ensure_connected(g, entry, vectors, counter, Diversifier.from_params(p))
    with profiler.time_block("seed_index") as counter:
        seed_index = build_seed_index(vectors, p, counter)
    return BuildResult(g, seed_index, _report(profiler.label, profiler, g, entry))


def build_dc(
    vectors: VectorSet, p: BuildParams, mode: DCMode = DCMode.MERGED
) -> Tuple[Index, BuildReport]:
    """Merged: one repaired FlatGraph. Separate: a PartitionedIndex."""
    result = _run_dc(vectors, p, mode)
    return result.index, result.report


# ------------------------------------------------------------------- dispatcher


def build_index(
    vectors: VectorSet,
    p: BuildParams,
    algo: BuildAlgo = BuildAlgo.II,
    mode: DCMode = DCMode.MERGED,
) -> BuildResult:
    """Run one construction recipe and return the index with its seed structure."""
    if algo != BuildAlgo.II and p.ss == SSKind.SN:
        raise ParameterError("SN seeds come from the layered II builder; use --algo ii")
    if algo == BuildAlgo.II:
        result = IncrementalBuilder(vectors, p).run()
    elif algo == BuildAlgo.NND:
        result = _run_nnd(vectors, p)
    else:
        result = _run_dc(vectors, p, mode)
    report = result.report
    logger.info(
        "built %s index: n=%d edges=%d distance_calcs=%d in %.2fs",
        report.algo,
        vectors.n,
        report.stats.edges if report.stats else 0,
        report.distance_calcs,
        report.wall_time,
    )
    return result
