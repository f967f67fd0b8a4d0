"""Adjacency structures, connectivity repair and the GANN index file format."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import DistCounter, squared_euclidean_many
from .data import VectorSet
from .errors import (
    BadMagicError,
    DegreeCapError,
    GraphInvariantError,
    ParameterError,
    TruncatedIndexError,
    UnknownKindError,
    UnsupportedVersionError,
)
from .models import DCMode, GraphStats

if TYPE_CHECKING:
    from .diversify import Diversifier

logger = logging.getLogger(__name__)

MAGIC = b"GANN"
VERSION = 1
KIND_FLAT, KIND_LAYERED, KIND_PARTITIONED = 0, 1, 2
_HEADER = struct.Struct("<4sIBQII")


class FlatGraph:
    """Directed adjacency with a hard out-degree cap, stored as arrays.

    ``ids`` is an ``(n, cap_r)`` int32 table padded with -1 and ``deg`` holds
    the live length of each row. Writers fill a row before publishing its
    degree and compiled readers skip -1 slots, so a concurrent reader only
    ever sees valid node ids.
    """

    def __init__(
        self,
        n: int,
        cap_r: int,
        dim: int = 0,
        adjacency: Optional[Sequence[Sequence[int]]] = None,
    ) -> None:
        if n < 1 or cap_r < 1:
            raise ParameterError(f"a graph needs n >= 1 and cap_r >= 1, got {n}, {cap_r}")
        self.n = n
        self.cap_r = cap_r
        self.dim = dim
        self.ids = np.full((n, cap_r), -1, dtype=np.int32)
        self.deg = np.zeros(n, dtype=np.int32)
        if adjacency is not None:
            if len(adjacency) != n:
                raise GraphInvariantError(f"{len(adjacency)} adjacency lists for {n} nodes")
            for u, ids in enumerate(adjacency):
                self.set_neighbors(u, ids)

    def neighbors(self, u: int) -> List[int]:
        """A fresh list of ``u``'s out-neighbors in stored order."""
        return self.ids[u, : self.deg[u]].tolist()

    def degree(self, u: int) -> int:
        return int(self.deg[u])

    def has_room(self, u: int) -> bool:
        return int(self.deg[u]) < self.cap_r

    def _check(self, u: int, ids: Sequence[int]) -> None:
        if len(ids) > self.cap_r:
            raise DegreeCapError(f"node {u}: degree {len(ids)} exceeds cap {self.cap_r}")
        if len(set(ids)) != len(ids):
            raise GraphInvariantError(f"node {u}: duplicate neighbors")
        for v in ids:
            if v == u:
                raise GraphInvariantError(f"node {u}: self-loop")
            if not 0 <= v < self.n:
                raise GraphInvariantError(f"node {u}: neighbor {v} out of range")

    def set_neighbors(self, u: int, ids: Sequence[int]) -> None:
        ids = [int(v) for v in ids]
        self._check(u, ids)
        row = np.full(self.cap_r, -1, dtype=np.int32)
        row[: len(ids)] = ids
        self.ids[u] = row
        self.deg[u] = len(ids)

    def add_neighbor(self, u: int, v: int) -> bool:
        """Append ``v`` to ``u``'s list; False if already present."""
        size = int(self.deg[u])
        if v in self.ids[u, :size]:
            return False
        if size >= self.cap_r:
            raise DegreeCapError(f"node {u} is at cap {self.cap_r}")
        if v == u or not 0 <= v < self.n:
            raise GraphInvariantError(f"invalid edge {u} -> {v}")
        self.ids[u, size] = v
        self.deg[u] = size + 1
        return True

    def edges(self) -> Iterator[Tuple[int, int]]:
        for u in range(self.n):
            for v in self.neighbors(u):
                yield u, v

    @property
    def num_edges(self) -> int:
        return int(self.deg.sum())

    @property
    def max_degree(self) -> int:
        return int(self.deg.max())

    def validate(self) -> None:
        """Walk every row and raise on the first broken invariant."""
        for u in range(self.n):
            if not 0 <= self.deg[u] <= self.cap_r:
                raise DegreeCapError(f"node {u}: degree {self.deg[u]} outside [0, {self.cap_r}]")
            self._check(u, self.neighbors(u))

    def copy(self) -> "FlatGraph":
        g = FlatGraph(self.n, self.cap_r, self.dim)
        g.ids = self.ids.copy()
        g.deg = self.deg.copy()
        return g

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FlatGraph):
            return False
        if (self.n, self.cap_r) != (other.n, other.cap_r):
            return False
        if not np.array_equal(self.deg, other.deg):
            return False
        live = np.arange(self.cap_r) < self.deg[:, None]
        return bool(np.array_equal(self.ids[live], other.ids[live]))

    def __repr__(self) -> str:
        return f"FlatGraph(n={self.n}, cap_r={self.cap_r}, edges={self.num_edges})"


def new_graph(n: int, cap_r: int, dim: int = 0) -> FlatGraph:
    return FlatGraph(n, cap_r, dim)


@dataclass
class LayeredGraph:
    """Stacked layers for SN; ``layers[0]`` is the base, the last is the top.

    ``levels[u]`` is the highest layer containing ``u``; layer sets nest.
    """

    layers: List[FlatGraph]
    levels: np.ndarray
    entry: int

    @property
    def base(self) -> FlatGraph:
        return self.layers[0]

    @property
    def top_level(self) -> int:
        return len(self.layers) - 1

    @property
    def n(self) -> int:
        return self.base.n

    def members(self, level: int) -> np.ndarray:
        return np.flatnonzero(self.levels >= level)

    def validate(self) -> None:
        if int(self.levels[self.entry]) != self.top_level:
            raise GraphInvariantError("entry must be a member of the top layer")
        for level, layer in enumerate(self.layers):
            layer.validate()
            for u, v in layer.edges():
                if self.levels[u] < level or self.levels[v] < level:
                    raise GraphInvariantError(f"edge {u}->{v} in layer {level} skips membership")

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, LayeredGraph)
            and self.entry == other.entry
            and self.layers == other.layers
            and np.array_equal(self.levels, other.levels)
        )


@dataclass
class Partition:
    """One DC partition; graph node i is global node ``members[i]``."""

    members: np.ndarray
    centroid: np.ndarray
    graph: FlatGraph
    _values: Optional[np.ndarray] = field(default=None, repr=False)

    def local_values(self, values: np.ndarray) -> np.ndarray:
        """Member rows in local-id order, gathered once."""
        if self._values is None:
            self._values = np.ascontiguousarray(values[self.members])
        return self._values

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Partition)
            and np.array_equal(self.members, other.members)
            and np.array_equal(self.centroid, other.centroid)
            and self.graph == other.graph
        )


@dataclass
class PartitionedIndex:
    partitions: List[Partition]
    mode: DCMode
    n: int
    dim: int
    cap_r: int = field(default=1)
    _merged: Optional[FlatGraph] = field(default=None, repr=False)

    @property
    def centroids(self) -> np.ndarray:
        return np.stack([p.centroid for p in self.partitions])

    def merged_graph(self) -> FlatGraph:
        """Union of partition edges over global ids."""
        if self._merged is not None:
            return self._merged
        g = FlatGraph(self.n, self.cap_r, self.dim)
        for part in self.partitions:
            for u in range(part.graph.n):
                g.set_neighbors(int(part.members[u]), part.members[part.graph.neighbors(u)].tolist())
        self._merged = g
        return g

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, PartitionedIndex)
            and self.mode == other.mode
            and self.n == other.n
            and self.dim == other.dim
            and self.partitions == other.partitions
        )


Index = Union[FlatGraph, LayeredGraph, PartitionedIndex]


# ------------------------------------------------------------------ connectivity


def _spanning_tree(g: FlatGraph, entry: int) -> Tuple[np.ndarray, np.ndarray]:
    """Reachable mask and a parent per reached node (the entry is its own parent)."""
    seen = np.zeros(g.n, dtype=bool)
    parent = np.full(g.n, -1, dtype=np.int64)
    seen[entry] = True
    parent[entry] = entry
    _grow(g, entry, seen, parent)
    return seen, parent


def _grow(g: FlatGraph, start: int, seen: np.ndarray, parent: np.ndarray) -> None:
    stack = [start]
    while stack:
        u = stack.pop()
        for v in g.neighbors(u):
            if not seen[v]:
                seen[v] = True
                parent[v] = u
                stack.append(v)


def reachable(g: FlatGraph, entry: int) -> np.ndarray:
    """Boolean mask of nodes reachable from ``entry`` along directed edges."""
    return _spanning_tree(g, entry)[0]


def _rewire(g: FlatGraph, x: int, ids: Sequence[int], indeg: np.ndarray) -> None:
    for v in g.neighbors(x):
        indeg[v] -= 1
    g.set_neighbors(x, ids)
    for v in g.neighbors(x):
        indeg[v] += 1


def _link_from_reachable(
    g: FlatGraph,
    u: int,
    seen: np.ndarray,
    parent: np.ndarray,
    indeg: np.ndarray,
    vectors: VectorSet,
    counter: DistCounter,
    diversifier: Optional["Diversifier"],
) -> int:
    """Add an edge x -> u from some reached x without cutting a tree edge; returns x."""
    sources = np.flatnonzero(seen)
    d2 = squared_euclidean_many(vectors.values[sources], vectors[u], counter)
    order = sources[np.lexsort((sources, d2))].tolist()
    v = order[0]
    if g.has_room(v):
        _rewire(g, v, g.neighbors(v) + [u], indeg)
        return v
    if diversifier is not None:
        current = g.neighbors(v)
        kept = diversifier.prune_node(vectors, v, current + [u], counter)
        children = [w for w in current if parent[w] == v]
        if u in kept and all(w in kept for w in children):
            _rewire(g, v, kept, indeg)
            return v
    for w in order[1:]:
        if g.has_room(w):
            _rewire(g, w, g.neighbors(w) + [u], indeg)
            return w
    # all reached nodes are full; evict the best-covered non-tree target
    for w in order:
        current = g.neighbors(w)
        spare = [x for x in current if parent[x] != w]
        if spare:
            drop = max(spare, key=lambda x: (indeg[x], x))
            _rewire(g, w, [u if x == drop else x for x in current], indeg)
            return w
    raise GraphInvariantError(f"no reachable node can link to {u}")


def ensure_connected(
    g: FlatGraph,
    entry: int,
    vectors: VectorSet,
    counter: DistCounter,
    diversifier: Optional["Diversifier"] = None,
) -> FlatGraph:
    """Make every node reachable from ``entry``; returns a repaired copy.

    Each unreachable node u, in id order, is linked from its nearest reachable
    node v (v -> u, plus u -> v when u has room). A full v is re-pruned by
    ``diversifier`` with u added, and the result is used only if u and every
    spanning-tree child of v survive. Otherwise the nearest reachable node with
    room takes the edge. When every reachable node is full, the nearest one
    with an edge outside the spanning tree swaps that edge for u. Tree edges
    are never removed, so the reachable set only grows and one pass suffices.
    """
    if not 0 <= entry < g.n:
        raise ParameterError(f"entry {entry} outside [0, {g.n})")
    g = g.copy()
    seen, parent = _spanning_tree(g, entry)
    indeg = np.bincount(g.ids[g.ids >= 0], minlength=g.n).astype(np.int64)
    repaired = 0
    for u in np.flatnonzero(~seen).tolist():
        if seen[u]:
            continue
        v = _link_from_reachable(g, u, seen, parent, indeg, vectors, counter, diversifier)
        seen[u] = True
        parent[u] = v
        if g.has_room(u) and v not in g.neighbors(u):
            g.add_neighbor(u, v)
            indeg[v] += 1
        repaired += 1
        _grow(g, u, seen, parent)
    if repaired:
        logger.info("connectivity repair linked %d nodes", repaired)
    return g


def graph_stats(g: FlatGraph, entry: Optional[int] = None) -> GraphStats:
    edges = g.num_edges
    return GraphStats(
        nodes=g.n,
        edges=edges,
        mean_degree=edges / g.n,
        max_degree=g.max_degree,
        footprint_bytes=4 * (edges + g.n),
        reachable_fraction=None if entry is None else float(reachable(g, entry).mean()),
    )


# --------------------------------------------------------------------- file format


class IndexWriter:
    """Little-endian byte builder for GANN payloads."""

    def __init__(self) -> None:
        self.buf = bytearray()

    def pack(self, fmt: str, *values: object) -> None:
        self.buf += struct.pack("<" + fmt, *values)

    def u32_array(self, values: Sequence[int]) -> None:
        self.buf += np.asarray(values, dtype="<u4").tobytes()

    def f32_array(self, values: np.ndarray) -> None:
        self.buf += np.asarray(values, dtype="<f4").tobytes()

    def flat(self, g: FlatGraph) -> None:
        """Per node: its degree, then its neighbor ids."""
        words = np.zeros(g.n + g.num_edges, dtype=np.int64)
        starts = np.cumsum(g.deg.astype(np.int64) + 1) - (g.deg + 1)
        words[starts] = g.deg
        live = np.arange(g.cap_r) < g.deg[:, None]
        slots = starts[:, None] + 1 + np.arange(g.cap_r)
        words[slots[live]] = g.ids[live]
        self.u32_array(words)


class IndexReader:
    """Cursor over GANN bytes; running off the end is a truncation error."""

    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self.raw) - self.offset

    def take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.raw):
            raise TruncatedIndexError(f"index truncated at byte {self.offset}")
        chunk = self.raw[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def u32(self) -> int:
        return int(self.unpack("I")[0])

    def u32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<u4").astype(np.int64)

    def f32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)

    def flat(self, n: int, cap_r: int, dim: int) -> FlatGraph:
        adjacency = []
        for _ in range(n):
            adjacency.append(self.u32_array(self.u32()).tolist())
        try:
            return FlatGraph(n, cap_r, dim, adjacency)
        except GraphInvariantError as exc:
            raise TruncatedIndexError(f"corrupt adjacency: {exc}") from exc


def _index_dims(index: Index) -> Tuple[int, int, int, int]:
    if isinstance(index, FlatGraph):
        return KIND_FLAT, index.n, index.dim, index.cap_r
    if isinstance(index, LayeredGraph):
        return KIND_LAYERED, index.n, index.base.dim, index.base.cap_r
    if isinstance(index, PartitionedIndex):
        return KIND_PARTITIONED, index.n, index.dim, index.cap_r
    raise ParameterError(f"cannot serialize {type(index).__name__}")


def index_bytes(index: Index) -> bytes:
    kind, n, dim, cap_r = _index_dims(index)
    w = IndexWriter()
    w.buf += _HEADER.pack(MAGIC, VERSION, kind, n, dim, cap_r)
    if isinstance(index, FlatGraph):
        w.flat(index)
    elif isinstance(index, LayeredGraph):
        w.pack("I", len(index.layers))
        for level, layer in enumerate(index.layers):
            w.flat(layer)
            members = index.members(level)
            w.pack("I", len(members))
            w.u32_array(members)
        w.pack("I", index.entry)
    else:
        w.pack("B", 0 if index.mode == DCMode.MERGED else 1)
        w.pack("I", len(index.partitions))
        for part in index.partitions:
            w.pack("I", len(part.members))
            w.u32_array(part.members)
            w.f32_array(part.centroid)
            w.flat(part.graph)
    return bytes(w.buf)


def save_index(index: Index, path: Union[str, Path], trailer: bytes = b"") -> None:
    """Write ``index`` in the GANN format, followed by optional extra sections."""
    Path(path).write_bytes(index_bytes(index) + trailer)


def read_index(r: IndexReader) -> Index:
    if r.raw[r.offset : r.offset + 4] != MAGIC:
        raise BadMagicError("not a GANN index (bad magic)")
    _, version, kind, n, dim, cap_r = _HEADER.unpack(r.take(_HEADER.size))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if kind == KIND_FLAT:
        return r.flat(n, cap_r, dim)
    if kind == KIND_LAYERED:
        layers = []
        levels = np.zeros(n, dtype=np.int64)
        for level in range(r.u32()):
            layers.append(r.flat(n, cap_r, dim))
            levels[r.u32_array(r.u32())] = level
        return LayeredGraph(layers, levels, r.u32())
    if kind == KIND_PARTITIONED:
        mode = DCMode.MERGED if r.unpack("B")[0] == 0 else DCMode.SEPARATE
        partitions = []
        for _ in range(r.u32()):
            members = r.u32_array(r.u32())
            centroid = r.f32_array(dim)
            graph = r.flat(len(members), cap_r, dim)
            partitions.append(Partition(members, centroid, graph))
        return PartitionedIndex(partitions, mode, n, dim, cap_r)
    raise UnknownKindError(f"unknown index kind byte {kind}")


def load_index(path: Union[str, Path]) -> Index:
    return read_index(IndexReader(Path(path).read_bytes()))
