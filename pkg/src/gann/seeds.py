"""Seed selection: SN, KD, KM, MD, SF and KS behind one ``SeedIndex`` interface.

A seed index answers "where should beam search start for this query?" with an
ordered list of candidates. Seeds carry squared distances; every evaluation is
charged to the query's :class:`~gann.core.DistanceScope`, so seeds the beam
later meets again are not paid for twice.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .config import settings
from .core import Candidate, DistanceScope, DistCounter, squared_euclidean_many, stream
from .data import VectorSet
from .errors import ParameterError, TruncatedIndexError, UnknownKindError
from .graph import (
    FlatGraph,
    Index,
    IndexReader,
    IndexWriter,
    LayeredGraph,
    index_bytes,
    read_index,
)
from .models import BuildParams, SSKind

logger = logging.getLogger(__name__)

# stream ids; KS uses the query index directly
LEVEL_STREAM = 0x4C45_5645_4C00_0000
SF_STREAM = 0x5346_0000_0000_0000
KD_STREAM = 0x4B44_0000_0000_0000
KM_STREAM = 0x4B4D_0000_0000_0000

SEED_MAGIC = b"SEED"
_KIND_CODES = {SSKind.SN: 0, SSKind.KD: 1, SSKind.KM: 2, SSKind.MD: 3, SSKind.SF: 4, SSKind.KS: 5}
_CODE_KINDS = {code: kind for kind, code in _KIND_CODES.items()}


# ------------------------------------------------------------------- SN layers


def assign_layer(xi: float, m: float) -> int:
    """Top layer of a node: ``floor(-ln(xi) / ln(M/2))``."""
    if m <= 2:
        raise ParameterError(f"M must exceed 2 (ln(M/2) > 0), got {m}")
    if not 0.0 < xi <= 1.0:
        raise ParameterError(f"xi must be in (0, 1), got {xi}")
    return int(math.floor(-math.log(xi) / math.log(m / 2.0)))


def draw_levels(n: int, m: float, seed: int) -> np.ndarray:
    """Top layer for every node, from one replayable stream."""
    if m <= 2:
        raise ParameterError(f"M must exceed 2 (ln(M/2) > 0), got {m}")
    xi = 1.0 - stream(seed, LEVEL_STREAM).random(n)
    return np.floor(-np.log(xi) / math.log(m / 2.0)).astype(np.int64)


def greedy_descend(layer: FlatGraph, start: int, scope: DistanceScope) -> int:
    """Move to the closest strictly-better neighbor until none exists."""
    cur = start
    cur_d = scope.distance(cur)
    while True:
        neighbors = scope.annotate(layer.neighbors(cur))
        if not neighbors or neighbors[0].dist >= cur_d:
            return cur
        cur, cur_d = neighbors[0]


def sn_descend(
    layers: LayeredGraph,
    q: np.ndarray,
    vectors: Optional[VectorSet],
    counter: DistCounter,
    scope: Optional[DistanceScope] = None,
) -> Candidate:
    """Descend from the fixed top entry to a base-layer seed.

    Each layer above the base is walked greedily; the node reached on layer 1
    is the seed. With only a base layer the fixed entry is returned.
    """
    if scope is None:
        if vectors is None:
            raise ParameterError("sn_descend needs the vectors or a scope")
        scope = DistanceScope(vectors.values, q, counter)
    cur = descend_to(layers, layers.entry, 1, scope)
    return Candidate(cur, scope.distance(cur))


def descend_to(layers: LayeredGraph, start: int, level: int, scope: DistanceScope) -> int:
    """Greedy descent from the top layer down to (and including) ``level``."""
    cur = start
    for at in range(layers.top_level, level - 1, -1):
        cur = greedy_descend(layers.layers[at], cur, scope)
    return cur


# ----------------------------------------------------------------------- trees


@dataclass
class TreeNode:
    """Node of a K-D or balanced k-means tree; leaves hold member ids."""

    split_dim: int = -1
    split_value: float = 0.0
    centroid: Optional[np.ndarray] = None
    children: List[int] = field(default_factory=list)
    members: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def is_leaf(self) -> bool:
        return not self.children


def _sample(n: int, fraction: float, cap: int, rng: np.random.Generator) -> np.ndarray:
    size = max(1, min(n, cap, int(round(n * fraction))))
    return np.sort(rng.choice(n, size=size, replace=False)).astype(np.int64)


def _kd_tree(values: np.ndarray, ids: np.ndarray, leaf_size: int) -> List[TreeNode]:
    nodes: List[TreeNode] = []

    def grow(members: np.ndarray) -> int:
        at = len(nodes)
        nodes.append(TreeNode())
        if len(members) <= leaf_size:
            nodes[at] = TreeNode(members=members)
            return at
        pts = values[members]
        dim = int(np.argmax(pts.var(axis=0)))
        order = np.argsort(pts[:, dim], kind="stable")
        mid = len(members) // 2
        split_value = float(pts[order[mid], dim])
        left = grow(members[order[:mid]])
        right = grow(members[order[mid:]])
        nodes[at] = TreeNode(split_dim=dim, split_value=split_value, children=[left, right])
        return at

    grow(ids)
    return nodes


def _balanced_assign(
    pts: np.ndarray, centers: np.ndarray, counter: DistCounter
) -> np.ndarray:
    """Nearest-center assignment with at most ceil(m / k) points per center."""
    m, k = pts.shape[0], centers.shape[0]
    capacity = math.ceil(m / k)
    dist = np.stack([squared_euclidean_many(pts, c, counter) for c in centers], axis=1)
    flat = dist.ravel()
    order = np.lexsort((np.arange(flat.size), flat))
    assign = np.full(m, -1, dtype=np.int64)
    load = np.zeros(k, dtype=np.int64)
    placed = 0
    for pos in order.tolist():
        i, c = divmod(pos, k)
        if assign[i] >= 0 or load[c] >= capacity:
            continue
        assign[i] = c
        load[c] += 1
        placed += 1
        if placed == m:
            break
    return assign


def _km_tree(
    values: np.ndarray,
    ids: np.ndarray,
    branching: int,
    leaf_cap: int,
    iters: int,
    rng: np.random.Generator,
    counter: DistCounter,
) -> List[TreeNode]:
    nodes: List[TreeNode] = []

    def grow(members: np.ndarray) -> int:
        at = len(nodes)
        pts = values[members].astype(np.float64)
        centroid = pts.mean(axis=0).astype(np.float32)
        nodes.append(TreeNode(centroid=centroid))
        if len(members) <= leaf_cap:
            nodes[at].members = members
            return at
        k = min(branching, len(members))
        centers = pts[rng.choice(len(members), size=k, replace=False)]
        assign = _balanced_assign(pts, centers, counter)
        for _ in range(iters - 1):
            centers = np.stack(
                [pts[assign == c].mean(axis=0) if np.any(assign == c) else centers[c] for c in range(k)]
            )
            assign = _balanced_assign(pts, centers, counter)
        children = [grow(members[assign == c]) for c in range(k) if np.any(assign == c)]
        nodes[at].children = children
        return at

    grow(ids)
    return nodes


def _tree_pool(
    tree: List[TreeNode], q: np.ndarray, s: int, scope: DistanceScope
) -> List[int]:
    """Depth-first leaf members, nearest branch first, until ``s`` are pooled."""
    pool: List[int] = []
    stack = [0]
    while stack and len(pool) < s:
        node = tree[stack.pop()]
        if node.is_leaf:
            pool.extend(node.members.tolist())
            continue
        if node.split_dim >= 0:
            left, right = node.children
            near, far = (left, right) if q[node.split_dim] < node.split_value else (right, left)
            stack.extend([far, near])
        else:
            centroids = np.stack([tree[c].centroid for c in node.children])
            d2 = scope.charge(centroids)
            ranked = [node.children[i] for i in np.lexsort((np.arange(len(d2)), d2))]
            stack.extend(reversed(ranked))
    return pool


# ------------------------------------------------------------------- SeedIndex


@dataclass
class SeedIndex:
    """Seed structure of one kind, built over a specific VectorSet."""

    kind: SSKind
    n: int
    trees: List[List[TreeNode]] = field(default_factory=list)
    node: int = -1
    seed: int = 0
    layered: Optional[LayeredGraph] = None

    def seeds(
        self,
        q: np.ndarray,
        s: int,
        scope: DistanceScope,
        query_index: int = 0,
    ) -> List[Candidate]:
        """Seeds for one query, ascending by squared distance."""
        if self.kind == SSKind.SN:
            if self.layered is None:
                raise ParameterError("SN seeds need the layered graph")
            return [sn_descend(self.layered, q, None, scope.counter, scope)]
        if self.kind in (SSKind.MD, SSKind.SF):
            return [Candidate(self.node, scope.distance(self.node))]
        if self.kind == SSKind.KS:
            return scope.annotate(ks_seeds(self.n, min(s, self.n), query_index, self.seed))
        return scope.annotate(self.pool(q, s, scope))[:s]

    def pool(self, q: np.ndarray, s: int, scope: DistanceScope) -> List[int]:
        """Leaf members reached by the KD/KM descent, before ranking."""
        pool: List[int] = []
        for tree in self.trees:
            pool.extend(_tree_pool(tree, q, s, scope))
        return pool

    # serialization -----------------------------------------------------------

    def to_bytes(self) -> bytes:
        w = IndexWriter()
        w.buf += SEED_MAGIC
        w.pack("B", _KIND_CODES[self.kind])
        if self.kind in (SSKind.MD, SSKind.SF):
            w.pack("I", self.node)
        elif self.kind == SSKind.KS:
            w.pack("Q", self.seed)
        elif self.kind in (SSKind.KD, SSKind.KM):
            w.pack("I", len(self.trees))
            for tree in self.trees:
                w.pack("I", len(tree))
                for node in tree:
                    w.pack("ifB", node.split_dim, node.split_value, node.centroid is not None)
                    if node.centroid is not None:
                        w.f32_array(node.centroid)
                    w.pack("I", len(node.children))
                    w.u32_array(node.children)
                    w.pack("I", len(node.members))
                    w.u32_array(node.members)
        return bytes(w.buf)

    @classmethod
    def read(cls, r: IndexReader, index: Index, n: int, dim: int) -> "SeedIndex":
        if r.take(4) != SEED_MAGIC:
            raise TruncatedIndexError(f"bad seed section at byte {r.offset - 4}")
        code = r.unpack("B")[0]
        if code not in _CODE_KINDS:
            raise UnknownKindError(f"unknown seed kind byte {code}")
        kind = _CODE_KINDS[code]
        out = cls(kind=kind, n=n)
        if kind == SSKind.SN:
            if not isinstance(index, LayeredGraph):
                raise UnknownKindError("SN seed section requires a layered index")
            out.layered = index
        elif kind in (SSKind.MD, SSKind.SF):
            out.node = r.u32()
        elif kind == SSKind.KS:
            out.seed = int(r.unpack("Q")[0])
        else:
            for _ in range(r.u32()):
                tree = []
                for _ in range(r.u32()):
                    split_dim, split_value, has_centroid = r.unpack("ifB")
                    centroid = r.f32_array(dim) if has_centroid else None
                    children = r.u32_array(r.u32()).tolist()
                    members = r.u32_array(r.u32())
                    tree.append(TreeNode(split_dim, float(split_value), centroid, children, members))
                out.trees.append(tree)
        return out


def kd_build(
    vectors: VectorSet,
    num_trees: int,
    sample_fraction: float,
    seed: int,
    leaf_size: int = 32,
    sample_cap: int = 100_000,
) -> SeedIndex:
    """Forest of median-split K-D trees, each over an independent sample."""
    if num_trees < 1:
        raise ParameterError("num_trees must be >= 1")
    trees = []
    for t in range(num_trees):
        sample = _sample(vectors.n, sample_fraction, sample_cap, stream(seed, KD_STREAM + t))
        trees.append(_kd_tree(vectors.values, sample, leaf_size))
    return SeedIndex(kind=SSKind.KD, n=vectors.n, trees=trees)


def kd_seeds(idx: SeedIndex, q: np.ndarray, s: int, scope: DistanceScope) -> List[Candidate]:
    if s < 1:
        raise ParameterError("s must be >= 1")
    return idx.seeds(q, s, scope)


def km_build(
    vectors: VectorSet,
    branching: int,
    leaf_cap: int,
    sample_fraction: float,
    seed: int,
    counter: Optional[DistCounter] = None,
    sample_cap: int = 100_000,
    iters: int = 5,
) -> SeedIndex:
    """Balanced k-means tree over a sample; clusters hold at most ceil(size/branching)."""
    if branching < 2:
        raise ParameterError(f"branching must be >= 2, got {branching}")
    rng = stream(seed, KM_STREAM)
    sample = _sample(vectors.n, sample_fraction, sample_cap, rng)
    tree = _km_tree(
        vectors.values, sample, branching, leaf_cap, iters, rng, counter or DistCounter()
    )
    return SeedIndex(kind=SSKind.KM, n=vectors.n, trees=[tree])


def km_seeds(idx: SeedIndex, q: np.ndarray, s: int, scope: DistanceScope) -> List[Candidate]:
    if s < 1:
        raise ParameterError("s must be >= 1")
    return idx.seeds(q, s, scope)


def approximate_medoid(vectors: VectorSet, counter: DistCounter) -> int:
    """Row nearest to the dataset centroid, ties by smaller id."""
    centroid = vectors.values.astype(np.float64).mean(axis=0)
    d2 = squared_euclidean_many(vectors.values, centroid, counter)
    return int(np.lexsort((np.arange(vectors.n), d2))[0])


def medoid_seed(vectors: VectorSet, counter: DistCounter) -> SeedIndex:
    return SeedIndex(kind=SSKind.MD, n=vectors.n, node=approximate_medoid(vectors, counter))


def sf_seed(vectors: VectorSet, seed: int) -> SeedIndex:
    node = int(stream(seed, SF_STREAM).integers(vectors.n))
    return SeedIndex(kind=SSKind.SF, n=vectors.n, node=node)


def ks_seeds(n: int, s: int, query_index: int, seed: int) -> List[int]:
    """``s`` distinct uniform ids, a fresh draw per query index."""
    if not 1 <= s <= n:
        raise ParameterError(f"s={s} must be in [1, {n}]")
    return stream(seed, query_index).choice(n, size=s, replace=False).tolist()


def ks_index(n: int, seed: int) -> SeedIndex:
    return SeedIndex(kind=SSKind.KS, n=n, seed=seed)


def build_seed_index(
    vectors: VectorSet,
    p: BuildParams,
    counter: DistCounter,
    layered: Optional[LayeredGraph] = None,
) -> SeedIndex:
    """Seed structure for ``p.ss`` over ``vectors``."""
    if p.ss == SSKind.SN:
        if layered is None:
            raise ParameterError("SN seeds are built together with a layered graph")
        return SeedIndex(kind=SSKind.SN, n=vectors.n, layered=layered)
    if p.ss == SSKind.KD:
        return kd_build(
            vectors, p.kd_trees, p.sample_fraction, p.seed,
            settings.kd_leaf_size, settings.sample_cap,
        )
    if p.ss == SSKind.KM:
        return km_build(
            vectors, p.km_branching, p.km_leaf_cap, p.sample_fraction, p.seed,
            counter, settings.sample_cap, settings.km_iters,
        )
    if p.ss == SSKind.MD:
        return medoid_seed(vectors, counter)
    if p.ss == SSKind.SF:
        return sf_seed(vectors, p.seed)
    return ks_index(vectors.n, p.seed)


# ---------------------------------------------------------------------- bundles


def save_bundle(index: Index, seeds: Optional[SeedIndex], path: Union[str, Path]) -> None:
    """GANN index followed by its seed section."""
    trailer = seeds.to_bytes() if seeds is not None else b""
    Path(path).write_bytes(index_bytes(index) + trailer)


def load_bundle(path: Union[str, Path]) -> Tuple[Index, Optional[SeedIndex]]:
    r = IndexReader(Path(path).read_bytes())
    index = read_index(r)
    if r.remaining == 0:
        return index, None
    n = index.n
    dim = index.base.dim if isinstance(index, LayeredGraph) else index.dim
    return index, SeedIndex.read(r, index, n, dim)
