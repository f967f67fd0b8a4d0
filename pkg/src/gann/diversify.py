"""Neighborhood diversification: NoND, RND, RRND and MOND candidate pruning.

All strategies share one greedy scan over a candidate list sorted by distance
to the reference node X_q: a candidate X_j is kept unless some already-kept
X_i triggers the strategy's prune condition. The scan stops at ``cap_r`` kept
ids and never backfills. Conditions use squared distances, so RND's
``d(X_i, X_j) <= d(X_q, X_j)`` and RRND's ``alpha * d(X_i, X_j) <= d(X_q, X_j)``
are compared as ``d2(i, j) <= d2(q, j)`` and ``alpha**2 * d2(i, j) <= d2(q, j)``.
A candidate stops being checked at the first kept X_i that prunes it, and the
counter is charged one evaluation per check actually made.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import kernels
from .core import Candidate, DistCounter, squared_euclidean_many
from .data import VectorSet
from .errors import ParameterError
from .models import BuildParams, NDKind


class CandidateList:
    """Candidates for wiring ``reference``; ``dist`` fields are squared.

    Stored as parallel id and squared-distance arrays sorted by (distance, id).
    """

    reference: int
    node_ids: np.ndarray
    dists: np.ndarray
    _entries: Optional[List[Candidate]]

    def __init__(self, reference: int, entries: Sequence[Candidate]) -> None:
        entries = list(entries)
        self.reference = reference
        self.node_ids = np.fromiter((c.node for c in entries), dtype=np.int64, count=len(entries))
        self.dists = np.fromiter((c.dist for c in entries), dtype=np.float64, count=len(entries))
        self._entries = entries
        self._check()

    @classmethod
    def from_arrays(
        cls, reference: int, node_ids: np.ndarray, dists: np.ndarray, check: bool = True
    ) -> "CandidateList":
        c = cls.__new__(cls)
        c.reference = reference
        c.node_ids = np.asarray(node_ids, dtype=np.int64)
        c.dists = np.asarray(dists, dtype=np.float64)
        c._entries = None
        if check:
            c._check()
        return c

    def _check(self) -> None:
        ids, d2 = self.node_ids, self.dists
        if len(ids) > 1:
            backwards = (d2[1:] < d2[:-1]) | ((d2[1:] == d2[:-1]) & (ids[1:] < ids[:-1]))
            if backwards.any():
                raise ParameterError("candidate list must be sorted by (distance, id)")
        if np.any(ids == self.reference) or len(np.unique(ids)) != len(ids):
            raise ParameterError("a candidate repeats or equals the reference")

    @classmethod
    def build(
        cls,
        vectors: VectorSet,
        reference: int,
        ids: Sequence[int],
        counter: DistCounter,
    ) -> "CandidateList":
        """Annotate ``ids`` with squared distances to ``reference`` and sort."""
        unique = [v for v in dict.fromkeys(int(i) for i in ids) if v != reference]
        if not unique:
            return cls(reference, [])
        picks = np.asarray(unique, dtype=np.int64)
        d2 = squared_euclidean_many(vectors.values[picks], vectors[reference], counter)
        order = np.lexsort((picks, d2))
        return cls.from_arrays(reference, picks[order], d2[order], check=False)

    @classmethod
    def merge(
        cls, reference: int, node_ids: np.ndarray, dists: np.ndarray
    ) -> "CandidateList":
        """Deduplicate already annotated ids, drop the reference and sort."""
        keep = node_ids != reference
        node_ids, dists = node_ids[keep], dists[keep]
        _, first = np.unique(node_ids, return_index=True)
        node_ids, dists = node_ids[first], dists[first]
        order = np.lexsort((node_ids, dists))
        return cls.from_arrays(reference, node_ids[order], dists[order], check=False)

    @property
    def entries(self) -> List[Candidate]:
        if self._entries is None:
            self._entries = [
                Candidate(v, d) for v, d in zip(self.node_ids.tolist(), self.dists.tolist())
            ]
        return self._entries

    @property
    def ids(self) -> List[int]:
        return self.node_ids.tolist()

    def __len__(self) -> int:
        return len(self.node_ids)

    def __repr__(self) -> str:
        return f"CandidateList(reference={self.reference}, size={len(self)})"


def _greedy_scan(
    vectors: VectorSet,
    c: CandidateList,
    cap_r: int,
    counter: DistCounter,
    rule: int,
    scale2: float = 1.0,
    theta_deg: float = 0.0,
) -> List[int]:
    if len(c) == 0:
        return []
    kept, checks = kernels.greedy_prune(
        vectors.values, vectors[c.reference], c.node_ids, c.dists, cap_r, rule, scale2, theta_deg
    )
    counter.add(int(checks))
    return kept.tolist()


def prune_nond(c: CandidateList, cap_r: int) -> List[int]:
    """The ``cap_r`` nearest candidates."""
    return c.node_ids[:cap_r].tolist()


def prune_rnd(
    vectors: VectorSet, c: CandidateList, cap_r: int, counter: DistCounter
) -> List[int]:
    """Keep X_j only if every kept X_i is strictly farther from X_j than X_q is."""
    return _greedy_scan(vectors, c, cap_r, counter, kernels.RULE_DISTANCE, 1.0)


def prune_rrnd(
    vectors: VectorSet,
    c: CandidateList,
    cap_r: int,
    alpha: float,
    counter: DistCounter,
) -> List[int]:
    """RND relaxed by ``alpha``; ``alpha == 1`` is exactly RND."""
    if not alpha >= 1.0:
        raise ParameterError(f"alpha must be >= 1, got {alpha}")
    return _greedy_scan(vectors, c, cap_r, counter, kernels.RULE_DISTANCE, alpha * alpha)


def prune_mond(
    vectors: VectorSet,
    c: CandidateList,
    cap_r: int,
    theta_deg: float,
    counter: DistCounter,
) -> List[int]:
    """Prune X_j when the angle X_i-X_q-X_j is below ``theta_deg`` for a kept X_i."""
    if not 0.0 < theta_deg < 180.0:
        raise ParameterError(f"theta must be in (0, 180) degrees, got {theta_deg}")
    return _greedy_scan(vectors, c, cap_r, counter, kernels.RULE_ANGLE, theta_deg=theta_deg)


@dataclass(frozen=True)
class Diversifier:
    """A configured strategy, used by builders and connectivity repair."""

    kind: NDKind
    cap_r: int
    alpha: float = 1.2
    theta_deg: float = 60.0

    def __post_init__(self) -> None:
        if self.cap_r < 1:
            raise ParameterError("cap_r must be >= 1")
        if self.kind == NDKind.RRND and not self.alpha >= 1.0:
            raise ParameterError(f"alpha must be >= 1, got {self.alpha}")
        if self.kind == NDKind.MOND and not 0.0 < self.theta_deg < 180.0:
            raise ParameterError(f"theta must be in (0, 180), got {self.theta_deg}")

    @classmethod
    def from_params(
        cls, p: BuildParams, kind: Optional[NDKind] = None
    ) -> "Diversifier":
        return cls(kind or p.nd, p.cap_r, p.alpha, p.theta_deg)

    def prune(
        self, vectors: VectorSet, c: CandidateList, counter: DistCounter
    ) -> List[int]:
        if self.kind == NDKind.NOND:
            return prune_nond(c, self.cap_r)
        if self.kind == NDKind.RND:
            return prune_rnd(vectors, c, self.cap_r, counter)
        if self.kind == NDKind.RRND:
            return prune_rrnd(vectors, c, self.cap_r, self.alpha, counter)
        return prune_mond(vectors, c, self.cap_r, self.theta_deg, counter)

    def prune_node(
        self,
        vectors: VectorSet,
        node: int,
        ids: Sequence[int],
        counter: DistCounter,
    ) -> List[int]:
        """Annotate ``ids`` relative to ``node`` and prune them."""
        return self.prune(vectors, CandidateList.build(vectors, node, ids, counter), counter)

    @property
    def label(self) -> str:
        if self.kind == NDKind.RRND:
            return f"rrnd-{self.alpha:g}"
        if self.kind == NDKind.MOND:
            return f"mond-{self.theta_deg:g}"
        return self.kind.value


def pruning_ratio(before: int, after: int) -> float:
    """Fractional reduction of a candidate-list (or edge) count."""
    if before <= 0:
        return 0.0
    return 1.0 - after / before


def angle_deg(vectors: VectorSet, reference: int, a: int, b: int) -> float:
    """Angle at ``reference`` between the directions to ``a`` and ``b``."""
    angle = float(kernels.angle_at(vectors[reference], vectors[a], vectors[b]))
    return max(angle, 0.0)
