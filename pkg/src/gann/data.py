"""Datasets, query workloads, the brute-force oracle and complexity metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .core import Candidate, DistCounter, squared_euclidean_many, stream
from .errors import DataFormatError, DegenerateQueryError, ParameterError
from .models import ComplexityReport, ComplexityRow, NoiseSpec, PowerLawSpec

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# noise row i draws from stream NOISE_STREAM + i, clear of the generator rows
NOISE_STREAM = 0x4741_5553_5300_0000

_FORMATS = {
    "fvecs": np.dtype("<f4"),
    "bvecs": np.dtype("u1"),
    "ivecs": np.dtype("<i4"),
}


@dataclass
class VectorSet:
    """Dense n x d single-precision dataset; the row index is node identity."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ParameterError(f"a VectorSet needs shape (n>=1, d>=1), got {values.shape}")
        if not np.isfinite(values).all():
            raise ParameterError("VectorSet values must be finite")
        self.values = values

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, node: int) -> np.ndarray:
        return self.values[node]

    def subset(self, nodes: Sequence[int]) -> "VectorSet":
        """Rows ``nodes`` as a new set; local id i is ``nodes[i]``."""
        return VectorSet(self.values[np.asarray(nodes, dtype=np.int64)])


# --------------------------------------------------------------------------- files


def _format_of(path: PathLike, fmt: Optional[str]) -> str:
    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    if fmt not in _FORMATS:
        raise ParameterError(f"unknown vector format {fmt!r}; use fvecs, bvecs or ivecs")
    return fmt


def _locate_error(raw: bytes, width: int, d: int) -> DataFormatError:
    offset = 0
    while offset < len(raw):
        if offset + 4 > len(raw):
            return DataFormatError("file ends inside a dimension header", offset)
        dim = int.from_bytes(raw[offset : offset + 4], "little", signed=True)
        if dim != d:
            return DataFormatError(f"record dimension {dim} differs from {d}", offset)
        if offset + 4 + dim * width > len(raw):
            return DataFormatError("file ends mid-record", offset)
        offset += 4 + dim * width
    return DataFormatError("malformed vector file", offset)


def read_records(path: PathLike, fmt: Optional[str] = None) -> np.ndarray:
    """Raw record values (fvecs float32, bvecs uint8, ivecs int32) as n x d."""
    fmt = _format_of(path, fmt)
    dtype = _FORMATS[fmt]
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataFormatError("file too short for a dimension header", 0)
    d = int.from_bytes(raw[:4], "little", signed=True)
    if d <= 0:
        raise DataFormatError(f"non-positive dimension {d}", 0)
    record = 4 + d * dtype.itemsize
    count, rest = divmod(len(raw), record)
    if rest:
        raise _locate_error(raw, dtype.itemsize, d)
    block = np.frombuffer(raw, dtype=np.uint8).reshape(count, record)
    dims = block[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(dims != d)
    if bad.size:
        raise _locate_error(raw, dtype.itemsize, d)
    return block[:, 4:].copy().view(dtype).reshape(count, d)


def load_vecs(path: PathLike, fmt: Optional[str] = None) -> VectorSet:
    """Load an fvecs/bvecs/ivecs file; values are widened to float32."""
    values = read_records(path, fmt)
    logger.debug("loaded %s: n=%d d=%d", path, values.shape[0], values.shape[1])
    return VectorSet(values.astype(np.float32))


def save_vecs(path: PathLike, values: np.ndarray, fmt: Optional[str] = None) -> None:
    """Write rows with a little-endian int32 dimension prefix per record."""
    fmt = _format_of(path, fmt)
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[1] < 1:
        raise ParameterError(f"expected a 2-d array with d >= 1, got {values.shape}")
    n, d = values.shape
    body = values.astype(_FORMATS[fmt])
    out = np.empty((n, 4 + d * _FORMATS[fmt].itemsize), dtype=np.uint8)
    out[:, :4] = np.full((n, 1), d, dtype="<i4").view(np.uint8)
    out[:, 4:] = np.ascontiguousarray(body).view(np.uint8).reshape(n, -1)
    Path(path).write_bytes(out.tobytes())


def load_ground_truth(
    ids_path: PathLike, dists_path: Optional[PathLike] = None
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    ids = read_records(ids_path, "ivecs").astype(np.int64)
    dists = None
    if dists_path is not None:
        dists = read_records(dists_path, "fvecs")
        if dists.shape != ids.shape:
            raise DataFormatError(
                f"ground-truth distances {dists.shape} do not match ids {ids.shape}", 0
            )
    return ids, dists


# ------------------------------------------------------------------- generators


def gen_powerlaw(spec: PowerLawSpec) -> VectorSet:
    """Power-law data: ``Y = scale_k * X**a``, X uniform on [0, 1).

    Exponent 0 is the uniform case (``Y = scale_k * X``). Row i is drawn from the
    stream keyed ``(seed, i)``; column j is the j-th draw of that stream.
    """
    values = np.empty((spec.n, spec.d), dtype=np.float32)
    for row in range(spec.n):
        x = stream(spec.seed, row).random(spec.d)
        if spec.exponent_a > 0:
            x = np.power(x, spec.exponent_a)
        values[row] = spec.scale_k * x
    return VectorSet(values)


def gen_noise_queries(base: VectorSet, indices: Sequence[int], spec: NoiseSpec) -> VectorSet:
    """Query i is ``base[indices[i]]`` plus i.i.d. N(0, variance) per coordinate.

    The noise for query i comes from the stream keyed ``(seed, NOISE_STREAM + i)``.
    """
    scale = math.sqrt(spec.variance_sigma2)
    rows = np.empty((len(indices), base.d), dtype=np.float32)
    for i, node in enumerate(indices):
        if not 0 <= node < base.n:
            raise ParameterError(f"query source {node} outside [0, {base.n})")
        noise = stream(spec.seed, NOISE_STREAM + i).normal(spec.mean_mu, scale, base.d)
        rows[i] = base[node].astype(np.float64) + noise
    return VectorSet(rows)


def noise_label(variance_sigma2: float) -> str:
    """Workload label: variance 0.01 is "1% noise"."""
    return f"{round(100.0 * variance_sigma2, 6):g}% noise"


# ------------------------------------------------------------------------ oracle


def _ordered(d2: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest values, ties by smaller index."""
    if k < d2.shape[0]:
        cut = np.partition(d2, k - 1)[k - 1]
        pool = np.flatnonzero(d2 <= cut)
    else:
        pool = np.arange(d2.shape[0])
    order = np.lexsort((pool, d2[pool]))
    return pool[order][:k]


def brute_force_knn(
    vectors: VectorSet,
    query: np.ndarray,
    k: int,
    counter: Optional[DistCounter] = None,
) -> List[Candidate]:
    """Exact k nearest rows, ascending by Euclidean distance, ties by NodeId."""
    if not 1 <= k <= vectors.n:
        raise ParameterError(f"k={k} must be in [1, {vectors.n}]")
    d2 = squared_euclidean_many(vectors.values, query, counter or DistCounter())
    nearest = _ordered(d2, k)
    return [Candidate(int(v), math.sqrt(d2[v])) for v in nearest]


def ground_truth(
    vectors: VectorSet, queries: VectorSet, k: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Exact ids (int32) and distances (float32) for every query."""
    ids = np.empty((queries.n, k), dtype=np.int32)
    dists = np.empty((queries.n, k), dtype=np.float32)
    for i in range(queries.n):
        row = brute_force_knn(vectors, queries[i], k)
        ids[i] = [c.node for c in row]
        dists[i] = [c.dist for c in row]
    return ids, dists


def exact_knn_graph(vectors: VectorSet, k: int, chunk: int = 256) -> np.ndarray:
    """Exact k-NN ids per row (self excluded), nearest first."""
    if not 1 <= k < vectors.n:
        raise ParameterError(f"k={k} must be in [1, {vectors.n - 1}]")
    x = vectors.values.astype(np.float64)
    norms = np.einsum("ij,ij->i", x, x)
    out = np.empty((vectors.n, k), dtype=np.int64)
    for start in range(0, vectors.n, chunk):
        stop = min(start + chunk, vectors.n)
        d2 = norms[start:stop, None] + norms[None, :] - 2.0 * x[start:stop] @ x.T
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        for r in range(stop - start):
            out[start + r] = _ordered(d2[r], k)
    return out


# -------------------------------------------------------------------- complexity


def lid_from_distances(dists: Sequence[float]) -> float:
    """LID over k neighbor distances; zeros are dropped, +inf when undefined."""
    usable = np.asarray([d for d in dists if d > 0], dtype=np.float64)
    if usable.size < 2:
        return math.inf
    inner = float(np.mean(np.log(usable / usable.max())))
    if inner == 0.0:
        return math.inf
    return -1.0 / inner


def lid(query: np.ndarray, vectors: VectorSet, k: int) -> float:
    if not 2 <= k <= vectors.n:
        raise ParameterError(f"LID needs 2 <= k <= {vectors.n}, got {k}")
    return lid_from_distances([c.dist for c in brute_force_knn(vectors, query, k)])


def _lrc(all_d2: np.ndarray, k: int) -> float:
    dist = np.sqrt(all_d2)
    dist_k = float(np.partition(dist, k - 1)[k - 1])
    if dist_k == 0.0:
        raise DegenerateQueryError(f"k-th neighbor distance is 0 (query duplicates >= {k} points)")
    return float(dist.mean()) / dist_k


def lrc(query: np.ndarray, vectors: VectorSet, k: int) -> float:
    """Mean distance to all points over the k-th nearest distance."""
    if not 1 <= k <= vectors.n:
        raise ParameterError(f"LRC needs 1 <= k <= {vectors.n}, got {k}")
    return _lrc(squared_euclidean_many(vectors.values, query, DistCounter()), k)


def complexity_report(queries: VectorSet, vectors: VectorSet, k: int) -> ComplexityReport:
    if not 2 <= k <= vectors.n:
        raise ParameterError(f"complexity metrics need 2 <= k <= {vectors.n}, got {k}")
    rows = []
    for i in range(queries.n):
        d2 = squared_euclidean_many(vectors.values, queries[i], DistCounter())
        knn = np.sqrt(d2[_ordered(d2, k)])
        rows.append(ComplexityRow(query_id=i, lid=lid_from_distances(knn), lrc=_lrc(d2, k)))
    lids = np.array([r.lid for r in rows])
    lrcs = np.array([r.lrc for r in rows])
    return ComplexityReport(
        k=k,
        rows=rows,
        lid_mean=float(np.mean(lids)),
        lid_median=float(np.median(lids)),
        lrc_mean=float(np.mean(lrcs)),
        lrc_median=float(np.median(lrcs)),
    )


def write_complexity_csv(report: ComplexityReport, path: PathLike) -> None:
    """One ``query_id,lid,lrc`` row per query; undefined LID is written as ``inf``."""
    table = pd.DataFrame(
        [row.model_dump() for row in report.rows], columns=["query_id", "lid", "lrc"]
    )
    table.to_csv(path, index=False)
