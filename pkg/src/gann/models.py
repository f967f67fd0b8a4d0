"""Pydantic models for parameters, reports and API payloads."""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from .config import settings

U64_MAX = 2**64 - 1


class NDKind(str, Enum):
    """Neighborhood diversification strategies."""

    NOND = "nond"
    RND = "rnd"
    RRND = "rrnd"
    MOND = "mond"


class SSKind(str, Enum):
    """Seed selection strategies."""

    SN = "sn"
    KD = "kd"
    KM = "km"
    MD = "md"
    SF = "sf"
    KS = "ks"


class BuildAlgo(str, Enum):
    II = "ii"
    NND = "nnd"
    DC = "dc"


class DCMode(str, Enum):
    MERGED = "merged"
    SEPARATE = "separate"


class PowerLawSpec(BaseModel):
    """Synthetic power-law dataset: each coordinate is ``scale_k * X**exponent_a``."""

    n: int = Field(..., ge=1, description="Number of vectors")
    d: int = Field(..., ge=1, description="Dimensionality")
    exponent_a: float = Field(default=0.0, ge=0.0, description="Power-law exponent")
    scale_k: float = Field(default=1.0, gt=0.0, description="Scale factor")
    seed: int = Field(default=0, ge=0, le=U64_MAX, description="Stream seed")


class NoiseSpec(BaseModel):
    """Gaussian perturbation applied to base rows to make query workloads."""

    mean_mu: float = Field(default=0.0, ge=0.0, le=0.0, description="Noise mean")
    variance_sigma2: float = Field(default=0.01, ge=0.0, le=1.0, description="Variance")
    seed: int = Field(default=0, ge=0, le=U64_MAX, description="Stream seed")


class BuildParams(BaseModel):
    """Every construction tunable."""

    cap_r: int = Field(default=settings.cap_r, ge=1, description="Maximum out-degree")
    beam_l_build: int = Field(
        default=settings.beam_l_build, ge=1, description="Build-time beam width"
    )
    m: float = Field(default=settings.m, gt=2, description="Layer-assignment M")
    alpha: float = Field(default=settings.alpha, ge=1.0, description="RRND factor")
    theta_deg: float = Field(
        default=settings.theta_deg, gt=0.0, lt=180.0, description="MOND angle"
    )
    nd: NDKind = Field(default=NDKind.RND, description="Diversification strategy")
    ss: SSKind = Field(default=SSKind.KS, description="Seed selection strategy")
    seed_count_s: Optional[int] = Field(
        default=None, ge=1, description="Seeds per insertion; beam width when unset"
    )
    leaf_size: int = Field(default=settings.leaf_size, ge=2, description="DC cap")
    seed: int = Field(default=0, ge=0, le=U64_MAX, description="Stream seed")
    shuffle: bool = Field(default=False, description="Shuffle insertion order")
    threads: int = Field(default=1, ge=1, description="Build workers")
    deterministic: bool = Field(default=True, description="Force one worker")
    kd_trees: int = Field(default=settings.kd_trees, ge=1)
    sample_fraction: float = Field(default=settings.sample_fraction, gt=0.0, le=1.0)
    km_branching: int = Field(default=settings.km_branching, ge=2)
    km_leaf_cap: int = Field(default=settings.km_leaf_cap, ge=1)
    nnd_max_iters: int = Field(default=settings.nnd_max_iters, ge=1)
    nnd_delta: float = Field(default=settings.nnd_delta, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _beam_covers_degree(self) -> "BuildParams":
        if self.beam_l_build < self.cap_r:
            raise ValueError("beam_l_build must be >= cap_r")
        return self

    @property
    def workers(self) -> int:
        return 1 if self.deterministic else self.threads


class SearchParams(BaseModel):
    """Query-time tunables."""

    k: int = Field(default=10, ge=1, description="Result count")
    beam_l: int = Field(default=10, ge=1, description="Beam width")
    seed_count_s: Optional[int] = Field(
        default=None, ge=1, description="Seeds for KD/KM/KS; beam width when unset"
    )
    nprobe: int = Field(default=1, ge=1, description="Partitions probed")
    parallel_probes: bool = Field(default=False, description="Probe concurrently")

    @model_validator(mode="after")
    def _beam_covers_k(self) -> "SearchParams":
        if self.beam_l < self.k:
            raise ValueError("beam_l must be >= k")
        return self

    @property
    def seeds(self) -> int:
        return self.seed_count_s or self.beam_l


class PhaseReport(BaseModel):
    seconds: float = Field(default=0.0, ge=0.0)
    distance_calcs: int = Field(default=0, ge=0)


class GraphStats(BaseModel):
    """Shape and footprint of a built graph."""

    nodes: int = Field(..., ge=0)
    edges: int = Field(..., ge=0)
    mean_degree: float = Field(..., ge=0.0)
    max_degree: int = Field(..., ge=0)
    footprint_bytes: int = Field(..., ge=0, description="Adjacency bytes as u32 ids")
    reachable_fraction: Optional[float] = Field(default=None, ge=0.0, le=1.0)


class BuildReport(BaseModel):
    """Cost accounting for one index construction."""

    algo: str = Field(..., description="Builder that produced the index")
    distance_calcs: int = Field(default=0, ge=0)
    wall_time: float = Field(default=0.0, ge=0.0, description="Seconds")
    phases: Dict[str, PhaseReport] = Field(default_factory=dict)
    stats: Optional[GraphStats] = None
    pruning_ratio: Optional[float] = None
    iterations: Optional[int] = None
    updates: Optional[List[int]] = Field(
        default=None, description="Accepted NN-Descent updates per iteration"
    )

    @model_validator(mode="after")
    def _total_matches_phases(self) -> "BuildReport":
        if self.phases:
            total = sum(p.distance_calcs for p in self.phases.values())
            if total != self.distance_calcs:
                raise ValueError("distance_calcs must equal the sum of phase counters")
        return self


class ComplexityRow(BaseModel):
    query_id: int = Field(..., ge=0)
    lid: float = Field(..., gt=0.0, description="Local intrinsic dimensionality")
    lrc: float = Field(..., gt=0.0, description="Local relative contrast")


class ComplexityReport(BaseModel):
    """Per-query LID/LRC with aggregates."""

    k: int = Field(..., ge=2)
    rows: List[ComplexityRow] = Field(default_factory=list)
    lid_mean: float
    lid_median: float
    lrc_mean: float
    lrc_median: float


class SweepSpec(BaseModel):
    """One recall/efficiency sweep over beam widths and probe counts."""

    index_path: str
    data_path: str
    query_path: str
    gt_ids_path: str
    out_path: str
    k: int = Field(default=10, ge=1)
    beam_widths: List[int] = Field(..., min_length=1)
    nprobes: List[int] = Field(default_factory=lambda: [1], min_length=1)
    seed_count_s: Optional[int] = Field(default=None, ge=1)
    repeats: int = Field(default=settings.sweep_repeats, ge=1)
    trim: int = Field(default=settings.sweep_trim, ge=0)
    seed: int = Field(default=0, ge=0, le=U64_MAX)

    @model_validator(mode="after")
    def _widths_cover_k(self) -> "SweepSpec":
        if any(width < self.k for width in self.beam_widths):
            raise ValueError("every beam width must be >= k")
        if any(p < 1 for p in self.nprobes):
            raise ValueError("nprobe values must be >= 1")
        return self


class SweepRow(BaseModel):
    """One CSV row of a sweep, in output column order."""

    method: str
    nd: str
    ss: str
    beam_l: int
    nprobe: int
    recall: float = Field(..., ge=0.0, le=1.0)
    distance_calcs: float = Field(..., ge=0.0)
    latency_mean: float = Field(..., ge=0.0, description="Seconds per query")
    latency_p99: float = Field(..., ge=0.0, description="Seconds per query")


class SearchRequest(BaseModel):
    """Model for a k-NN query sent to the server."""

    vector: List[float] = Field(..., min_length=1, description="Query vector")
    k: int = Field(default=10, ge=1, description="Result count")
    beam_l: int = Field(default=64, ge=1, description="Beam width")
    nprobe: int = Field(default=1, ge=1, description="Partitions probed")
    seed_count_s: Optional[int] = Field(default=None, ge=1, description="Seed count")


class SearchResponse(BaseModel):
    """Model for a k-NN query answer."""

    ids: List[int] = Field(default_factory=list, description="Answer ids, nearest first")
    distances: List[float] = Field(default_factory=list, description="Euclidean")
    distance_calcs: int = Field(default=0, description="Distance evaluations")
    visited: int = Field(default=0, description="Expanded nodes")
    latency_seconds: float = Field(default=0.0, description="Server-side latency")
