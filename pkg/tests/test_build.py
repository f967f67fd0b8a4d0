"""Incremental insertion, NN-Descent, ND refinement and divide-and-conquer builds."""

import numpy as np
import pytest

from gann.build import (
    balanced_partition,
    build_dc,
    build_ii,
    build_index,
    nndescent,
    random_knn_graph,
    refine_with_nd,
)
from gann.core import DistCounter
from gann.data import VectorSet, exact_knn_graph, gen_noise_queries, ground_truth
from gann.diversify import Diversifier
from gann.errors import ParameterError
from gann.graph import (
    FlatGraph,
    LayeredGraph,
    PartitionedIndex,
    ensure_connected,
    index_bytes,
    reachable,
)
from gann.models import (
    BuildAlgo,
    BuildParams,
    DCMode,
    NDKind,
    NoiseSpec,
    SearchParams,
    SSKind,
)
from gann.search import recall, search_index
from gann.seeds import approximate_medoid


def neighbor_recall(g: FlatGraph, exact: np.ndarray) -> float:
    k = exact.shape[1]
    hits = [len(set(g.neighbors(u)) & set(exact[u].tolist())) for u in range(g.n)]
    return sum(hits) / (g.n * k)


# ----------------------------------------------------------------------------- II


def test_single_node(small_params):
    g, report = build_ii(VectorSet(np.ones((1, 3))), small_params)
    assert g.n == 1 and g.num_edges == 0
    assert report.distance_calcs >= 0


def test_two_nodes_link_both_ways(small_params):
    g, _ = build_ii(VectorSet(np.array([[0.0, 0.0], [1.0, 1.0]])), small_params)
    assert g.neighbors(0) == [1] and g.neighbors(1) == [0]


@pytest.mark.parametrize("nd", list(NDKind))
@pytest.mark.parametrize("ss", [SSKind.KS, SSKind.KD, SSKind.KM, SSKind.MD, SSKind.SF])
def test_ii_graphs_are_valid(small_set, small_params, nd, ss):
    g, report = build_ii(small_set, small_params.model_copy(update={"nd": nd, "ss": ss}))
    assert isinstance(g, FlatGraph)
    g.validate()
    assert g.max_degree <= small_params.cap_r
    assert report.distance_calcs == sum(p.distance_calcs for p in report.phases.values())
    assert {"seed_index", "candidate_search", "pruning"} <= set(report.phases)


def test_ii_is_deterministic(small_set, small_params):
    a, report_a = build_ii(small_set, small_params)
    b, report_b = build_ii(small_set, small_params)
    assert index_bytes(a) == index_bytes(b)
    assert report_a.distance_calcs == report_b.distance_calcs


def test_shuffled_insertion_is_deterministic(small_set, small_params):
    p = small_params.model_copy(update={"shuffle": True})
    assert index_bytes(build_ii(small_set, p)[0]) == index_bytes(build_ii(small_set, p)[0])


def test_repaired_ii_graph_reaches_everything(make_set):
    vectors = make_set(1000, 8, seed=13)
    p = BuildParams(cap_r=16, beam_l_build=32, seed=7)
    g, _ = build_ii(vectors, p)
    fixed = ensure_connected(g, 0, vectors, DistCounter(), Diversifier.from_params(p))
    fixed.validate()
    assert reachable(fixed, 0).all()


def test_layered_build(small_set, small_params):
    result = build_index(small_set, small_params.model_copy(update={"ss": SSKind.SN}))
    index = result.index
    assert isinstance(index, LayeredGraph)
    index.validate()
    assert index.top_level == int(index.levels.max())
    assert len(index.members(index.top_level)) >= 1
    assert result.seed_index.kind == SSKind.SN


def test_parallel_ii_build(small_set, small_params):
    p = small_params.model_copy(update={"threads": 4, "deterministic": False})
    result = build_index(small_set, p)
    result.index.validate()
    assert result.report.distance_calcs == sum(
        ph.distance_calcs for ph in result.report.phases.values()
    )
    assert min(result.index.degree(u) for u in range(small_set.n)) >= 1


def test_ii_recall_on_noisy_queries(make_set, small_params):
    vectors = make_set(1000, 8, seed=21)
    queries = gen_noise_queries(vectors, list(range(0, 1000, 25)), NoiseSpec(seed=1))
    truth, _ = ground_truth(vectors, queries, 10)
    result = build_index(vectors, small_params)
    params = SearchParams(k=10, beam_l=64)
    scores = [
        recall(search_index(result.index, result.seed_index, vectors, queries[i], params, i), truth[i], 10)
        for i in range(queries.n)
    ]
    assert np.mean(scores) > 0.9


# ---------------------------------------------------------------------------- NND


def test_random_knn_graph_has_degree_k(small_set):
    g = random_knn_graph(small_set, 7, seed=2)
    g.validate()
    assert all(g.degree(u) == 7 for u in range(g.n))


def test_nndescent_converges_on_a_tiny_set(make_set):
    vectors = make_set(20, 4, seed=5)
    g, report = nndescent(vectors, 5, max_iters=20, delta=0.0, seed=1)
    assert neighbor_recall(g, exact_knn_graph(vectors, 5)) >= 0.95
    assert report.iterations == len(report.updates)
    assert report.updates[-1] == 0 or report.iterations == 20


def test_nndescent_improves_on_random_start(small_set):
    exact = exact_knn_graph(small_set, 10)
    start = neighbor_recall(random_knn_graph(small_set, 10, seed=3), exact)
    g, report = nndescent(small_set, 10, max_iters=10, delta=0.001, seed=3)
    assert neighbor_recall(g, exact) > max(0.8, start)
    assert report.updates[0] == max(report.updates)
    assert set(report.phases) == {"propagation"}


def test_nndescent_stops_below_delta(small_set):
    _, report = nndescent(small_set, 10, max_iters=50, delta=0.5, seed=3)
    assert report.iterations < 50
    threshold = 0.5 * small_set.n * 10
    assert report.updates[-1] < threshold or report.updates[-1] == 0


@pytest.mark.parametrize(
    "k, max_iters, delta", [(300, 5, 0.0), (0, 5, 0.0), (5, 0, 0.0), (5, 5, 1.0)]
)
def test_nndescent_parameter_errors(small_set, k, max_iters, delta):
    with pytest.raises(ParameterError):
        nndescent(small_set, k, max_iters=max_iters, delta=delta)


@pytest.mark.parametrize("nd", [NDKind.NOND, NDKind.RND, NDKind.MOND])
def test_nnd_pipeline_is_valid_and_connected(small_set, small_params, nd):
    result = build_index(small_set, small_params.model_copy(update={"nd": nd}), BuildAlgo.NND)
    result.index.validate()
    assert result.report.stats.reachable_fraction == 1.0
    assert {"propagation", "repair", "seed_index"} <= set(result.report.phases)


def separated_groups(groups: int, size: int) -> VectorSet:
    rng = np.random.default_rng(groups * 10 + size)
    centers = np.repeat(np.arange(groups, dtype=np.float64) * 100.0, size)[:, None]
    return VectorSet(centers + rng.uniform(0.0, 1.0, size=(groups * size, 2)))


@pytest.mark.parametrize("groups,size,cap_r", [(6, 4, 3), (4, 2, 1), (5, 3, 2)])
@pytest.mark.parametrize("nd", [NDKind.NOND, NDKind.RND])
def test_nnd_repair_joins_saturated_clusters(groups, size, cap_r, nd):
    vectors = separated_groups(groups, size)
    for seed in range(3):
        p = BuildParams(cap_r=cap_r, beam_l_build=8, nd=nd, ss=SSKind.MD, seed=seed)
        result = build_index(vectors, p, BuildAlgo.NND)
        result.index.validate()
        assert result.index.max_degree <= cap_r
        assert result.report.stats.reachable_fraction == 1.0


def test_sn_requires_ii(small_set, small_params):
    p = small_params.model_copy(update={"ss": SSKind.SN})
    with pytest.raises(ParameterError):
        build_index(small_set, p, BuildAlgo.NND)
    with pytest.raises(ParameterError):
        build_index(small_set, p, BuildAlgo.DC)


# ------------------------------------------------------------------------- refine


@pytest.fixture
def knn20(make_set):
    vectors = make_set(400, 8, seed=14)
    g = FlatGraph(vectors.n, 20, vectors.d, exact_knn_graph(vectors, 20).tolist())
    return vectors, g


def test_nond_refine_is_a_no_op(knn20, small_params):
    vectors, g = knn20
    p = small_params.model_copy(update={"cap_r": 20, "beam_l_build": 32})
    out, report, ratio = refine_with_nd(g, vectors, NDKind.NOND, p)
    assert out == g
    assert ratio == 0.0
    assert report.distance_calcs == 0


def test_refine_with_unit_alpha_matches_rnd(knn20, small_params):
    vectors, g = knn20
    p = small_params.model_copy(update={"cap_r": 20, "beam_l_build": 32, "alpha": 1.0})
    rnd, _, _ = refine_with_nd(g, vectors, NDKind.RND, p)
    rrnd, _, _ = refine_with_nd(g, vectors, NDKind.RRND, p)
    assert rrnd == rnd


def test_refine_keeps_list_order(knn20, small_params):
    vectors, g = knn20
    p = small_params.model_copy(update={"cap_r": 20, "beam_l_build": 32})
    out, _, _ = refine_with_nd(g, vectors, NDKind.RND, p)
    out.validate()
    for u in range(0, g.n, 37):
        original = g.neighbors(u)
        positions = [original.index(v) for v in out.neighbors(u)]
        assert positions == sorted(positions)


def test_pruning_ratio_ordering(knn20, small_params):
    vectors, g = knn20
    p = small_params.model_copy(
        update={"cap_r": 20, "beam_l_build": 32, "alpha": 1.2, "theta_deg": 60.0}
    )
    ratios = {nd: refine_with_nd(g, vectors, nd, p)[2] for nd in (NDKind.RND, NDKind.MOND, NDKind.RRND)}
    assert ratios[NDKind.RND] >= ratios[NDKind.MOND] >= ratios[NDKind.RRND] > 0.0


# ----------------------------------------------------------------------------- DC


def test_partition_covers_every_node(small_set):
    parts = balanced_partition(small_set, 40, seed=3)
    members = np.concatenate([m for m, _ in parts])
    assert sorted(members.tolist()) == list(range(small_set.n))
    assert all(len(m) <= 40 for m, _ in parts)
    for m, centroid in parts:
        assert np.allclose(centroid, small_set.values[m].mean(axis=0), atol=1e-6)


def test_partition_sizes_are_balanced(small_set):
    sizes = sorted(len(m) for m, _ in balanced_partition(small_set, 40, seed=3))
    assert sizes[-1] - sizes[0] <= 1


def test_single_partition(small_set):
    parts = balanced_partition(small_set, small_set.n, seed=3)
    assert len(parts) == 1
    assert parts[0][0].tolist() == list(range(small_set.n))


def test_partition_rejects_tiny_leaves(small_set):
    with pytest.raises(ParameterError):
        balanced_partition(small_set, 1, seed=0)


def test_single_partition_dc_matches_ii(small_set, small_params):
    p = small_params.model_copy(update={"leaf_size": small_set.n})
    ii, _ = build_ii(small_set, p)
    medoid = approximate_medoid(small_set, DistCounter())
    expected = ensure_connected(ii, medoid, small_set, DistCounter(), Diversifier.from_params(p))
    dc, report = build_dc(small_set, p, DCMode.MERGED)
    assert dc == expected
    assert {"partition", "repair", "seed_index"} <= set(report.phases)


def test_merged_dc_is_one_connected_graph(small_set, small_params):
    result = build_index(
        small_set, small_params.model_copy(update={"leaf_size": 60}), BuildAlgo.DC
    )
    g = result.index
    assert isinstance(g, FlatGraph) and g.n == small_set.n
    g.validate()
    assert result.report.stats.reachable_fraction == 1.0


def test_separate_dc_partitions(small_set, small_params):
    index, report = build_dc(
        small_set, small_params.model_copy(update={"leaf_size": 60}), DCMode.SEPARATE
    )
    assert isinstance(index, PartitionedIndex)
    assert sum(len(p.members) for p in index.partitions) == small_set.n
    for part in index.partitions:
        part.graph.validate()
        d2 = ((small_set.values[part.members] - part.centroid) ** 2).sum(axis=1)
        assert d2[0] == pytest.approx(d2.min(), rel=1e-6)
    assert report.distance_calcs == sum(p.distance_calcs for p in report.phases.values())


def test_separate_dc_probing_more_partitions_never_hurts(small_set, small_params, queries):
    p = small_params.model_copy(update={"leaf_size": 60})
    result = build_index(small_set, p, BuildAlgo.DC, DCMode.SEPARATE)
    assert result.seed_index is None
    truth, _ = ground_truth(small_set, queries, 10)
    count = len(result.index.partitions)
    for i in range(queries.n):
        one = search_index(result.index, None, small_set, queries[i], SearchParams(k=10, beam_l=20, nprobe=1))
        every = search_index(result.index, None, small_set, queries[i], SearchParams(k=10, beam_l=20, nprobe=count))
        assert recall(every, truth[i], 10) >= recall(one, truth[i], 10)


def test_parallel_dc_matches_serial(small_set, small_params):
    p = small_params.model_copy(update={"leaf_size": 60})
    serial, _ = build_dc(small_set, p, DCMode.SEPARATE)
    parallel, _ = build_dc(
        small_set, p.model_copy(update={"threads": 3, "deterministic": False}), DCMode.SEPARATE
    )
    assert parallel == serial
