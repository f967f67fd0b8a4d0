"""End-to-end experiments at desk scale; run with ``-m slow``."""

import numpy as np
import pytest

import gann.search
from gann.build import build_index, nndescent
from gann.core import DistanceScope
from gann.data import exact_knn_graph, gen_noise_queries, ground_truth
from gann.graph import index_bytes
from gann.models import BuildAlgo, BuildParams, DCMode, NDKind, NoiseSpec, SearchParams, SSKind
from gann.search import recall, search_index
from gann.seeds import draw_levels

pytestmark = pytest.mark.slow


def mean_recall(result, vectors, queries, truth, params) -> float:
    return float(
        np.mean(
            [
                recall(
                    search_index(result.index, result.seed_index, vectors, queries[i], params, i),
                    truth[i],
                    params.k,
                )
                for i in range(queries.n)
            ]
        )
    )


def test_nndescent_quality(make_set):
    vectors = make_set(2000, 16, seed=31)
    g, report = nndescent(vectors, 10, max_iters=15, delta=0.001, seed=4)
    exact = exact_knn_graph(vectors, 10)
    hits = sum(len(set(g.neighbors(u)) & set(exact[u].tolist())) for u in range(g.n))
    assert hits / (g.n * 10) >= 0.90
    assert report.iterations <= 15


def test_level_statistics():
    draws = 100_000
    levels = draw_levels(draws, 16, seed=12)
    p = 2 / 16
    stderr = np.sqrt(p * (1 - p) / draws)
    assert abs(np.mean(levels >= 1) - p) <= 3 * stderr


def test_nd_variants_beat_nond(make_set):
    vectors = make_set(100_000, 32, seed=41)
    picks = np.random.default_rng(3).choice(vectors.n, size=200, replace=False).tolist()
    queries = gen_noise_queries(vectors, picks, NoiseSpec(seed=3))
    truth, _ = ground_truth(vectors, queries, 10)
    base = BuildParams(cap_r=32, beam_l_build=200, ss=SSKind.KS, alpha=1.2, theta_deg=60.0, seed=5)
    widths = [10, 20, 40, 80, 160]
    curves = {}
    for nd in NDKind:
        result = build_index(vectors, base.model_copy(update={"nd": nd}))
        curves[nd] = [
            mean_recall(result, vectors, queries, truth, SearchParams(k=10, beam_l=w)) for w in widths
        ]
    variants = (NDKind.RND, NDKind.RRND, NDKind.MOND)
    for at in range(len(widths)):
        for nd in variants:
            assert curves[NDKind.NOND][at] <= curves[nd][at]
    strictly_worst = sum(
        all(curves[NDKind.NOND][at] < curves[nd][at] for nd in variants) for at in range(len(widths))
    )
    assert strictly_worst >= 4


def test_ii_rnd_reaches_high_recall_at_100(make_set):
    vectors = make_set(10_000, 32, seed=81)
    queries = make_set(100, 32, seed=82)
    truth, _ = ground_truth(vectors, queries, 100)
    p = BuildParams(cap_r=32, beam_l_build=500, nd=NDKind.RND, ss=SSKind.KS, seed=1)
    result = build_index(vectors, p)
    result.index.validate()
    best = max(
        mean_recall(result, vectors, queries, truth, SearchParams(k=100, beam_l=l))
        for l in (128, 256, 512)
    )
    assert best >= 0.99


def test_separate_dc_probes_more_find_more(make_set):
    vectors = make_set(10_000, 16, seed=51)
    queries = gen_noise_queries(vectors, list(range(0, 10_000, 50)), NoiseSpec(seed=6))
    truth, _ = ground_truth(vectors, queries, 10)
    p = BuildParams(cap_r=16, beam_l_build=64, leaf_size=2500, seed=2)
    result = build_index(vectors, p, BuildAlgo.DC, DCMode.SEPARATE)
    assert len(result.index.partitions) == 4
    one = mean_recall(result, vectors, queries, truth, SearchParams(k=10, beam_l=20, nprobe=1))
    four = mean_recall(result, vectors, queries, truth, SearchParams(k=10, beam_l=20, nprobe=4))
    assert four >= one


@pytest.mark.parametrize(
    "algo,ss",
    [(BuildAlgo.II, SSKind.SN), (BuildAlgo.II, SSKind.KM), (BuildAlgo.NND, SSKind.MD), (BuildAlgo.DC, SSKind.KS)],
)
def test_deterministic_builds_serialize_identically(make_set, algo, ss):
    vectors = make_set(800, 8, seed=61)
    p = BuildParams(cap_r=12, beam_l_build=32, leaf_size=300, ss=ss, seed=9)
    assert index_bytes(build_index(vectors, p, algo).index) == index_bytes(build_index(vectors, p, algo).index)


@pytest.mark.parametrize("ss", [SSKind.KS, SSKind.MD, SSKind.SN])
def test_query_cost_counts_distinct_nodes(make_set, monkeypatch, ss):
    vectors = make_set(1000, 8, seed=71)
    queries = make_set(30, 8, seed=72)
    result = build_index(vectors, BuildParams(cap_r=12, beam_l_build=32, ss=ss, seed=3))
    touched = set()

    class ShadowScope(DistanceScope):
        def distance(self, node: int) -> float:
            touched.add(node)
            return super().distance(node)

        def lookup(self, nodes):
            touched.update(nodes)
            return super().lookup(nodes)

        def absorb(self, nodes, d2):
            touched.update(nodes.tolist())
            super().absorb(nodes, d2)

    monkeypatch.setattr(gann.search, "DistanceScope", ShadowScope)
    for i in range(queries.n):
        touched.clear()
        got = search_index(result.index, result.seed_index, vectors, queries[i], SearchParams(k=10, beam_l=40), i)
        assert got.distance_calcs == len(touched)
