"""Phase timing and per-phase distance counters."""

from gann.profiler import Profiler


def test_phases_accumulate():
    profiler = Profiler("build")
    with profiler.time_block("pruning") as counter:
        counter.add(5)
    with profiler.time_block("pruning") as counter:
        counter.add(2)
    with profiler.time_block("repair") as counter:
        counter.add(1)
    assert profiler.distance_calcs == 8
    reports = profiler.phase_reports()
    assert reports["pruning"].distance_calcs == 7
    assert profiler.phases["pruning"].calls == 2


def test_merge_folds_worker_phases():
    main, worker = Profiler(), Profiler()
    with worker.time_block("candidate_search") as counter:
        counter.add(4)
    with main.time_block("candidate_search") as counter:
        counter.add(1)
    main.merge(worker)
    assert main.phases["candidate_search"].counter.count == 5
    assert main.phases["candidate_search"].calls == 2


def test_summary():
    profiler = Profiler("request")
    with profiler.time_block("search") as counter:
        counter.add(3)
    total = profiler.stop()
    assert profiler.elapsed == total
    summary = profiler.summary()
    assert summary["label"] == "request"
    assert summary["distance_calcs"] == 3
    assert [p["name"] for p in summary["phases"]] == ["search"]
    assert 0 <= summary["phases"][0]["percentage"] <= 100
    assert summary["bottlenecks"][0][0] == "search"
