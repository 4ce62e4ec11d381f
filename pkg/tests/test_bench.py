import gc
import os

import pytest

from ssmic import bench


def test_bench_latency_counts_calls():
    calls = []
    r = bench.bench_latency(lambda: calls.append(1), warmup=2, iters=5)
    assert len(calls) == 7
    assert r.iters == 5 and r.warmup == 2
    assert 0 <= r.min_ms <= r.mean_ms and r.std_ms >= 0
    d = r.to_dict()
    assert set(d) == {"mean_ms", "std_ms", "min_ms", "iters", "warmup", "machine"}
    assert d["machine"]["numpy"]


def test_single_iteration_has_zero_std():
    assert bench.bench_latency(lambda: None, warmup=0, iters=1).std_ms == 0.0
    with pytest.raises(ValueError):
        bench.bench_latency(lambda: None, iters=0)


def test_state_is_restored():
    before = os.sched_getaffinity(0) if hasattr(os, "sched_getaffinity") else None
    seen = []

    def op():
        seen.append(gc.isenabled())
        if before is not None:
            seen.append(len(os.sched_getaffinity(0)))

    bench.bench_latency(op, warmup=0, iters=1)
    assert seen[0] is False
    if before is not None:
        assert seen[1] == 1 and os.sched_getaffinity(0) == before
    assert gc.isenabled()
