"""Wall-clock latency harness."""

from __future__ import annotations

import gc
import os
import platform
import statistics
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np


def machine_descriptor() -> dict[str, str]:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpus": str(os.cpu_count()),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


@dataclass
class LatencyReport:
    mean_ms: float
    std_ms: float
    min_ms: float
    iters: int
    warmup: int
    machine: dict[str, str] = field(default_factory=machine_descriptor)

    def to_dict(self) -> dict:
        return asdict(self)


@contextmanager
def _single_worker():
    """Pin the process to one CPU and pause the GC while timing."""
    affinity = None
    if hasattr(os, "sched_getaffinity"):
        try:
            affinity = os.sched_getaffinity(0)
            os.sched_setaffinity(0, {min(affinity)})
        except OSError:
            affinity = None
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if gc_was_enabled:
            gc.enable()
        if affinity is not None:
            os.sched_setaffinity(0, affinity)


def bench_latency(op: Callable[[], object], warmup: int = 1, iters: int = 10) -> LatencyReport:
    """Time ``op()`` ``iters`` times after ``warmup`` untimed calls."""
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    samples = []
    with _single_worker():
        for _ in range(warmup):
            op()
        for _ in range(iters):
            t0 = time.perf_counter()
            op()
            samples.append((time.perf_counter() - t0) * 1e3)
    std = statistics.stdev(samples) if len(samples) > 1 else 0.0
    return LatencyReport(statistics.fmean(samples), std, min(samples), iters, warmup)
