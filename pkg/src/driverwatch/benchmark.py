"""Per-image latency benchmarking with percentile statistics.

Timing is per call on a monotonic clock (single-image latency is the figure
of merit, not amortized batch throughput). Percentiles use the nearest-rank
definition on the sorted sample vector. Parameter and FLOP fields are taken
from the graph counters so there is a single source of truth.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import graph as G
from .tensor import Tensor


@dataclass(frozen=True)
class BenchReport:
    params: int
    macs: int
    flops: int
    input_size: int
    iters: int
    warmup: int
    threads: int
    latency_ms: dict[str, float]

    def to_json_dict(self) -> dict:
        return {
            "params": self.params,
            "macs": self.macs,
            "flops": self.flops,
            "input_size": self.input_size,
            "iters": self.iters,
            "warmup": self.warmup,
            "threads": self.threads,
            "latency_ms": dict(self.latency_ms),
        }

    def table_row(self) -> str:
        lat = self.latency_ms
        return (
            f"params={self.params} flops={self.flops} size={self.input_size} "
            f"threads={self.threads} iters={self.iters} "
            f"mean={lat['mean']:.2f}ms p50={lat['p50']:.2f}ms "
            f"p90={lat['p90']:.2f}ms p99={lat['p99']:.2f}ms min={lat['min']:.2f}ms"
        )


def percentile_nearest_rank(samples: list[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest sample."""
    if not samples:
        raise ValueError("no samples")
    if not 0 < q <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {q}")
    ordered = sorted(samples)
    rank = int(np.ceil(q / 100.0 * len(ordered)))
    return ordered[max(rank, 1) - 1]


@contextmanager
def _limit_blas_threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=n):
        yield


def bench(model: G.Model, input_size: int = 224, iters: int = 50, warmup: int = 5,
          threads: int = 1, seed: int = 0) -> BenchReport:
    """Time single-image forwards on a fixed random input."""
    if not model.is_bound:
        raise G.UnboundModelError("bench requires a bound model")
    if iters < 10:
        raise ValueError(f"iters must be >= 10, got {iters}")
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    rng = np.random.default_rng(seed)
    c_in = model.layers[0].in_channels
    batch = Tensor(rng.random((1, c_in, input_size, input_size), dtype=np.float32))

    samples_ms: list[float] = []
    with _limit_blas_threads(threads):
        for _ in range(warmup):
            G.forward(model, batch)
        for _ in range(iters):
            t0 = time.perf_counter()
            G.forward(model, batch)
            samples_ms.append((time.perf_counter() - t0) * 1000.0)

    counters = G.count_macs(model, input_size)
    return BenchReport(
        params=G.count_params(model),
        macs=counters["macs"],
        flops=counters["flops"],
        input_size=input_size,
        iters=iters,
        warmup=warmup,
        threads=threads,
        latency_ms={
            "mean": float(np.mean(samples_ms)),
            "p50": percentile_nearest_rank(samples_ms, 50),
            "p90": percentile_nearest_rank(samples_ms, 90),
            "p99": percentile_nearest_rank(samples_ms, 99),
            "min": min(samples_ms),
        },
    )


def write_bench_json(report: BenchReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")
