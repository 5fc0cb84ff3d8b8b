"""Wall-clock microbenchmarks for the two aggregation mechanisms.

Times only the aggregation step: rolls + max folding for the fixed-graph
path, and graph construction + layout changes + gathers + max folding for
the KNN baseline. The shared projection conv is excluded by default and can
be included symmetrically for both mechanisms.
"""

from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import asdict, dataclass

import numpy as np

from .knn import knn_aggregate, knn_graph, mrconv_knn
from .svga import mrconv_aggregate, mrconv_roll
from .tensor_core import ConvBn, ConvSpec

MIN_REPS = 30
MIN_WARMUP = 5


@dataclass
class BenchRecord:
    mechanism: str  # "svga" or "knn"
    h: int
    w: int
    c: int
    k: int  # connection stride for svga, neighbor count for knn
    batch: int
    reps: int
    median_ns: int
    p10_ns: int
    p90_ns: int


@dataclass
class BenchReport:
    records: list[BenchRecord]
    env: dict

    def to_dict(self) -> dict:
        return {"env": dict(self.env), "records": [asdict(r) for r in self.records]}

    def write_json(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    def write_csv(self, path: str) -> None:
        fields = ["mechanism", "h", "w", "c", "k", "batch", "reps",
                  "median_ns", "p10_ns", "p90_ns"]
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            for r in self.records:
                writer.writerow(asdict(r))


def environment(threads: int) -> dict:
    return {
        "threads": threads,
        "scalar_width": 32,
        "build_profile": f"cpython-{platform.python_version()}-numpy-{np.__version__}",
    }


def _shared_projection(c: int, seed: int) -> ConvBn:
    rng = np.random.default_rng([seed, 0xB0])
    spec = ConvSpec(2 * c, 2 * c, (1, 1))
    zeros = np.zeros(2 * c, dtype=np.float32)
    ones = np.ones(2 * c, dtype=np.float32)
    return ConvBn(spec, rng.standard_normal(spec.weight_shape()).astype(np.float32),
                  zeros, ones, zeros.copy(), zeros.copy(), ones.copy())


def time_aggregation(mechanism: str, h: int, w: int, c: int, k: int,
                     batch: int = 1, reps: int = 100, warmup: int = 10,
                     include_projection: bool = False, seed: int = 0) -> BenchRecord:
    if mechanism not in ("svga", "knn"):
        raise ValueError(f"unknown mechanism {mechanism!r}")
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}, got {reps}")
    if warmup < MIN_WARMUP:
        raise ValueError(f"warmup must be >= {MIN_WARMUP}, got {warmup}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, c, h, w)).astype(np.float32)
    proj = _shared_projection(c, seed) if include_projection else None

    if mechanism == "svga":
        if include_projection:
            def step():
                return mrconv_roll(x, k, proj)
        else:
            def step():
                return mrconv_aggregate(x, k)
    else:
        if include_projection:
            def step():
                return mrconv_knn(x, knn_graph(x, k), proj)
        else:
            def step():
                return knn_aggregate(x, knn_graph(x, k))

    for _ in range(warmup):
        step()
    times = np.empty(reps, dtype=np.int64)
    for i in range(reps):
        t0 = time.perf_counter_ns()
        step()
        times[i] = time.perf_counter_ns() - t0
    med, p10, p90 = (int(np.percentile(times, q, method="nearest"))
                     for q in (50, 10, 90))
    return BenchRecord(mechanism=mechanism, h=h, w=w, c=c, k=k, batch=batch,
                       reps=reps, median_ns=med, p10_ns=p10, p90_ns=p90)


def run_bench(mechanisms: list[str], h: int, w: int, c: int, svga_k: int = 2,
              knn_k: int = 9, batch: int = 1, reps: int = 100, warmup: int = 10,
              include_projection: bool = False, seed: int = 0,
              threads: int = 1) -> BenchReport:
    records = []
    for mech in mechanisms:
        k = svga_k if mech == "svga" else knn_k
        records.append(time_aggregation(
            mech, h, w, c, k, batch=batch, reps=reps, warmup=warmup,
            include_projection=include_projection, seed=seed))
    return BenchReport(records=records, env=environment(threads))
