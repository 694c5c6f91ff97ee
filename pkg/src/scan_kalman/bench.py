"""Wall-clock benchmarks of sequential vs time-parallel inference."""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import parallel, sequential
from .beliefs import max_abs_diff
from .elbo import ElboConfig, GaussianDecoder, elbo
from .model import random_spec
from .scan import CHUNKED, ScanPlan

CSV_COLUMNS = ["backend", "op", "T", "d", "workers", "chunk", "wall_nanos", "repeats",
               "max_abs_diff"]


@dataclass
class BenchRecord:
    backend: str  # "sequential" | "parallel"
    op: str  # "filter" | "smooth" | "elbo"
    T: int
    d: int
    workers: int
    chunk_size: int
    wall_nanos: int
    repeats: int
    max_abs_diff_vs_sequential: Optional[float] = None

    def row(self) -> list:
        diff = "" if self.max_abs_diff_vs_sequential is None else repr(
            self.max_abs_diff_vs_sequential)
        return [self.backend, self.op, self.T, self.d, self.workers, self.chunk_size,
                self.wall_nanos, self.repeats, diff]


def _runner(backend: str, op: str, spec, plan: ScanPlan):
    cfg = ElboConfig(free_nats=0.0, alpha=0.0)
    decoder = GaussianDecoder.matched(spec)
    if backend == "sequential":
        filt = lambda: sequential.filter(spec)
        smooth = lambda: sequential.rts_smooth(spec, sequential.filter(spec))
    else:
        filt = lambda: parallel.parallel_filter(spec, plan=plan)
        smooth = lambda: parallel.parallel_smooth(spec, parallel.parallel_filter(spec, plan=plan),
                                                  plan)
    if op == "filter":
        return filt
    if op == "smooth":
        return smooth
    if op == "elbo":
        return lambda: elbo(spec, None, smooth(), decoder, cfg=cfg)
    raise ValueError(f"unknown op {op!r}")


def time_call(fn, repeats: int) -> int:
    """Median wall time in ns over ``repeats`` calls after one discarded warm-up."""
    return time_interleaved([fn], repeats)[0]


def time_interleaved(fns, repeats: int) -> list[int]:
    """Median wall times for several callables, timed round-robin.

    Each callable gets one discarded warm-up. Interleaving the repeats spreads
    slow drift of the machine over all configurations instead of biasing
    whichever happened to run last.
    """
    for fn in fns:
        fn()
    samples = [[] for _ in fns]
    for _ in range(repeats):
        for fn, acc in zip(fns, samples):
            t0 = time.perf_counter_ns()
            fn()
            acc.append(time.perf_counter_ns() - t0)
    return [max(1, int(statistics.median(acc))) for acc in samples]


def _diff(backend, op, spec, plan):
    if backend == "sequential":
        return None
    ref = _runner("sequential", op, spec, plan)()
    got = _runner(backend, op, spec, plan)()
    if op == "elbo":
        return abs(got.total - ref.total)
    return max(max_abs_diff(got, ref).values())


def run_bench(d: int, t_list: Iterable[int], backends=("sequential", "parallel"),
              ops=("filter",), workers: int = 1, chunk_size: int = 1024, repeats: int = 3,
              seed: int = 0, p_missing: float = 0.1):
    plan = ScanPlan(strategy=CHUNKED, chunk_size=chunk_size, workers=workers)
    configs = []
    for T in t_list:
        spec = random_spec(np.random.default_rng([seed, T, d]), d, T, p_missing=p_missing)
        for op in ops:
            for backend in backends:
                configs.append((T, op, backend, spec))
    walls = time_interleaved([_runner(b, op, spec, plan) for _, op, b, spec in configs], repeats)
    records = []
    for (T, op, backend, spec), wall in zip(configs, walls):
        seq = backend == "sequential"
        records.append(BenchRecord(backend, op, T, d, 1 if seq else workers,
                                   0 if seq else chunk_size, wall, repeats,
                                   _diff(backend, op, spec, plan)))
    return records


def write_csv(records: list[BenchRecord], path) -> None:
    """Append records; the header is written only when the file is new or empty."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.row())


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def scaling_ratio(records: list[BenchRecord], backend: str, op: str, t_small: int,
                  t_large: int) -> float:
    by_t = {r.T: r.wall_nanos for r in records if r.backend == backend and r.op == op}
    return by_t[t_large] / by_t[t_small]
