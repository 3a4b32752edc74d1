"""Scaling benchmarks: layered einsum engine vs. the scalar oracle.

Sweeps the vector length K, split depth and replica count of randomized
binary-tree models on synthetic Gaussian noise, measuring forward and
backward wall time plus the engine-tracked peak tensor allocation. The
scalar oracle is timed on a few samples and scaled to the batch size
(it is the deliberately slow baseline).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import engine, oracle
from .compiler import compile_graph
from .expfam import GaussianFamily
from .structures import StructureConfig, random_binary_tree

DEFAULT_K = 10
DEFAULT_DEPTH = 4
DEFAULT_REPLICAS = 10


@dataclass
class BenchRow:
    engine: str
    k: int
    depth: int
    replicas: int
    batch: int
    forward_ms: float
    backward_ms: float
    peak_bytes: int


def _build(k, depth, replicas, d_vars, seed):
    rg = random_binary_tree(d_vars, StructureConfig(
        depth=depth, replicas=replicas, seed=seed))
    circuit = compile_graph(rg, k=k)
    family = GaussianFamily()
    params = engine.init_parameters(circuit, family, seed=seed)
    return circuit, params, family


def _time_engine(circuit, params, family, x, repeats=3):
    tracker = engine.AllocationTracker()
    fwd, bwd = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        trace = engine.forward(circuit, params, family, x, tracker=tracker)
        t1 = time.perf_counter()
        engine.backward(circuit, params, family, trace, tracker=tracker)
        t2 = time.perf_counter()
        fwd.append(t1 - t0)
        bwd.append(t2 - t1)
        tracker.reset()
    return min(fwd) * 1e3, min(bwd) * 1e3, tracker.peak


def _time_oracle(circuit, params, family, x, oracle_samples):
    sc = oracle.expand(circuit, params, family)
    m = min(oracle_samples, len(x))
    t0 = time.perf_counter()
    for row in x[:m]:
        oracle.scalar_eval(sc, row)
    per_sample = (time.perf_counter() - t0) / m
    return per_sample * len(x) * 1e3, float("nan"), len(sc.nodes) * 8


def run_bench(k_list=(), depth_list=(), replica_list=(), batch=100,
              d_vars=64, seed=0, oracle_samples=3, include_oracle=True) -> list:
    """One row per configuration per engine; unswept parameters stay at the
    defaults K=10, depth=4, replicas=10."""
    configs = []
    for k in k_list:
        configs.append((int(k), DEFAULT_DEPTH, DEFAULT_REPLICAS))
    for d in depth_list:
        configs.append((DEFAULT_K, int(d), DEFAULT_REPLICAS))
    for r in replica_list:
        configs.append((DEFAULT_K, DEFAULT_DEPTH, int(r)))
    if not configs:
        configs = [(DEFAULT_K, DEFAULT_DEPTH, DEFAULT_REPLICAS)]

    rng = np.random.default_rng(seed)
    rows = []
    for k, depth, replicas in configs:
        dv = max(d_vars, 2 ** depth)
        x = rng.normal(size=(batch, dv))
        circuit, params, family = _build(k, depth, replicas, dv, seed)
        f_ms, b_ms, peak = _time_engine(circuit, params, family, x)
        rows.append(BenchRow("einsum", k, depth, replicas, batch,
                             f_ms, b_ms, peak))
        if include_oracle:
            f_ms, b_ms, peak = _time_oracle(circuit, params, family, x,
                                            oracle_samples)
            rows.append(BenchRow("oracle", k, depth, replicas, batch,
                                 f_ms, b_ms, peak))
    return rows


def write_report(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(asdict(rows[0])))
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))


def fit_scaling_exponent(k_values, times_ms):
    """Log-log regression slope of time against K."""
    lx = np.log(np.asarray(k_values, dtype=float))
    ly = np.log(np.asarray(times_ms, dtype=float))
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)
