"""Micro-benchmark harness: time/memory scaling across sequence lengths and
per-token decoding latency across positions, with CSV output.

Scaling runs time a forward+backward pass of one attention method at each
requested sequence length (step-based decoding methods are forward-only, since
they model inference).  Auxiliary memory is taken from the instrumented
allocator, scoped to exactly the kernel calls, so inputs and outputs are
excluded.  Latency runs time a single decoding step at a set of positions.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import ContractViolation
from .featmaps import feature_map
from .instrument import track_aux
from .core import resolve_dtype
from .recurrent import KvCache, init_state, kv_cache_step, linear_step

SCALING_METHODS = ("softmax", "softmax-causal", "linear", "linear-causal",
                   "rnn-step", "kv-cache")
LATENCY_METHODS = ("rnn-step", "kv-cache", "naive-recompute")

CSV_HEADER = "method,n,time_ms_mean,time_ms_std,peak_aux_bytes"


@dataclass
class BenchSpec:
    method: str
    lengths: tuple = (512, 1024, 2048, 4096, 8192)
    dims: tuple = (16, 16, 1)  # (D, M, heads)
    repeats: int = 5
    warmup: int = 2
    precision: int = 64
    seed: int = 0
    memory_budget_mb: float = 4096.0
    batch_mode: str = "fixed"  # "fixed": one sample per run; "inverse": batch ~ 1/N
    inverse_tokens: int = 1 << 13  # token budget per run in inverse mode

    def __post_init__(self):
        self.lengths = tuple(int(n) for n in self.lengths)
        if any(b >= a for a, b in zip(self.lengths[1:], self.lengths)):
            raise ContractViolation(f"lengths must be strictly increasing: {self.lengths}")
        if self.repeats < 3:
            raise ContractViolation(f"repeats must be >= 3, got {self.repeats}")
        if self.batch_mode not in ("fixed", "inverse"):
            raise ContractViolation(f"batch_mode must be fixed or inverse, got {self.batch_mode!r}")
        resolve_dtype(self.precision)


@dataclass
class BenchRecord:
    method: str
    n: int
    time_ms_mean: float
    time_ms_std: float
    peak_aux_bytes: int
    time_ms_median: Optional[float] = field(default=None, compare=False)
    skipped: bool = field(default=False, compare=False)


def _aux_estimate_bytes(method: str, n: int, dims: tuple, itemsize: int) -> int:
    d, m, _ = dims
    if method in ("softmax", "softmax-causal"):
        return 2 * n * n * itemsize  # weight matrix + its gradient
    if method in ("linear", "linear-causal"):
        c = d
        return 3 * c * m * itemsize
    return n * (d + m) * itemsize  # step methods: cache growth bound


def _timed(fn, repeats: int, warmup: int) -> tuple[float, float, Optional[float]]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1e3)
    mean = statistics.fmean(samples)
    std = statistics.pstdev(samples)
    median = statistics.median(samples) if repeats >= 5 else None
    return mean, std, median


def _scaling_runner(spec: BenchSpec, n: int):
    """Build the callable timed at length ``n`` for the spec's method.

    Linear methods consume pre-mapped (nonnegative) features, so the timed and
    instrumented region is exactly the accumulator kernels.
    """
    d, m, heads = spec.dims
    dtype = resolve_dtype(spec.precision)
    rng = np.random.default_rng([spec.seed, n])
    q = rng.standard_normal((n, d)).astype(dtype)
    k = rng.standard_normal((n, d)).astype(dtype)
    v = rng.standard_normal((n, m)).astype(dtype)
    g = rng.standard_normal((n, m)).astype(dtype)
    method = spec.method

    if method in ("softmax", "softmax-causal"):
        causal = method.endswith("causal")
        batch = kernels.AttentionBatch(q, k, v, causal=causal)

        def run():
            for _ in range(heads):
                kernels.softmax_attention(batch)
                kernels.softmax_attention_backward(q, k, v, g, causal=causal)

        return run

    if method in ("linear", "linear-causal"):
        fm = feature_map("elu1")
        qf, kf = fm(q), fm(k)
        if method == "linear-causal":
            def run():
                for _ in range(heads):
                    kernels.causal_linear_forward(qf, kf, v)
                    kernels.causal_linear_backward(qf, kf, v, g)
        else:
            def run():
                for _ in range(heads):
                    kernels.linear_forward(qf, kf, v)
                    kernels.linear_backward(qf, kf, v, g)
        return run

    if method == "rnn-step":
        fm = feature_map("elu1")

        def run():
            state = init_state(d, m, dtype=dtype)
            for i in range(n):
                linear_step(state, q[i], k[i], v[i], fm)

        return run

    if method == "kv-cache":
        def run():
            cache = KvCache(d, m, dtype=dtype)
            for i in range(n):
                kv_cache_step(cache, q[i], k[i], v[i])

        return run

    raise ContractViolation(f"unknown scaling method {spec.method!r}, expected {SCALING_METHODS}")


def bench_scaling(spec: BenchSpec) -> list[BenchRecord]:
    """Time forward+backward of the spec's method at each length.

    Lengths whose estimated scratch exceeds the memory budget produce a record
    marked skipped instead of failing the whole run.
    """
    itemsize = resolve_dtype(spec.precision).itemsize
    records = []
    for n in spec.lengths:
        estimate = _aux_estimate_bytes(spec.method, n, spec.dims, itemsize)
        if estimate > spec.memory_budget_mb * 1024 * 1024:
            records.append(BenchRecord(spec.method, n, float("nan"), float("nan"), 0,
                                       skipped=True))
            continue
        run = _scaling_runner(spec, n)
        per_call = 1
        if spec.batch_mode == "inverse":
            per_call = max(1, spec.inverse_tokens // n)

        def sample():
            for _ in range(per_call):
                run()

        mean, std, median = _timed(sample, spec.repeats, spec.warmup)
        mean, std = mean / per_call, std / per_call
        if median is not None:
            median /= per_call
        with track_aux() as counter:
            run()
        records.append(BenchRecord(spec.method, n, mean, std, counter.bytes_allocated,
                                   time_ms_median=median))
    return records


def _latency_runner(spec: BenchSpec, position: int, inner: int):
    """Per-step timing at a position: returns (sample_fn, aux_fn)."""
    d, m, _ = spec.dims
    dtype = resolve_dtype(spec.precision)
    rng = np.random.default_rng([spec.seed, position])
    pool = position + inner + 1
    q = rng.standard_normal((pool, d)).astype(dtype)
    k = rng.standard_normal((pool, d)).astype(dtype)
    v = rng.standard_normal((pool, m)).astype(dtype)
    method = spec.method

    if method == "rnn-step":
        fm = feature_map("elu1")
        state = init_state(d, m, dtype=dtype)
        for i in range(position - 1):
            linear_step(state, q[i], k[i], v[i], fm)

        def sample():
            for i in range(inner):
                linear_step(state, q[position + i], k[position + i], v[position + i], fm)

        def aux():
            with track_aux() as counter:
                linear_step(state, q[position], k[position], v[position], fm)
            return counter.bytes_allocated

        return sample, aux

    if method == "kv-cache":
        cache = KvCache(d, m, dtype=dtype, capacity=pool + 1)
        for i in range(position - 1):
            kv_cache_step(cache, q[i], k[i], v[i])
        base = cache.length

        def sample():
            for i in range(inner):
                kv_cache_step(cache, q[position + i], k[position + i], v[position + i])
            cache.truncate(base)

        def aux():
            with track_aux() as counter:
                kv_cache_step(cache, q[position], k[position], v[position])
            cache.truncate(base)
            return counter.bytes_allocated

        return sample, aux

    if method == "naive-recompute":
        batch = kernels.AttentionBatch(q[:position], k[:position], v[:position], causal=True)

        def sample():
            for _ in range(inner):
                kernels.softmax_attention(batch)

        def aux():
            with track_aux() as counter:
                kernels.softmax_attention(batch)
            return counter.bytes_allocated

        return sample, aux

    raise ContractViolation(f"unknown latency method {spec.method!r}, expected {LATENCY_METHODS}")


def bench_latency(spec: BenchSpec, positions=(10, 100, 1000), inner: int = 8) -> list[BenchRecord]:
    """Per-token wall time of one decoding step at each position.

    Each timing sample runs ``inner`` consecutive steps and divides, to keep
    timer granularity out of the numbers; the kv-cache is rolled back after
    every sample so its cost stays pinned to the position.
    """
    records = []
    for position in positions:
        if position < 1:
            raise ContractViolation(f"positions must be >= 1, got {position}")
        sample, aux = _latency_runner(spec, position, inner)
        mean, std, median = _timed(sample, spec.repeats, spec.warmup)
        scale = 1.0 / inner
        records.append(BenchRecord(
            spec.method, position, mean * scale, std * scale, aux(),
            time_ms_median=None if median is None else median * scale,
        ))
    return records


def loglog_slope(records: list[BenchRecord]) -> float:
    """Least-squares slope of log(time) vs log(n) over non-skipped records."""
    pts = [(r.n, r.time_ms_mean) for r in records if not r.skipped]
    if len(pts) < 2:
        raise ContractViolation("slope fit needs at least two measured records")
    xs = np.log([p[0] for p in pts])
    ys = np.log([p[1] for p in pts])
    return float(np.polyfit(xs, ys, 1)[0])


def emit_csv(records: list[BenchRecord], path) -> None:
    """Write records as CSV: fixed header, rows sorted by (method, n).

    Floats are written with repr so a parse round-trips exactly; skipped
    records are not emitted.
    """
    rows = sorted((r for r in records if not r.skipped), key=lambda r: (r.method, r.n))
    lines = [CSV_HEADER]
    lines += [
        f"{r.method},{r.n},{r.time_ms_mean!r},{r.time_ms_std!r},{r.peak_aux_bytes}"
        for r in rows
    ]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def parse_csv(path) -> list[BenchRecord]:
    """Read back a CSV produced by :func:`emit_csv`."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read CSV from {path}: {exc}") from exc
    lines = [line for line in text.splitlines() if line]
    if not lines or lines[0] != CSV_HEADER:
        raise ContractViolation(f"{path}: missing or wrong CSV header")
    records = []
    for line in lines[1:]:
        method, n, mean, std, peak = line.split(",")
        records.append(BenchRecord(method, int(n), float(mean), float(std), int(peak)))
    return records
