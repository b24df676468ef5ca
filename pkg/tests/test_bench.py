"""Tests for the benchmark harness and its CSV contract."""

import numpy as np
import pytest

from linatt.bench import (BenchRecord, BenchSpec, bench_latency, bench_scaling,
                          emit_csv, loglog_slope, parse_csv)
from linatt.errors import ContractViolation


class TestBenchSpec:
    def test_lengths_must_increase(self):
        with pytest.raises(ContractViolation):
            BenchSpec(method="softmax", lengths=(512, 512))
        with pytest.raises(ContractViolation):
            BenchSpec(method="softmax", lengths=(1024, 512))

    def test_repeats_minimum(self):
        with pytest.raises(ContractViolation):
            BenchSpec(method="softmax", repeats=2)

    def test_bad_precision_and_batch_mode(self):
        with pytest.raises(ContractViolation):
            BenchSpec(method="softmax", precision=16)
        with pytest.raises(ContractViolation):
            BenchSpec(method="softmax", batch_mode="huge")

    def test_unknown_method_rejected_at_run(self):
        spec = BenchSpec(method="softmax", lengths=(8, 16), repeats=3, warmup=1)
        spec.method = "quantum"
        with pytest.raises(ContractViolation):
            bench_scaling(spec)


class TestScaling:
    @pytest.mark.parametrize("method", ["softmax", "softmax-causal", "linear",
                                        "linear-causal", "rnn-step", "kv-cache"])
    def test_records_are_sane(self, method):
        spec = BenchSpec(method=method, lengths=(8, 16, 32), repeats=3, warmup=1)
        records = bench_scaling(spec)
        assert [r.n for r in records] == [8, 16, 32]
        for r in records:
            assert r.method == method
            assert r.time_ms_mean > 0
            assert np.isfinite(r.time_ms_std)
            assert r.peak_aux_bytes >= 0
            assert r.time_ms_median is None  # repeats < 5

    def test_median_recorded_with_five_repeats(self):
        spec = BenchSpec(method="linear-causal", lengths=(8, 16), repeats=5, warmup=1)
        records = bench_scaling(spec)
        assert all(r.time_ms_median is not None for r in records)

    def test_linear_causal_memory_flat_and_softmax_quadratic(self):
        lin = bench_scaling(BenchSpec(method="linear-causal", lengths=(64, 128, 256),
                                      repeats=3, warmup=1))
        assert len({r.peak_aux_bytes for r in lin}) == 1
        soft = bench_scaling(BenchSpec(method="softmax", lengths=(64, 256),
                                       repeats=3, warmup=1))
        ratio = soft[1].peak_aux_bytes / soft[0].peak_aux_bytes
        assert ratio >= (256 / 64) ** 2 * 0.5

    def test_memory_budget_skips_not_crashes(self):
        spec = BenchSpec(method="softmax", lengths=(16, 64), repeats=3, warmup=1,
                         memory_budget_mb=16 * 16 * 8 * 4 / (1024 * 1024))
        records = bench_scaling(spec)
        assert not records[0].skipped and records[1].skipped

    def test_time_nondecreasing_in_length(self):
        spec = BenchSpec(method="linear-causal", lengths=(128, 512, 2048),
                         repeats=3, warmup=1)
        times = [r.time_ms_mean for r in bench_scaling(spec)]
        assert times[0] < times[1] < times[2]

    def test_inverse_batch_mode_runs(self):
        spec = BenchSpec(method="linear", lengths=(16, 32), repeats=3, warmup=1,
                         batch_mode="inverse", inverse_tokens=64)
        records = bench_scaling(spec)
        assert all(r.time_ms_mean > 0 for r in records)

    def test_float32_mode_runs(self):
        spec = BenchSpec(method="linear-causal", lengths=(16, 32), repeats=3,
                         warmup=1, precision=32)
        records = bench_scaling(spec)
        assert all(r.time_ms_mean > 0 for r in records)


class TestLatency:
    def test_positions_and_growth_directions(self):
        rnn = bench_latency(BenchSpec(method="rnn-step", dims=(32, 32, 1), repeats=3,
                                      warmup=1), positions=(5, 50), inner=4)
        kv = bench_latency(BenchSpec(method="kv-cache", dims=(32, 32, 1), repeats=3,
                                     warmup=1), positions=(5, 50), inner=4)
        naive = bench_latency(BenchSpec(method="naive-recompute", dims=(32, 32, 1),
                                        repeats=3, warmup=1), positions=(5, 50),
                              inner=4)
        for rows in (rnn, kv, naive):
            assert [r.n for r in rows] == [5, 50]
            assert all(r.time_ms_mean > 0 for r in rows)
        # naive recompute at position 50 is already the most expensive mode
        assert naive[1].time_ms_mean > rnn[1].time_ms_mean

    def test_kv_cache_position_is_stable_across_repeats(self):
        # the harness must roll the cache back, otherwise repeated sampling
        # would inflate the measured position
        spec = BenchSpec(method="kv-cache", dims=(16, 16, 1), repeats=3, warmup=1)
        records = bench_latency(spec, positions=(20,), inner=4)
        assert records[0].n == 20

    def test_invalid_position(self):
        spec = BenchSpec(method="rnn-step", repeats=3, warmup=1)
        with pytest.raises(ContractViolation):
            bench_latency(spec, positions=(0,))


class TestCsv:
    def test_empty_records_give_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_csv([], path)
        assert path.read_text() == "method,n,time_ms_mean,time_ms_std,peak_aux_bytes\n"

    def test_rows_sorted_by_method_then_n(self, tmp_path):
        records = [
            BenchRecord("softmax", 16, 2.0, 0.1, 100),
            BenchRecord("linear", 32, 3.0, 0.2, 50),
            BenchRecord("linear", 16, 1.0, 0.05, 50),
        ]
        path = tmp_path / "two.csv"
        emit_csv(records, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 4
        assert lines[1].startswith("linear,16,") and lines[2].startswith("linear,32,")
        assert lines[3].startswith("softmax,16,")

    def test_round_trip_reproduces_records_exactly(self, tmp_path):
        records = [
            BenchRecord("linear-causal", 512, 1.2339999999999999e-05, 0.1 + 0.2, 4096),
            BenchRecord("linear-causal", 1024, 3.7, 1e-300, 4096),
        ]
        path = tmp_path / "rt.csv"
        emit_csv(records, path)
        assert parse_csv(path) == records

    def test_skipped_records_not_emitted(self, tmp_path):
        records = [BenchRecord("softmax", 8, 1.0, 0.1, 10),
                   BenchRecord("softmax", 16, float("nan"), float("nan"), 0, skipped=True)]
        path = tmp_path / "skip.csv"
        emit_csv(records, path)
        assert len(path.read_text().splitlines()) == 2

    def test_csv_deterministic_except_time_columns(self, tmp_path):
        spec = dict(method="linear-causal", lengths=(8, 16), repeats=3, warmup=1)
        a = bench_scaling(BenchSpec(**spec))
        b = bench_scaling(BenchSpec(**spec))
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_csv(a, pa)
        emit_csv(b, pb)
        for la, lb in zip(pa.read_text().splitlines(), pb.read_text().splitlines()):
            ca, cb = la.split(","), lb.split(",")
            assert (ca[0], ca[1], ca[4]) == (cb[0], cb[1], cb[4])

    def test_write_failure_reports_path(self, tmp_path):
        with pytest.raises(OSError, match="no/such"):
            emit_csv([], tmp_path / "no" / "such" / "dir.csv")

    def test_parse_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n")
        with pytest.raises(ContractViolation):
            parse_csv(path)


def test_loglog_slope_recovers_exponents():
    records = [BenchRecord("m", n, 0.001 * n**2, 0.0, 0) for n in (64, 128, 256, 512)]
    assert abs(loglog_slope(records) - 2.0) < 1e-9
    records = [BenchRecord("m", n, 0.5 * n, 0.0, 0) for n in (64, 128, 256, 512)]
    assert abs(loglog_slope(records) - 1.0) < 1e-9
    with pytest.raises(ContractViolation):
        loglog_slope([BenchRecord("m", 8, 1.0, 0.0, 0)])
