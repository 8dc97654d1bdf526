import json
from pathlib import Path

import pytest

from hrrformer import bench
from hrrformer.errors import ConfigError

FIXTURES = Path(__file__).parent / "fixtures"


def synthetic(model, power, scale=1e-6):
    return [bench.BenchRecord(model, T, 64, 8, 1, "ok", scale * T ** power) for T in bench.powers_of_two(512, 8192)]


class TestSlope:
    def test_linear(self):
        assert bench.fit_loglog_slope(synthetic("hrr", 1.0))["hrr"] == pytest.approx(1.0, abs=1e-9)

    def test_quadratic(self):
        assert bench.fit_loglog_slope(synthetic("dot", 2.0))["dot"] == pytest.approx(2.0, abs=1e-9)

    def test_per_model_and_skips_failures(self):
        recs = synthetic("hrr", 1.0) + synthetic("dot", 2.0) + [bench.BenchRecord("dot", 16384, 64, 8, 1, "OOM")]
        slopes = bench.fit_loglog_slope(recs)
        assert slopes["hrr"] == pytest.approx(1.0) and slopes["dot"] == pytest.approx(2.0)

    def test_noisy_fixture(self):
        recs = bench.read_csv(FIXTURES / "bench_noisy.csv")
        expected = json.loads((FIXTURES / "bench_noisy_slope.json").read_text())["slope_hrr"]
        assert bench.fit_loglog_slope(recs)["hrr"] == pytest.approx(expected, abs=1e-12)


class TestSweep:
    def test_powers_of_two(self):
        assert bench.powers_of_two(4, 32) == [4, 8, 16, 32]
        with pytest.raises(ConfigError):
            bench.powers_of_two(6, 32)
        with pytest.raises(ConfigError):
            bench.powers_of_two(64, 32)

    def test_preset_batch(self):
        assert bench.preset_batch(512) == 128
        assert bench.preset_batch(65536) == 1
        assert bench.preset_batch(2 ** 20) == 1

    def test_records(self):
        recs = bench.sweep("hrr", 16, 64, 16, 4, reps=1) + bench.sweep("dot", 16, 64, 16, 4, reps=1)
        for r in recs:
            assert r.status == "ok" and r.wall_seconds > 0 and r.peak_bytes > 0
        hrr = [r.fft_calls for r in recs if r.model == "hrr"]
        assert hrr[1] == 2 * hrr[0] and hrr[2] == 2 * hrr[1]
        assert all(r.fft_calls == 0 for r in recs if r.model == "dot")

    def test_dot_memory_quadruples(self):
        recs = bench.sweep("dot", 256, 1024, 16, 4, reps=1)
        ratios = [b.peak_bytes / a.peak_bytes for a, b in zip(recs, recs[1:])]
        assert all(3.2 < r <= 4.2 for r in ratios)

    def test_backward_pass_counts_more_transforms(self):
        fwd = bench.bench_one("hrr", 32, 16, 2, reps=1)
        both = bench.bench_one("hrr", 32, 16, 2, reps=1, backward=True)
        assert both.fft_calls == 2 * fwd.fft_calls

    def test_oom_row_keeps_sweeping(self):
        recs = bench.sweep("dot", 64, 512, 16, 4, reps=1, mem_limit=2 ** 20)
        assert [r.status for r in recs][-1] == "OOM"
        assert recs[0].status == "ok"
        assert recs[-1].wall_seconds is None

    def test_unknown_model(self):
        with pytest.raises(ConfigError):
            bench.bench_one("lin", 16, 8, 2)


def test_csv_roundtrip(tmp_path):
    recs = synthetic("hrr", 1.0)[:2] + [bench.BenchRecord("dot", 8192, 64, 8, 1, "OOM")]
    for r in recs[:2]:
        r.peak_bytes, r.fft_calls = 123, 456
    bench.write_csv(recs, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == ",".join(bench.BENCH_HEADER)
    back = bench.read_csv(tmp_path / "b.csv")
    assert [r.status for r in back] == ["ok", "ok", "OOM"]
    assert back[0].wall_seconds == pytest.approx(recs[0].wall_seconds, rel=1e-6)
    assert back[2].peak_bytes is None
