"""Bench harness checks at reduced scale.

Wall-clock numbers vary run to run, so assertions here stay structural:
phase accounting, report shape, scaling direction. The single absolute
latency bound lives in the acceptance suite where the full configuration
is pinned.
"""

import pytest

from becr.bench import BenchConfig, PhaseStats, run_bench, write_bench_csv


def small_config(**overrides):
    base = dict(
        mode="lsh",
        n_docs=8,
        doc_len=60,
        q_len=3,
        n_layers=2,
        bits=64,
        dim=8,
        seed=11,
        repeats=3,
    )
    base.update(overrides)
    return BenchConfig(**base)


@pytest.fixture(scope="module")
def small_report(tmp_path_factory):
    workdir = tmp_path_factory.mktemp("bench")
    return run_bench(small_config(), workdir)


class TestPhaseStats:
    def test_hand_samples(self):
        stats = PhaseStats.from_seconds([0.010, 0.020, 0.030])
        assert stats.mean_ms == pytest.approx(20.0)
        assert stats.p50_ms == pytest.approx(20.0)
        assert stats.p95_ms == pytest.approx(29.0)

    def test_single_sample_collapses(self):
        stats = PhaseStats.from_seconds([0.005])
        assert stats.mean_ms == stats.p50_ms == stats.p95_ms == pytest.approx(5.0)


class TestRunBench:
    def test_phases_account_for_total(self, small_report):
        r = small_report
        assert r.fetch.mean_ms > 0
        assert r.compute.mean_ms > 0
        assert r.fetch.mean_ms + r.compute.mean_ms <= r.total.mean_ms * 1.001

    def test_doc_count_reported(self, small_report):
        assert small_report.docs == 8

    def test_flops_deterministic_for_config(self, small_report, tmp_path):
        again = run_bench(small_config(), tmp_path)
        assert again.flops.as_dict() == small_report.flops.as_dict()

    def test_full_mode_has_no_popcount(self, tmp_path):
        report = run_bench(small_config(mode="full", repeats=2), tmp_path)
        assert report.flops.popcount == 0
        assert report.flops.similarity > 0

    def test_more_layers_cost_more_compute(self, tmp_path):
        shallow = run_bench(
            small_config(n_docs=30, doc_len=400, q_len=4, bits=128, n_layers=2, repeats=4),
            tmp_path / "shallow",
        )
        deep = run_bench(
            small_config(n_docs=30, doc_len=400, q_len=4, bits=128, n_layers=8, repeats=4),
            tmp_path / "deep",
        )
        assert deep.flops.total / shallow.flops.total == pytest.approx(4.0, rel=1e-9)
        assert deep.compute.mean_ms > shallow.compute.mean_ms

    def test_thread_count_from_environment(self, monkeypatch):
        monkeypatch.setenv("BECR_THREADS", "3")
        assert "threads=3" in small_config().label()
        monkeypatch.delenv("BECR_THREADS")
        assert "threads=1" in small_config().label()
        assert "threads=2" in small_config(threads=2).label()


class TestReportOutput:
    def test_csv_rows_are_four_fields(self, small_report):
        for row in small_report.csv_rows():
            assert len(row.split(",")) == 4

    def test_csv_covers_phases_and_flops(self, small_report):
        rows = small_report.csv_rows()
        phases = {row.split(",")[1] for row in rows}
        assert phases == {"fetch", "compute", "total", "flops"}
        metrics = {row.split(",")[2] for row in rows if row.split(",")[1] == "fetch"}
        assert metrics == {"mean_ms", "p50_ms", "p95_ms"}

    def test_csv_file_has_header(self, small_report, tmp_path):
        path = tmp_path / "bench.csv"
        write_bench_csv(path, [small_report])
        lines = path.read_text().splitlines()
        assert lines[0] == "config,phase,metric,value"
        assert len(lines) == 1 + len(small_report.csv_rows())

    def test_label_pins_configuration(self, small_report):
        label = small_report.config.label()
        assert "mode=lsh" in label
        assert "b=64" in label
        assert "docs=8" in label
        for row in small_report.csv_rows():
            assert row.startswith(label + ",")

    def test_text_report_mentions_every_phase(self, small_report):
        text = small_report.as_text()
        for needle in ("fetch", "compute", "total", "flops/doc"):
            assert needle in text
