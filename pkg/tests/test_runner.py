"""Tests for sweep orchestration in inasim.runner."""

from contextlib import nullcontext
from dataclasses import replace
from fractions import Fraction
from types import SimpleNamespace

import pytest

from inasim.config import MODES, build_config
from inasim.exceptions import MissingModeError
from inasim.formatting import Colors
from inasim.report import RatioRecord, ReportWriter
from inasim.runner import ExperimentRunner, Summary, ordering_checks, pair_ratios

# Layer A splits each filter over two PEs with 64-bit PE memories, layer B does not.
TOY_LAYERS = [("A", 1, 3, 6, 2), ("B", 1, 2, 4, 2)]


@pytest.fixture
def sweep_config(tmp_path, make_workload):
    """Factory fixture: a four-by-four sweep over the toy layers writing into ``tmp_path/out``."""

    def _factory(layers=TOY_LAYERS, pes=(1,), modes=MODES, **extra):
        workload = make_workload(tmp_path, list(layers))
        settings = {
            "workloads": [str(workload)],
            "mesh": {"size": 4, "pes": list(pes)},
            "memory_bits": 64,
            "rounds_cap": 2,
            "volume_divisor": 1,
            "modes": list(modes),
            "output": str(tmp_path / "out"),
            "jobs": 1,
        }
        settings.update(extra)
        return build_config(settings)

    return _factory


@pytest.fixture
def runner():
    return ExperimentRunner(colors=Colors())


def by_run(records):
    return {(r.layer, r.pes, r.mode): r for r in records}


def ratio_of(ratios, layer, baseline, variant):
    return next(r for r in ratios if (r.layer, r.baseline, r.variant) == (layer, baseline, variant))


class TestRunExperiment:
    def test_records_and_files(self, runner, sweep_config):
        config = sweep_config()
        report = runner.run_experiment(config)
        assert len(report.records) == 6
        assert report.failures == []
        assert report.modes == set(MODES)
        assert len(report.ratios) == 4
        for name in ("runs.csv", "energy.csv", "ratios.csv"):
            assert (config.output / name).is_file()
        assert ReportWriter.read_runs(config.output / "runs.csv") == report.records

    def test_projection(self, runner, sweep_config):
        records = by_run(runner.run_experiment(sweep_config()).records)
        split = records[("A", 1, "ws_ina")]
        assert (split.pe_count, split.total_rounds, split.simulated_rounds) == (2, 3, 2)
        assert split.projected_cycles == split.cycles * Fraction(3, 2)
        assert split.projected_energy == split.energy * Fraction(3, 2)
        assert split.energy_report.total == split.projected_energy
        assert records[("B", 1, "ws_ina")].pe_count == 1
        assert records[("A", 1, "os_gather")].pe_count == 1
        assert split.packets_injected == split.packets_delivered
        assert split.ni_eject < split.ni_inject

    def test_ratios(self, runner, sweep_config):
        ratios = runner.run_experiment(sweep_config()).ratios
        unsplit = ratio_of(ratios, "B", "ws_plain", "ws_ina")
        assert (unsplit.latency_ratio, unsplit.energy_ratio) == (1, 1)
        split = ratio_of(ratios, "A", "ws_plain", "ws_ina")
        assert split.latency_ratio > 1
        assert split.energy_ratio > 1

    def test_failed_run_is_recorded(self, runner, sweep_config):
        config = sweep_config(layers=[("WIDE", 1, 20, 1, 1)])
        report = runner.run_experiment(config)
        failed = {r.mode: r.error for r in report.failures}
        assert set(failed) == {"ws_ina", "ws_plain"}
        assert "needs 10 PEs" in failed["ws_ina"]
        assert by_run(report.records)[("WIDE", 1, "os_gather")].ok
        assert report.ratios == []

    def test_parallel_matches_serial(self, sweep_config):
        pools = []

        def fake_pool(jobs):
            pools.append(jobs)
            return nullcontext(SimpleNamespace(map=map))

        serial = ExperimentRunner().run_experiment(sweep_config())
        parallel = ExperimentRunner(pool_factory=fake_pool).run_experiment(sweep_config(jobs=3))
        assert pools == [3]
        assert parallel.records == serial.records

    def test_event_logs(self, runner, sweep_config):
        config = sweep_config(layers=[("B", 1, 2, 4, 2)], modes=["ws_ina"], event_log=True)
        runner.run_experiment(config)
        log = config.output / "events" / "toy_B_N4_E1_ws_ina.log"
        assert "INJECT" in log.read_text()


class TestCompare:
    def test_ws_plain_against_ina(self, runner, sweep_config):
        config = sweep_config()
        report = runner.run_experiment(config)
        summary = runner.compare(report, "ws_plain", "ws_ina")
        assert summary.passed
        assert len(summary.ratios) == 2
        rows = ReportWriter.read_csv(config.output / "summary.csv")
        assert [row["scope"] for row in rows].count("check") == len(summary.checks) == 2

    def test_from_run_directory(self, runner, sweep_config):
        config = sweep_config()
        report = runner.run_experiment(config)
        summary = runner.compare(config.output, "os_gather", "ws_ina")
        assert summary.ratios == [r for r in report.ratios if r.baseline == "os_gather"]

    def test_missing_mode(self, runner, sweep_config):
        config = sweep_config(modes=["ws_ina", "ws_plain"])
        report = runner.run_experiment(config)
        with pytest.raises(MissingModeError, match="os_gather"):
            runner.compare(report, "os_gather", "ws_ina")


class TestSummary:
    def ratios(self, latencies):
        return [
            RatioRecord("alexnet", layer, 8, pes, "ws_plain", "ws_ina", Fraction(lat), Fraction(energy))
            for layer, pes, lat, energy in latencies
        ]

    def test_means(self):
        summary = Summary("ws_plain", "ws_ina", self.ratios([("L1", 1, 1, 2), ("L2", 1, 2, 4), ("L1", 2, 3, 1)]))
        means = summary.workload_means()
        assert means[("alexnet", 1)] == (Fraction(3, 2), 3)
        assert means[("alexnet", None)] == (2, Fraction(7, 3))
        assert summary.grand_mean() == (2, Fraction(7, 3))
        assert [key for key, _ in summary.sorted_means()] == [("alexnet", 1), ("alexnet", 2), ("alexnet", None)]

    def test_checks_on_split_filters(self):
        summary = Summary("ws_plain", "ws_ina", self.ratios([("L1", 1, 1, 1), ("L2", 1, 1, 2)]))
        checks = {c.name: c.passed for c in ordering_checks(summary, {("alexnet", "L2"): 2})}
        assert checks == {
            "latency improvement >= 1, > 1 for split filters": False,
            "energy improvement > 1 for split filters": True,
        }

    def test_trend_checks_per_pes(self):
        summary = Summary("ws_plain", "ws_ina", self.ratios([("L1", 1, 2, 3), ("L1", 8, 3, 2)]))
        checks = {c.name: c.passed for c in ordering_checks(summary, {("alexnet", "L1"): 2})}
        assert checks["alexnet: energy E=1 >= E=8"]
        assert checks["alexnet: latency E=8 >= E=1"]

    @pytest.mark.parametrize(("vgg_latency", "latency_passed"), [(3, True), (2, True), (1, False)])
    def test_vgg16_against_alexnet(self, vgg_latency, latency_passed):
        ratios = self.ratios([("CONV2", 1, 2, 3)]) + [
            RatioRecord("vgg16", "CONV9", 8, 1, "ws_plain", "ws_ina", Fraction(vgg_latency), Fraction(4))
        ]
        checks = {c.name: c.passed for c in ordering_checks(Summary("ws_plain", "ws_ina", ratios), {})}
        assert checks["vgg16 mean latency >= alexnet"] is latency_passed
        assert checks["vgg16 mean energy >= alexnet"]

    def test_other_pairs_have_no_checks(self):
        summary = Summary("os_gather", "ws_plain", [])
        assert ordering_checks(summary, {}) == []
        assert summary.grand_mean() is None
        assert summary.passed

    def test_pair_ratios_skip_failures(self, runner, sweep_config):
        records = runner.run_experiment(sweep_config(modes=["ws_ina", "ws_plain"])).records
        broken = [replace(r, error="x") if (r.layer, r.mode) == ("A", "ws_plain") else r for r in records]
        assert [r.layer for r in pair_ratios(broken, "ws_plain", "ws_ina")] == ["B"]


class TestBundledWorkload:
    def test_alexnet_trends(self, runner, tmp_path):
        config = build_config(
            {
                "workloads": ["alexnet"],
                "mesh": {"size": 8, "pes": [1, 8]},
                "rounds_cap": 16,
                "volume_divisor": 16,
                "output": str(tmp_path / "out"),
                "jobs": 0,
            }
        )
        report = runner.run_experiment(config)
        assert report.failures == []
        for baseline in ("ws_plain", "os_gather"):
            summary = runner.compare(report, baseline, "ws_ina")
            assert len(summary.ratios) == 10
            assert summary.checks
            assert [check.name for check in summary.checks if not check.passed] == []


class TestTablesAndTraces:
    def test_emit_tables(self, runner, tmp_path):
        config = build_config({"workloads": ["alexnet"], "output": str(tmp_path)})
        tables = runner.emit_tables(config)
        assert tables["alexnet"].header()[-2:] == ["INA#_N8", "INA#_N16"]
        rows = ReportWriter.read_csv(tmp_path / "tables" / "alexnet.csv")
        assert [row["INA#_N8"] for row in rows] == ["NA", "4374", "2028", "2704", "2704"]

    def test_emit_tables_per_pes(self, runner, tmp_path):
        config = build_config({"workloads": ["alexnet"], "output": str(tmp_path), "table_meshes": [8]})
        tables = runner.emit_tables(config, pes=(1, 2), write=False)
        assert tables["alexnet"].header()[-2:] == ["INA#_N8", "INA#_N8_E2"]
        assert not (tmp_path / "tables").exists()

    def test_write_traces(self, runner, sweep_config):
        config = sweep_config(layers=[*TOY_LAYERS, ("WIDE", 1, 20, 1, 1)])
        written = runner.write_traces(config)
        assert len(written) == 7
        assert sorted(p.name for p in (config.output / "traces").iterdir()) == sorted(p.name for p in written)
        assert (config.output / "traces" / "toy_A_N4_E1_ws_ina.trace").is_file()
