"""Experiment orchestration for inasim.

The ``ExperimentRunner`` class coordinates a sweep: it loads the workloads named by an
:class:`~inasim.config.ExperimentConfig`, generates a schedule for every (layer, E, mode), simulates it through
:mod:`inasim.driver`, tallies energy with :mod:`inasim.power` and writes the reports through
:class:`~inasim.report.ReportWriter`.  It also renders the analytic tables and compares two modes of a finished
sweep.
"""

import logging
from collections import defaultdict
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from inasim.analytic import AnalyticTable, MeshShape, table_report
from inasim.config import ExperimentConfig, MeshConfig
from inasim.dataflow import (
    OS_GATHER,
    WS_INA,
    WS_PLAIN,
    Schedule,
    gen_os_trace,
    gen_ws_trace,
    split_weights,
    trace_volume,
)
from inasim.driver import expected_outputs, simulate
from inasim.exceptions import CliError, MissingModeError, UsageError
from inasim.formatting import Colors, display_status, indent, print_table
from inasim.layers import LayerShape, load_workload
from inasim.power import EnergyCoefficients, RunMetadata, improvement, tally
from inasim.report import RatioRecord, ReportWriter, RunRecord, format_ratio, run_id
from inasim.trace_io import save_trace

RATIO_PAIRS = ((WS_PLAIN, WS_INA), (OS_GATHER, WS_INA))


@dataclass(frozen=True)
class RunTask:
    """Everything one simulation needs; picklable so runs can go to worker processes."""

    workload: str
    layer: LayerShape
    mesh: MeshConfig
    mode: str
    precision: int
    memory_bits: int
    rounds_cap: int | None
    seed: int
    volume_divisor: int
    coefficients: EnergyCoefficients
    event_log: Path | None = None

    @property
    def run_id(self) -> str:
        return run_id(self.workload, self.layer.name, self.mesh.size, self.mesh.pes, self.mode)


def build_schedule(
    layer: LayerShape,
    mesh: MeshConfig,
    mode: str,
    precision: int,
    memory_bits: int,
    rounds_cap: int | None,
    seed: int,
    volume_divisor: int,
) -> Schedule:
    if mode in (WS_INA, WS_PLAIN):
        return gen_ws_trace(
            layer, mesh, mode == WS_INA, rounds_cap, precision, memory_bits, seed, volume_divisor=volume_divisor
        )
    if mode == OS_GATHER:
        return gen_os_trace(layer, mesh, rounds_cap, seed=seed, volume_divisor=volume_divisor)
    raise UsageError(f"unknown mode {mode}")


def simulate_run(task: RunTask) -> RunRecord:
    """Generate, simulate and tally one run; hard errors become a record with ``error`` set."""
    identity = {
        "workload": task.workload,
        "layer": task.layer.name,
        "mesh": task.mesh.size,
        "pes": task.mesh.pes,
        "mode": task.mode,
        "coefficients": task.coefficients.name,
        "seed": task.seed,
    }
    try:
        schedule = build_schedule(
            task.layer,
            task.mesh,
            task.mode,
            task.precision,
            task.memory_bits,
            task.rounds_cap,
            task.seed,
            task.volume_divisor,
        )
        if task.event_log is not None:
            task.event_log.parent.mkdir(parents=True, exist_ok=True)
        with task.event_log.open("w") if task.event_log is not None else nullcontext() as log:
            result = simulate(schedule, task.mesh, log)
        if result.gathered != expected_outputs(schedule):
            raise CliError("gathered outputs differ from the reference convolution")
    except CliError as e:
        logging.warning(f"{task.run_id} failed: {e}")
        return RunRecord(**identity, error=str(e))

    stats = result.stats
    factor = schedule.projection
    metadata = RunMetadata(
        task.workload, task.layer.name, task.mesh.size, task.mesh.pes, task.mode, task.coefficients.name, task.seed
    )
    energy = tally(stats, task.coefficients, metadata)
    latency = stats.latency_summary()
    totals = stats.totals()
    logging.info(
        f"{task.workload} {task.layer.name} E={task.mesh.pes} {task.mode}: {stats.total_cycles} cycles, "
        f"{stats.packets_delivered} packets"
    )
    return RunRecord(
        **identity,
        pe_count=_pe_count(schedule, task.precision, task.memory_bits),
        total_rounds=schedule.total_rounds,
        simulated_rounds=schedule.simulated_rounds,
        cycles=stats.total_cycles,
        projected_cycles=stats.total_cycles * factor,
        packets_injected=stats.packets_injected,
        packets_delivered=stats.packets_delivered,
        flits=stats.flits_created,
        ni_inject=totals.ni_inject,
        ni_eject=totals.ni_eject,
        mean_latency=latency.mean,
        max_latency=latency.maximum,
        energy=energy.total,
        projected_energy=energy.total * factor,
        energy_report=energy.scaled(factor),
    )


def _pe_count(schedule: Schedule, precision: int, memory_bits: int) -> int:
    """Parts per filter of a weight-stationary schedule; 1 for output-stationary ones."""
    if schedule.mode == OS_GATHER or schedule.layer is None:
        return 1
    return split_weights(schedule.layer, precision, memory_bits, schedule.mesh).pe_count


@dataclass
class RunReport:
    """All records of a sweep and the ratios between paired modes."""

    records: list[RunRecord] = field(default_factory=list)
    ratios: list[RatioRecord] = field(default_factory=list)
    output: Path | None = None

    @property
    def failures(self) -> list[RunRecord]:
        return [record for record in self.records if not record.ok]

    @property
    def modes(self) -> set[str]:
        return {record.mode for record in self.records}


def pair_ratios(records: Iterable[RunRecord], baseline: str, variant: str) -> list[RatioRecord]:
    """Latency and energy improvement of *variant* over *baseline* for every run pair sharing layer, E and seed."""
    index = {(r.workload, r.layer, r.mesh, r.pes, r.seed, r.mode): r for r in records if r.ok}
    ratios = []
    for key, base in index.items():
        if key[-1] != baseline:
            continue
        other = index.get((*key[:-1], variant))
        if other is None:
            continue
        ratios.append(
            RatioRecord(
                base.workload,
                base.layer,
                base.mesh,
                base.pes,
                baseline,
                variant,
                improvement(base.projected_cycles, other.projected_cycles),
                improvement(base.projected_energy, other.projected_energy),
            )
        )
    return ratios


# ============================================================================
# Comparison summary
# ============================================================================


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


def _mean(values: list[Fraction]) -> Fraction:
    return sum(values, Fraction(0)) / len(values)


@dataclass
class Summary:
    """Per-layer ratios, their per-workload and grand means, and the ordering checks."""

    baseline: str
    variant: str
    ratios: list[RatioRecord]
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def workload_means(self) -> dict[tuple[str, int | None], tuple[Fraction, Fraction]]:
        """Mean (latency, energy) ratio per (workload, E) and per workload over all E (E = None)."""
        groups: dict[tuple[str, int | None], list[RatioRecord]] = defaultdict(list)
        for ratio in self.ratios:
            groups[(ratio.workload, ratio.pes)].append(ratio)
            groups[(ratio.workload, None)].append(ratio)
        return {
            key: (_mean([r.latency_ratio for r in rows]), _mean([r.energy_ratio for r in rows]))
            for key, rows in groups.items()
        }

    def sorted_means(self) -> list[tuple[tuple[str, int | None], tuple[Fraction, Fraction]]]:
        """Workload means ordered by workload, then E, with the all-E mean last."""
        return sorted(self.workload_means().items(), key=lambda item: (item[0][0], item[0][1] is None, item[0][1] or 0))

    def grand_mean(self) -> tuple[Fraction, Fraction] | None:
        if not self.ratios:
            return None
        return _mean([r.latency_ratio for r in self.ratios]), _mean([r.energy_ratio for r in self.ratios])

    def rows(self) -> list[list[str]]:
        rows = [
            ["layer", r.workload, r.layer, str(r.pes), format_ratio(r.latency_ratio), format_ratio(r.energy_ratio), ""]
            for r in self.ratios
        ]
        for (workload, pes), (latency, energy) in self.sorted_means():
            label = "*" if pes is None else str(pes)
            rows.append(["workload", workload, "*", label, format_ratio(latency), format_ratio(energy), ""])
        grand = self.grand_mean()
        if grand is not None:
            rows.append(["all", "*", "*", "*", format_ratio(grand[0]), format_ratio(grand[1]), ""])
        for check in self.checks:
            rows.append(["check", "*", check.name, "*", "", "", "pass" if check.passed else "fail"])
        return rows


def _per_pes(means, workload: str) -> list[tuple[int, Fraction, Fraction]]:
    return sorted((pes, lat, en) for (w, pes), (lat, en) in means.items() if w == workload and pes is not None)


def ordering_checks(summary: Summary, pe_counts: dict[tuple[str, str], int]) -> list[Check]:
    """Trend checks for the two comparisons the sweep is built around; other pairs get none."""
    checks: list[Check] = []
    means = summary.workload_means()
    workloads = sorted({r.workload for r in summary.ratios})
    chained = [r for r in summary.ratios if pe_counts.get((r.workload, r.layer), 1) >= 2]

    if (summary.baseline, summary.variant) == (WS_PLAIN, WS_INA):
        latency_ok = all(r.latency_ratio >= 1 for r in summary.ratios) and all(r.latency_ratio > 1 for r in chained)
        checks.append(Check("latency improvement >= 1, > 1 for split filters", latency_ok))
        checks.append(Check("energy improvement > 1 for split filters", all(r.energy_ratio > 1 for r in chained)))
        for workload in workloads:
            per_pes = _per_pes(means, workload)
            if len(per_pes) < 2:
                continue
            low, high = per_pes[0], per_pes[-1]
            checks.append(Check(f"{workload}: energy E={low[0]} >= E={high[0]}", low[2] >= high[2]))
            checks.append(Check(f"{workload}: latency E={high[0]} >= E={low[0]}", high[1] >= low[1]))
        if ("vgg16", None) in means and ("alexnet", None) in means:
            vgg, alex = means[("vgg16", None)], means[("alexnet", None)]
            checks.append(Check("vgg16 mean latency >= alexnet", vgg[0] >= alex[0]))
            checks.append(Check("vgg16 mean energy >= alexnet", vgg[1] >= alex[1]))
    elif (summary.baseline, summary.variant) == (OS_GATHER, WS_INA):
        checks.append(Check("energy improvement > 1 on every layer", all(r.energy_ratio > 1 for r in summary.ratios)))
        for workload in workloads:
            latencies = [lat for _, lat, _ in _per_pes(means, workload)]
            monotone = all(a >= b for a, b in zip(latencies, latencies[1:], strict=False))
            checks.append(Check(f"{workload}: latency improvement non-increasing in E", monotone))
    return checks


# ============================================================================
# Runner
# ============================================================================


class ExperimentRunner:
    """Thin orchestrator for simulation sweeps.

    Args:
        colors: Terminal colour helper (default: auto-detect TTY).
        pool_factory: Callable taking a worker count and returning an executor context manager with ``map``
            (default: :class:`concurrent.futures.ProcessPoolExecutor`).
    """

    def __init__(self, colors: Colors | None = None, pool_factory: Callable | None = None):
        self.colors = colors or Colors()
        self.pool_factory = pool_factory or (lambda jobs: ProcessPoolExecutor(max_workers=jobs))

    @staticmethod
    def metadata(config: ExperimentConfig) -> list[str]:
        return ReportWriter.metadata_lines(
            coefficients=config.coefficients.name,
            mesh=config.mesh.size,
            seed=config.seed,
            rounds_cap=config.rounds_cap,
            volume_divisor=config.volume_divisor,
        )

    def tasks(self, config: ExperimentConfig) -> list[RunTask]:
        tasks = []
        for workload_name in config.workloads:
            workload = load_workload(workload_name)
            for layer in workload.layers:
                for pes in config.pes:
                    for mode in config.modes:
                        mesh = config.mesh.with_pes(pes, ina_enabled=mode == WS_INA)
                        rid = run_id(workload.name, layer.name, mesh.size, pes, mode)
                        log = config.output / "events" / f"{rid}.log" if config.event_log else None
                        tasks.append(
                            RunTask(
                                workload.name,
                                layer,
                                mesh,
                                mode,
                                config.precision,
                                config.memory_bits,
                                config.rounds_cap,
                                config.seed,
                                config.volume_divisor,
                                config.coefficients,
                                log,
                            )
                        )
        return tasks

    def run_experiment(self, config: ExperimentConfig) -> RunReport:
        """Simulate every (workload layer, E, mode) of *config* and write the run directory.

        Returns:
            The records of all runs, failed ones included, and the paired ratios
        """
        print(f"{self.colors.BLUE}***** inasim sweep *****{self.colors.RESET}")
        tasks = self.tasks(config)
        print(f"Runs: {len(tasks)}, output: {config.output}")
        workers = config.workers
        if workers > 1 and len(tasks) > 1:
            logging.info(f"Running {len(tasks)} simulations on {workers} workers")
            with self.pool_factory(workers) as pool:
                records = list(pool.map(simulate_run, tasks))
        else:
            records = [simulate_run(task) for task in tasks]

        for record in records:
            display_status(record.run_id, record.ok, indent_level=1, detail=record.error)

        ratios = [ratio for pair in RATIO_PAIRS for ratio in pair_ratios(records, *pair)]
        report = RunReport(records, ratios, config.output)
        metadata = self.metadata(config)
        ReportWriter.write_runs(config.output / "runs.csv", records, metadata)
        ReportWriter.write_energy(config.output / "energy.csv", records, metadata)
        ReportWriter.write_ratios(config.output / "ratios.csv", ratios, metadata)

        print("Sweep Summary:")
        print(f"{indent(1)}Runs              : {len(records):-5}")
        print(f"{indent(1)}Failed runs       : {len(report.failures):-5}")
        print(f"{indent(1)}Ratio rows        : {len(ratios):-5}")
        return report

    def emit_tables(
        self, config: ExperimentConfig, pes: Iterable[int] = (1,), write: bool = True
    ) -> dict[str, AnalyticTable]:
        """Render the rounds table of every configured workload, printing it and writing ``tables/<name>.csv``."""
        meshes = [MeshShape(size, e) for size in config.table_meshes for e in pes]
        tables = {}
        for workload_name in config.workloads:
            workload = load_workload(workload_name)
            table = table_report(
                workload.layers, meshes, config.precision, config.memory_bits, force_rounds=config.force_rounds
            )
            tables[workload.name] = table
            print(f"{self.colors.BLUE}***** {workload.name} *****{self.colors.RESET}")
            print_table(table.header(), table.records())
            for note in table.notes:
                print(f"{indent(1)}note: {note}")
            if write:
                metadata = ReportWriter.metadata_lines(
                    precision=config.precision, memory_bits=config.memory_bits, force_rounds=config.force_rounds
                )
                ReportWriter.write_table(config.output / "tables" / f"{workload.name}.csv", table, metadata)
        return tables

    def compare(
        self, report: RunReport | Path, baseline: str, variant: str, output: Path | None = None
    ) -> Summary:
        """Summarize the improvement of *variant* over *baseline* in a finished sweep.

        Args:
            report: Sweep result or the run directory it was written to
            baseline: Mode in the numerator of every ratio
            variant: Mode in the denominator
            output: Where to write ``summary.csv`` (default: the report's directory)

        Raises:
            MissingModeError: If the report has no successful run in one of the modes
        """
        if isinstance(report, Path):
            report = RunReport(ReportWriter.read_runs(report / "runs.csv"), output=report)
        present = {record.mode for record in report.records if record.ok}
        for mode in (baseline, variant):
            if mode not in present:
                raise MissingModeError(f"report has no successful {mode} runs")

        summary = Summary(baseline, variant, pair_ratios(report.records, baseline, variant))
        pe_counts = {(r.workload, r.layer): r.pe_count for r in report.records if r.ok and r.mode != OS_GATHER}
        summary.checks = ordering_checks(summary, pe_counts)

        print(f"{self.colors.BLUE}***** {baseline} vs {variant} *****{self.colors.RESET}")
        for (workload, pes), (latency, energy) in summary.sorted_means():
            label = "all E" if pes is None else f"E={pes}"
            ratios = f"latency {format_ratio(latency)}  energy {format_ratio(energy)}"
            print(f"{indent(1)}{workload:<10} {label:<6} {ratios}")
        print("Checks:")
        for check in summary.checks:
            display_status(check.name, check.passed, indent_level=1, detail=check.detail)

        destination = output or report.output
        if destination is not None:
            ReportWriter.write_summary(
                destination / "summary.csv",
                summary.rows(),
                ReportWriter.metadata_lines(baseline=baseline, variant=variant),
            )
        return summary

    def write_traces(self, config: ExperimentConfig) -> list[Path]:
        """Write one trace file per (layer, E, mode) without simulating."""
        written = []
        for task in self.tasks(config):
            try:
                schedule = build_schedule(
                    task.layer,
                    task.mesh,
                    task.mode,
                    task.precision,
                    task.memory_bits,
                    task.rounds_cap,
                    task.seed,
                    task.volume_divisor,
                )
            except CliError as e:
                logging.warning(f"{task.run_id} skipped: {e}")
                display_status(task.run_id, False, indent_level=1, detail=str(e))
                continue
            volume = trace_volume(schedule)
            written.append(save_trace(schedule, config.output / "traces" / f"{task.run_id}.trace"))
            display_status(task.run_id, True, indent_level=1, detail=f"{volume.packets} packets")
        return written
