"""Comma-separated report files for experiment runs.

:class:`ReportWriter` turns run records, ratios, summaries and analytic tables into text tables preceded by ``#``
metadata lines, and reads the run table back for later comparison.  Every file is written to a temporary name in
the destination directory and then renamed over the target.
"""

import csv
import io
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from inasim.analytic import AnalyticTable
from inasim.exceptions import ConfigError
from inasim.power import EnergyReport, RunMetadata
from inasim.stats import EVENT_CLASSES

RUN_COLUMNS = (
    "workload",
    "layer",
    "mesh",
    "pes",
    "mode",
    "pe_count",
    "total_rounds",
    "simulated_rounds",
    "cycles",
    "projected_cycles",
    "packets_injected",
    "packets_delivered",
    "flits",
    "ni_inject",
    "ni_eject",
    "mean_latency",
    "max_latency",
    "energy",
    "projected_energy",
    "coefficients",
    "seed",
    "error",
)
RATIO_COLUMNS = ("workload", "layer", "mesh", "pes", "baseline", "variant", "latency_ratio", "energy_ratio")
SUMMARY_COLUMNS = ("scope", "workload", "layer", "pes", "latency_ratio", "energy_ratio", "status")


def format_ratio(value: Fraction | None) -> str:
    return "" if value is None else f"{float(value):.6f}"


@dataclass(frozen=True)
class RunRecord:
    """Measured outcome of one (workload, layer, E, mode) simulation; ``error`` is set when it failed."""

    workload: str
    layer: str
    mesh: int
    pes: int
    mode: str
    pe_count: int = 0
    total_rounds: int = 0
    simulated_rounds: int = 0
    cycles: int = 0
    projected_cycles: Fraction = Fraction(0)
    packets_injected: int = 0
    packets_delivered: int = 0
    flits: int = 0
    ni_inject: int = 0
    ni_eject: int = 0
    mean_latency: Fraction = Fraction(0)
    max_latency: int = 0
    energy: Fraction = Fraction(0)
    projected_energy: Fraction = Fraction(0)
    coefficients: str = "default"
    seed: int = 0
    error: str = ""
    energy_report: EnergyReport | None = field(default=None, compare=False)

    @property
    def ok(self) -> bool:
        return not self.error

    @property
    def run_id(self) -> str:
        return run_id(self.workload, self.layer, self.mesh, self.pes, self.mode)

    @property
    def metadata(self) -> RunMetadata:
        return RunMetadata(self.workload, self.layer, self.mesh, self.pes, self.mode, self.coefficients, self.seed)

    def row(self) -> list[str]:
        return [str(getattr(self, column)) for column in RUN_COLUMNS]


@dataclass(frozen=True)
class RatioRecord:
    workload: str
    layer: str
    mesh: int
    pes: int
    baseline: str
    variant: str
    latency_ratio: Fraction
    energy_ratio: Fraction

    def row(self) -> list[str]:
        return [
            self.workload,
            self.layer,
            str(self.mesh),
            str(self.pes),
            self.baseline,
            self.variant,
            format_ratio(self.latency_ratio),
            format_ratio(self.energy_ratio),
        ]


def run_id(workload: str, layer: str, mesh: int, pes: int, mode: str) -> str:
    return f"{workload}_{layer}_N{mesh}_E{pes}_{mode}"


class ReportWriter:
    """Builds and writes the report files of a run directory."""

    @staticmethod
    def metadata_lines(**metadata: Any) -> list[str]:
        from inasim import __version__

        lines = [f"# inasim {__version__}"]
        lines.extend(f"# {key}={value}" for key, value in metadata.items())
        return lines

    @staticmethod
    def write_csv(
        path: Path,
        header: Sequence[str],
        rows: Iterable[Sequence[str]],
        metadata: Sequence[str] = (),
    ) -> Path:
        """Write a comma-separated table to *path* via a temporary file and rename."""
        buffer = io.StringIO()
        for line in metadata:
            buffer.write(line + "\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        path.parent.mkdir(parents=True, exist_ok=True)
        temporary = path.with_name(f".{path.name}.tmp")
        temporary.write_text(buffer.getvalue())
        temporary.replace(path)
        logging.info(f"Report written to {path}")
        return path

    @staticmethod
    def read_csv(path: Path) -> list[dict[str, str]]:
        if not path.is_file():
            raise ConfigError(f"report file not found: {path}")
        lines = [line for line in path.read_text().splitlines() if line and not line.startswith("#")]
        return list(csv.DictReader(lines))

    # ------------------------------------------------------------------------
    # Run directory files
    # ------------------------------------------------------------------------

    @staticmethod
    def write_runs(path: Path, records: Iterable[RunRecord], metadata: Sequence[str] = ()) -> Path:
        return ReportWriter.write_csv(path, RUN_COLUMNS, (record.row() for record in records), metadata)

    @staticmethod
    def read_runs(path: Path) -> list[RunRecord]:
        """Rebuild run records from a ``runs.csv`` file.

        Raises:
            ConfigError: If the file is missing or its columns differ from the current schema
        """
        records = []
        for number, row in enumerate(ReportWriter.read_csv(path), start=1):
            if tuple(row) != RUN_COLUMNS:
                raise ConfigError(f"{path}: unexpected columns {','.join(row)}")
            try:
                records.append(
                    RunRecord(
                        workload=row["workload"],
                        layer=row["layer"],
                        mesh=int(row["mesh"]),
                        pes=int(row["pes"]),
                        mode=row["mode"],
                        pe_count=int(row["pe_count"]),
                        total_rounds=int(row["total_rounds"]),
                        simulated_rounds=int(row["simulated_rounds"]),
                        cycles=int(row["cycles"]),
                        projected_cycles=Fraction(row["projected_cycles"]),
                        packets_injected=int(row["packets_injected"]),
                        packets_delivered=int(row["packets_delivered"]),
                        flits=int(row["flits"]),
                        ni_inject=int(row["ni_inject"]),
                        ni_eject=int(row["ni_eject"]),
                        mean_latency=Fraction(row["mean_latency"]),
                        max_latency=int(row["max_latency"]),
                        energy=Fraction(row["energy"]),
                        projected_energy=Fraction(row["projected_energy"]),
                        coefficients=row["coefficients"],
                        seed=int(row["seed"]),
                        error=row["error"],
                    )
                )
            except ValueError as e:
                raise ConfigError(f"{path}: malformed run record {number}: {e}") from e
        return records

    @staticmethod
    def write_energy(path: Path, records: Iterable[RunRecord], metadata: Sequence[str] = ()) -> Path:
        """Per-event-class energy of every successful run, projected to the full layer."""
        header = ("run", *EVENT_CLASSES, "total")
        rows = []
        for record in records:
            report = record.energy_report
            if report is None:
                continue
            rows.append([record.run_id, *(str(report.event_totals[e]) for e in EVENT_CLASSES), str(report.total)])
        return ReportWriter.write_csv(path, header, rows, metadata)

    @staticmethod
    def write_ratios(path: Path, ratios: Iterable[RatioRecord], metadata: Sequence[str] = ()) -> Path:
        return ReportWriter.write_csv(path, RATIO_COLUMNS, (ratio.row() for ratio in ratios), metadata)

    @staticmethod
    def write_summary(path: Path, rows: Iterable[Sequence[str]], metadata: Sequence[str] = ()) -> Path:
        return ReportWriter.write_csv(path, SUMMARY_COLUMNS, rows, metadata)

    @staticmethod
    def write_table(path: Path, table: AnalyticTable, metadata: Sequence[str] = ()) -> Path:
        notes = [f"# note: {note}" for note in table.notes]
        return ReportWriter.write_csv(path, table.header(), table.records(), [*metadata, *notes])
