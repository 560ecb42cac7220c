"""Closed-form model of in-network accumulation rounds.

Decides whether a layer's filter outgrows one PE, how many PEs share a filter, and how many accumulation rounds
the layer needs on an N x N mesh with E PEs per router.  All ceilings apply to the whole rational product and are
evaluated with :class:`fractions.Fraction`, so the results are exact integers.
"""

import math
from collections.abc import Iterable
from dataclasses import dataclass
from fractions import Fraction

from inasim.exceptions import ConfigError, UnmappableLayerError, UsageError
from inasim.layers import LayerShape

DEFAULT_PRECISION = 32
DEFAULT_MEMORY_BITS = 32768
NA = "NA"
UNMAPPABLE = "ERR:unmappable"


@dataclass(frozen=True)
class MeshShape:
    """Mesh side length and PEs per router."""

    size: int
    pes: int = 1

    def __post_init__(self):
        if self.size < 2:
            raise ConfigError(f"mesh size must be at least 2, got {self.size}")
        if self.pes < 1:
            raise ConfigError(f"PEs per router must be at least 1, got {self.pes}")


@dataclass(frozen=True)
class InaPlan:
    """Analytic result for one layer on one mesh.

    ``rounds`` is ``None`` (rendered as NA) when the layer fits in one PE and rounds were not forced.
    """

    layer: str
    needs_ina: bool
    pe_count: int
    rounds: int | None
    forced: bool = False

    @property
    def rounds_text(self) -> str:
        return NA if self.rounds is None else str(self.rounds)


def _check_memory(q: int, mem: int) -> None:
    if q < 1:
        raise ConfigError(f"precision must be a positive number of bits, got {q}")
    if mem < q:
        raise ConfigError(f"PE memory ({mem} bits) cannot hold one {q}-bit value")


def requires_ina(layer: LayerShape, q: int = DEFAULT_PRECISION, mem: int = DEFAULT_MEMORY_BITS) -> bool:
    """Return True when one filter's weights exceed a single PE's memory."""
    _check_memory(q, mem)
    return layer.weight_elements * q > mem


def pe_count(layer: LayerShape, q: int = DEFAULT_PRECISION, mem: int = DEFAULT_MEMORY_BITS) -> int:
    """Number of PEs sharing one filter, ⌈C·R·R·q / M⌉."""
    _check_memory(q, mem)
    return -(-(layer.weight_elements * q) // mem)


def rounds_for(layer: LayerShape, mesh: MeshShape, parts: int) -> int:
    """⌈ F/(N·E) · O² / ⌊N/P#⌋ ⌉ with the ceiling over the whole product."""
    if parts > mesh.size:
        raise UnmappableLayerError(layer.name, parts, mesh.size)
    chains_per_column = mesh.size // parts
    product = Fraction(layer.filters, mesh.size * mesh.pes) * Fraction(layer.output_pixels, chains_per_column)
    return math.ceil(product)


def ina_rounds_multi_pe(
    layer: LayerShape,
    mesh: MeshShape,
    q: int = DEFAULT_PRECISION,
    mem: int = DEFAULT_MEMORY_BITS,
    force_rounds: bool = False,
) -> InaPlan:
    """Accumulation rounds for a mesh with any number of PEs per router.

    Args:
        layer: Convolution layer
        mesh: Mesh side length and PEs per router
        q: Bits per value
        mem: PE memory in bits
        force_rounds: Compute rounds even when the layer fits in one PE

    Returns:
        The layer's plan; rounds is None when no accumulation is needed and rounds were not forced

    Raises:
        UnmappableLayerError: If the filter needs more PEs than a mesh column holds
    """
    needs_ina = requires_ina(layer, q, mem)
    parts = pe_count(layer, q, mem)
    if parts > mesh.size:
        raise UnmappableLayerError(layer.name, parts, mesh.size)
    rounds = rounds_for(layer, mesh, parts) if needs_ina or force_rounds else None
    return InaPlan(layer.name, needs_ina, parts, rounds, forced=force_rounds and not needs_ina)


def ina_rounds(
    layer: LayerShape,
    mesh: MeshShape,
    q: int = DEFAULT_PRECISION,
    mem: int = DEFAULT_MEMORY_BITS,
    force_rounds: bool = False,
) -> InaPlan:
    """Accumulation rounds on a mesh with one PE per router.

    Raises:
        UsageError: If the mesh has more than one PE per router
        UnmappableLayerError: If the filter needs more PEs than a mesh column holds
    """
    if mesh.pes != 1:
        raise UsageError(f"ina_rounds assumes one PE per router, got {mesh.pes}; use ina_rounds_multi_pe")
    return ina_rounds_multi_pe(layer, mesh, q, mem, force_rounds)


# ============================================================================
# Tables
# ============================================================================


@dataclass(frozen=True)
class TableRow:
    """One layer of an analytic table; ``plans`` holds None where the layer is unmappable."""

    layer: LayerShape
    pe_count: int
    plans: tuple[InaPlan | None, ...]

    @property
    def cells(self) -> tuple[str, ...]:
        return tuple(UNMAPPABLE if plan is None else plan.rounds_text for plan in self.plans)


@dataclass(frozen=True)
class AnalyticTable:
    meshes: tuple[MeshShape, ...]
    rows: tuple[TableRow, ...]
    notes: tuple[str, ...] = ()

    def header(self) -> list[str]:
        columns = ["layer", "R", "C", "F", "O", "P#"]
        for mesh in self.meshes:
            columns.append(f"INA#_N{mesh.size}" if mesh.pes == 1 else f"INA#_N{mesh.size}_E{mesh.pes}")
        return columns

    def records(self) -> list[list[str]]:
        records = []
        for row in self.rows:
            layer = row.layer
            fields = [layer.name, layer.kernel, layer.channels, layer.filters, layer.output, row.pe_count]
            records.append([str(field) for field in fields] + list(row.cells))
        return records


def table_report(
    layers: Iterable[LayerShape],
    meshes: Iterable[MeshShape],
    q: int = DEFAULT_PRECISION,
    mem: int = DEFAULT_MEMORY_BITS,
    force_rounds: bool = False,
) -> AnalyticTable:
    """Build the rounds table for a list of layers over several meshes.

    Unmappable layer/mesh pairs produce an error cell instead of aborting the table.  Every row printed as NA
    gets a note with the rounds it would need if accumulation were forced.
    """
    meshes = tuple(meshes)
    rows = []
    notes = []
    for layer in layers:
        plans = []
        forced_values = []
        for mesh in meshes:
            try:
                plans.append(ina_rounds_multi_pe(layer, mesh, q, mem, force_rounds))
            except UnmappableLayerError:
                plans.append(None)
                forced_values.append(f"N={mesh.size}: unmappable")
                continue
            parts = plans[-1].pe_count
            forced_values.append(f"N={mesh.size}: {rounds_for(layer, mesh, parts)}")
        row = TableRow(layer, pe_count(layer, q, mem), tuple(plans))
        rows.append(row)
        if not requires_ina(layer, q, mem):
            bits = layer.weight_elements * q
            notes.append(
                f"{layer.name}: C*R*R*q = {bits} <= M = {mem}, filter fits one PE; "
                f"forced rounds {', '.join(forced_values)}"
            )
    return AnalyticTable(meshes, tuple(rows), tuple(notes))
