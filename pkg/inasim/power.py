"""Event-based energy accounting.

Energy is the dot product of integer event counts and per-event coefficients.  Coefficients are stored as
:class:`~fractions.Fraction` parsed from their decimal text, so totals and ratios are exact.
"""

from collections.abc import Mapping
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import Any

from inasim.exceptions import CliError, ConfigError, MetadataMismatchError
from inasim.stats import EVENT_CLASSES, EventCounters, SimStats


def _as_fraction(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError(f"not a number: {value!r}")
    return Fraction(str(value))


@dataclass(frozen=True)
class EnergyCoefficients:
    """Energy per event in arbitrary units; ``name`` identifies the set in every report."""

    name: str = "default"
    buffer_write: Fraction = Fraction(1)
    buffer_read: Fraction = Fraction(1)
    crossbar_traversal: Fraction = Fraction(3, 2)
    arbitration: Fraction = Fraction(1, 5)
    link_traversal: Fraction = Fraction(2)
    ni_inject: Fraction = Fraction(2)
    ni_eject: Fraction = Fraction(2)
    ina_add: Fraction = Fraction(4, 5)
    operand_latch: Fraction = Fraction(0)
    gather_append: Fraction = Fraction(0)

    def __post_init__(self):
        for event in EVENT_CLASSES:
            try:
                value = _as_fraction(getattr(self, event))
            except (TypeError, ValueError) as e:
                raise ConfigError(f"energy coefficient {event}: {e}") from e
            if value < 0:
                raise ConfigError(f"energy coefficient {event} must be non-negative, got {value}")
            object.__setattr__(self, event, value)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "EnergyCoefficients":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown energy coefficient(s): {', '.join(unknown)}")
        return cls(**dict(data))

    def as_dict(self) -> dict[str, Fraction]:
        return {event: getattr(self, event) for event in EVENT_CLASSES}

    def scaled(self, factor: Fraction | int) -> "EnergyCoefficients":
        factor = _as_fraction(factor)
        return replace(self, **{event: getattr(self, event) * factor for event in EVENT_CLASSES})

    def require_adder_cost(self) -> None:
        """Accumulating runs must charge the adder."""
        if self.ina_add <= 0:
            raise ConfigError("energy coefficient ina_add must be positive when in-network accumulation is enabled")


@dataclass(frozen=True)
class RunMetadata:
    workload: str = ""
    layer: str = ""
    mesh_size: int = 0
    pes: int = 0
    mode: str = ""
    coefficient_set: str = "default"
    seed: int = 0

    def comparable_with(self, other: "RunMetadata") -> bool:
        return (self.workload, self.layer, self.mesh_size, self.pes) == (
            other.workload,
            other.layer,
            other.mesh_size,
            other.pes,
        )


@dataclass(frozen=True)
class EnergyReport:
    metadata: RunMetadata
    event_totals: dict[str, Fraction] = field(default_factory=dict)
    packet_class_totals: dict[str, Fraction] = field(default_factory=dict)

    @property
    def total(self) -> Fraction:
        return sum(self.event_totals.values(), Fraction(0))

    def scaled(self, factor: Fraction | int) -> "EnergyReport":
        factor = _as_fraction(factor)
        return EnergyReport(
            self.metadata,
            {event: value * factor for event, value in self.event_totals.items()},
            {cls: value * factor for cls, value in self.packet_class_totals.items()},
        )


def _energy(counters: EventCounters, coeffs: EnergyCoefficients) -> dict[str, Fraction]:
    return {event: count * getattr(coeffs, event) for event, count in counters.as_dict().items()}


def tally(stats: SimStats, coeffs: EnergyCoefficients, metadata: RunMetadata | None = None) -> EnergyReport:
    """Multiply a run's event counts by the coefficients.

    Args:
        stats: Counters of a completed run
        coeffs: Per-event energies
        metadata: Run identity carried into the report

    Returns:
        Totals per event class and per packet class
    """
    metadata = metadata or RunMetadata(coefficient_set=coeffs.name)
    per_class = {
        cls: sum(_energy(counters, coeffs).values(), Fraction(0))
        for cls, counters in sorted(stats.class_events.items())
    }
    return EnergyReport(metadata, _energy(stats.totals(), coeffs), per_class)


def improvement(baseline: EnergyReport | Fraction | int, variant: EnergyReport | Fraction | int) -> Fraction:
    """Ratio baseline / variant; values above 1 mean the variant is better.

    Raises:
        MetadataMismatchError: If two energy reports describe different layers or meshes
    """
    if isinstance(baseline, EnergyReport) and isinstance(variant, EnergyReport):
        if not baseline.metadata.comparable_with(variant.metadata):
            raise MetadataMismatchError(f"cannot compare {baseline.metadata} with {variant.metadata}")
    base = baseline.total if isinstance(baseline, EnergyReport) else _as_fraction(baseline)
    var = variant.total if isinstance(variant, EnergyReport) else _as_fraction(variant)
    if var == 0:
        if base == 0:
            return Fraction(1)
        raise CliError("improvement ratio undefined: variant is zero")
    return base / var
