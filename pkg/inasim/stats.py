"""Simulation statistics: per-packet latency records and event counters."""

from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction

from inasim.packet import NodeAddress

EVENT_CLASSES = (
    "buffer_write",
    "buffer_read",
    "crossbar_traversal",
    "arbitration",
    "link_traversal",
    "ni_inject",
    "ni_eject",
    "ina_add",
    "operand_latch",
    "gather_append",
)


@dataclass
class EventCounters:
    buffer_write: int = 0
    buffer_read: int = 0
    crossbar_traversal: int = 0
    arbitration: int = 0
    link_traversal: int = 0
    ni_inject: int = 0
    ni_eject: int = 0
    ina_add: int = 0
    operand_latch: int = 0
    gather_append: int = 0

    def add(self, other: "EventCounters") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def as_dict(self) -> dict[str, int]:
        return asdict(self)

    @property
    def ni_events(self) -> int:
        return self.ni_inject + self.ni_eject


@dataclass(frozen=True)
class LatencyRecord:
    packet_id: int
    cls: str
    src: NodeAddress
    dst: NodeAddress
    flits: int
    inject_cycle: int
    deliver_cycle: int

    @property
    def latency(self) -> int:
        return self.deliver_cycle - self.inject_cycle


@dataclass(frozen=True)
class LatencySummary:
    count: int
    mean: Fraction
    minimum: int
    maximum: int


@dataclass
class SimStats:
    """Everything a run measured.

    Event counters are kept per router and per packet class; both views sum to the same totals.
    """

    total_cycles: int = 0
    records: list[LatencyRecord] = field(default_factory=list)
    router_events: dict[NodeAddress, EventCounters] = field(default_factory=lambda: defaultdict(EventCounters))
    class_events: dict[str, EventCounters] = field(default_factory=lambda: defaultdict(EventCounters))
    packets_injected: int = 0
    packets_delivered: int = 0
    flits_created: int = 0
    flits_retired: int = 0
    max_buffer_occupancy: int = 0

    def count(self, node: NodeAddress, cls: str, event: str, amount: int = 1) -> None:
        router = self.router_events[node]
        setattr(router, event, getattr(router, event) + amount)
        by_class = self.class_events[cls]
        setattr(by_class, event, getattr(by_class, event) + amount)

    def totals(self) -> EventCounters:
        total = EventCounters()
        for counters in self.router_events.values():
            total.add(counters)
        return total

    def latency_summary(self, cls: str | None = None) -> LatencySummary:
        latencies = [r.latency for r in self.records if cls is None or r.cls == cls]
        if not latencies:
            return LatencySummary(0, Fraction(0), 0, 0)
        return LatencySummary(len(latencies), Fraction(sum(latencies), len(latencies)), min(latencies), max(latencies))

    def digest(self) -> str:
        """Canonical text rendering; two runs are identical iff their digests are."""
        lines = [
            f"cycles={self.total_cycles} injected={self.packets_injected} delivered={self.packets_delivered} "
            f"flits={self.flits_created}/{self.flits_retired} max_occupancy={self.max_buffer_occupancy}"
        ]
        for r in sorted(self.records, key=lambda r: r.packet_id):
            lines.append(f"{r.packet_id} {r.cls} {r.src} {r.dst} {r.flits} {r.inject_cycle} {r.deliver_cycle}")
        for node in sorted(self.router_events):
            counts = " ".join(str(v) for v in self.router_events[node].as_dict().values())
            lines.append(f"{node} {counts}")
        return "\n".join(lines)
