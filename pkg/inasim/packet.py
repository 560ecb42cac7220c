"""Packets, flits and mesh addresses."""

import math
from dataclasses import dataclass, field
from enum import Enum

WORD_BITS = 32
WORD_MASK = (1 << WORD_BITS) - 1


@dataclass(frozen=True, order=True)
class NodeAddress:
    """Router coordinates; x grows eastwards and y grows northwards."""

    x: int
    y: int

    def __str__(self) -> str:
        return f"({self.x},{self.y})"

    def hops_to(self, other: "NodeAddress") -> int:
        return abs(self.x - other.x) + abs(self.y - other.y)


class PacketClass(str, Enum):
    UNICAST = "unicast"
    STREAM = "stream"
    INA_CHAIN = "ina_chain"
    GATHER = "gather"

    @property
    def vc(self) -> int:
        """Virtual channel the class travels on: distribution traffic on VC0, collection traffic on VC1."""
        return 1 if self in (PacketClass.INA_CHAIN, PacketClass.GATHER) else 0


class FlitKind(Enum):
    HEAD = "head"
    BODY = "body"
    TAIL = "tail"
    HEAD_TAIL = "head-tail"


def words_per_flit(flit_width: int) -> int:
    return flit_width // WORD_BITS


def flit_count(payload_words: int, flit_width: int = 128) -> int:
    """One header flit plus enough payload flits for *payload_words* 32-bit words."""
    return 1 + math.ceil(payload_words * WORD_BITS / flit_width)


@dataclass(eq=False)
class Packet:
    """A wormhole packet.

    ``payload`` holds the 32-bit words carried in flight; stream packets only declare their size in ``words`` and
    carry no values.  ``stops`` lists routers that act on the packet on its way (accumulation or gather append),
    ``merge_into`` marks a chain packet whose sum retires inside its destination router as that node's result.
    """

    packet_id: int
    cls: PacketClass
    src: NodeAddress
    dst: NodeAddress
    words: int = 0
    payload: list[int] = field(default_factory=list)
    chain_id: int | None = None
    round: int = 0
    stops: tuple[NodeAddress, ...] = ()
    merge_into: int | None = None
    slot_words: int = 0
    flit_width: int = 128
    flits: int = field(init=False)
    filled_slots: set[int] = field(default_factory=set)
    issue_cycle: int | None = None
    inject_cycle: int | None = None
    deliver_cycle: int | None = None

    def __post_init__(self):
        self.payload = list(self.payload)
        if self.payload and len(self.payload) != self.words:
            raise ValueError(f"packet {self.packet_id}: payload has {len(self.payload)} words, expected {self.words}")
        if self.cls is PacketClass.GATHER:
            if not self.payload:
                self.payload = [0] * self.words
            if self.slot_words <= 0:
                self.slot_words = 1
        self.flits = flit_count(self.words, self.flit_width)

    @property
    def vc(self) -> int:
        return self.cls.vc

    @property
    def latency(self) -> int | None:
        if self.inject_cycle is None or self.deliver_cycle is None:
            return None
        return self.deliver_cycle - self.inject_cycle

    def make_flits(self) -> list["Flit"]:
        if self.flits == 1:
            return [Flit(FlitKind.HEAD_TAIL, self, 0)]
        kinds = [FlitKind.HEAD] + [FlitKind.BODY] * (self.flits - 2) + [FlitKind.TAIL]
        return [Flit(kind, self, index) for index, kind in enumerate(kinds)]


@dataclass(eq=False, slots=True)
class Flit:
    kind: FlitKind
    packet: Packet
    index: int
    bw_cycle: int = -1
    route: int | None = None

    @property
    def is_head(self) -> bool:
        return self.kind in (FlitKind.HEAD, FlitKind.HEAD_TAIL)

    @property
    def is_tail(self) -> bool:
        return self.kind in (FlitKind.TAIL, FlitKind.HEAD_TAIL)

    @property
    def vc(self) -> int:
        return self.packet.cls.vc

    @property
    def payload(self) -> list[int]:
        """Words carried by this flit; the header flit carries none."""
        if self.index == 0:
            return []
        per_flit = words_per_flit(self.packet.flit_width)
        start = (self.index - 1) * per_flit
        return self.packet.payload[start : start + per_flit]
