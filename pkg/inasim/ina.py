"""In-network accumulation unit and gather payload appending.

The accumulation unit is a four-state machine.  A matched chain head moves it from Idle to AcquireOperand1; the
local PE's operand, handed over through the NI-to-router operand path, moves it to AcquireOperand2; the chain's
payload reaching switch traversal triggers Summation, which rewrites the payload in place; the next cycle returns
the unit to Idle.  :func:`ina_step` is the pure transition function; the router owns one unit and calls it once per
cycle.
"""

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum

from inasim.exceptions import InaProtocolError, SlotOverflowError
from inasim.packet import WORD_MASK, Packet, PacketClass

ChainKey = tuple[int, int]  # (chain_id, round)


class InaState(Enum):
    IDLE = "Idle"
    ACQUIRE_OPERAND1 = "AcquireOperand1"
    ACQUIRE_OPERAND2 = "AcquireOperand2"
    SUMMATION = "Summation"


class InaAction(Enum):
    NONE = "none"
    LATCH_HEAD = "latch_head"
    STALL = "stall"
    LATCH_LOCAL = "latch_local"
    WAIT_PAYLOAD = "wait_payload"
    SUM = "sum"
    RELEASE = "release"


@dataclass(frozen=True)
class PendingOperand:
    """Psum words produced by the local PE for one chain and round."""

    chain_id: int
    words: tuple[int, ...]
    round: int = 0

    @property
    def key(self) -> ChainKey:
        return (self.chain_id, self.round)


@dataclass(frozen=True)
class OperandSlot:
    chain_id: int
    round: int
    words: tuple[int, ...] | None = None

    @property
    def key(self) -> ChainKey:
        return (self.chain_id, self.round)


@dataclass(frozen=True)
class InaUnitState:
    state: InaState = InaState.IDLE
    operand1: OperandSlot | None = None
    operand2: OperandSlot | None = None
    result: tuple[int, ...] | None = None

    @property
    def consistent(self) -> bool:
        """Whether the operand slots agree with the state."""
        op1, op2, result = self.operand1, self.operand2, self.result
        if self.state is InaState.IDLE:
            return op1 is None and op2 is None and result is None
        if self.state is InaState.ACQUIRE_OPERAND1:
            return op1 is not None and op2 is None and result is None
        if op1 is None or op2 is None or op1.key != op2.key or op2.words is None:
            return False
        if self.state is InaState.ACQUIRE_OPERAND2:
            return result is None
        return op1.words is not None and result is not None and len(result) == len(op2.words)


@dataclass(frozen=True)
class InaInputs:
    """What the router offers the unit in one cycle.

    ``head`` is the key of the chain head waiting to be served, ``local`` the operand offered by the local NI and
    ``payload`` the chain's psum words when its first payload flit wins switch allocation.
    """

    head: ChainKey | None = None
    local: PendingOperand | None = None
    payload: tuple[int, ...] | None = None


def ina_match(head: Packet | ChainKey, pending: Mapping[ChainKey, PendingOperand] | Iterable[PendingOperand]) -> bool:
    """Return True when a local operand exists for the head's chain id and round."""
    key = (head.chain_id, head.round) if isinstance(head, Packet) else tuple(head)
    if isinstance(pending, Mapping):
        return key in pending
    return any(operand.key == key for operand in pending)


def ina_accumulate(operand1: int, operand2: int) -> int:
    """Two's-complement 32-bit wrapping addition on unsigned word encodings."""
    return (operand1 + operand2) & WORD_MASK


def _check_duplicate(unit: InaUnitState, inputs: InaInputs) -> None:
    if inputs.head is not None and unit.operand1 is not None and tuple(inputs.head) == unit.operand1.key:
        chain_id, round_index = unit.operand1.key
        raise InaProtocolError(f"second head for chain {chain_id} round {round_index} before summation completed")


def ina_step(unit: InaUnitState, inputs: InaInputs) -> tuple[InaUnitState, InaAction]:
    """Advance the accumulation unit by one cycle.

    Raises:
        InaProtocolError: If the unit's operand slots disagree with its state, a second head with the latched chain
            id and round arrives before Summation completes, or the payload width differs from the local operand's
    """
    state = unit.state
    if not unit.consistent:
        raise InaProtocolError(f"accumulation unit in state {state.value} with inconsistent operand slots")
    if state is InaState.IDLE:
        if inputs.head is None:
            return unit, InaAction.NONE
        chain_id, round_index = inputs.head
        return InaUnitState(InaState.ACQUIRE_OPERAND1, OperandSlot(chain_id, round_index)), InaAction.LATCH_HEAD

    _check_duplicate(unit, inputs)

    if state is InaState.ACQUIRE_OPERAND1:
        local = inputs.local
        if local is None or local.key != unit.operand1.key:
            return unit, InaAction.STALL
        operand2 = OperandSlot(local.chain_id, local.round, tuple(local.words))
        return InaUnitState(InaState.ACQUIRE_OPERAND2, unit.operand1, operand2), InaAction.LATCH_LOCAL

    if state is InaState.ACQUIRE_OPERAND2:
        if inputs.payload is None:
            return unit, InaAction.WAIT_PAYLOAD
        local_words = unit.operand2.words
        if len(inputs.payload) != len(local_words):
            raise InaProtocolError(
                f"chain {unit.operand1.chain_id}: payload has {len(inputs.payload)} words, "
                f"local operand has {len(local_words)}"
            )
        result = tuple(ina_accumulate(a, b) for a, b in zip(inputs.payload, local_words, strict=True))
        operand1 = OperandSlot(unit.operand1.chain_id, unit.operand1.round, tuple(inputs.payload))
        return InaUnitState(InaState.SUMMATION, operand1, unit.operand2, result), InaAction.SUM

    return InaUnitState(), InaAction.RELEASE


def gather_append(packet: Packet, words: Sequence[int], slot: int) -> Packet:
    """Write a node's result words into a gather packet's reserved slot.

    Raises:
        SlotOverflowError: If the packet is not a gather, the slot is outside the packet, the words exceed the slot
            width, or the slot was already written
    """
    if packet.cls is not PacketClass.GATHER:
        raise SlotOverflowError(f"packet {packet.packet_id} is {packet.cls.value}, not a gather packet")
    width = packet.slot_words
    slots = packet.words // width
    if not 0 <= slot < slots:
        raise SlotOverflowError(f"gather packet {packet.packet_id} has {slots} slots, cannot write slot {slot}")
    if len(words) > width:
        raise SlotOverflowError(f"slot {slot} holds {width} words, got {len(words)}")
    if slot in packet.filled_slots:
        raise SlotOverflowError(f"slot {slot} of gather packet {packet.packet_id} is already filled")
    start = slot * width
    packet.payload[start : start + len(words)] = [w & WORD_MASK for w in words]
    packet.filled_slots.add(slot)
    return packet
