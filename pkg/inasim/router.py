"""Mesh router: XY route computation, virtual-channel and switch allocation, and the accumulation unit.

A flit written into an input buffer at cycle t (buffer write and route compute) is eligible for VC allocation at
t + router_latency - 3 and for switch allocation at t + router_latency - 2; it crosses the crossbar the following
cycle.  With the default latency of 4 that gives the canonical BW/RC, VA, SA, ST pipeline.  The router only decides
who moves; :class:`inasim.network.Network` moves the flits and owns the links.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

from inasim.config import MeshConfig
from inasim.exceptions import FlowControlError, InaProtocolError
from inasim.ina import (
    ChainKey,
    InaAction,
    InaInputs,
    InaState,
    InaUnitState,
    PendingOperand,
    gather_append,
    ina_match,
    ina_step,
)
from inasim.packet import Flit, NodeAddress, Packet, PacketClass


class Port(IntEnum):
    """Router ports in arbitration priority order."""

    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3
    LOCAL = 4

    def opposite(self) -> "Port":
        return _OPPOSITE[self]

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTA[self]


_OPPOSITE = {
    Port.NORTH: Port.SOUTH,
    Port.SOUTH: Port.NORTH,
    Port.EAST: Port.WEST,
    Port.WEST: Port.EAST,
    Port.LOCAL: Port.LOCAL,
}
_DELTA = {Port.NORTH: (0, 1), Port.EAST: (1, 0), Port.SOUTH: (0, -1), Port.WEST: (-1, 0), Port.LOCAL: (0, 0)}
PORTS = tuple(Port)


def route_compute(current: NodeAddress, dst: NodeAddress) -> Port:
    """XY dimension-order routing: correct x first, then y."""
    if dst.x > current.x:
        return Port.EAST
    if dst.x < current.x:
        return Port.WEST
    if dst.y > current.y:
        return Port.NORTH
    if dst.y < current.y:
        return Port.SOUTH
    return Port.LOCAL


class RoundRobinArbiter:
    """Grants the first requester after the previous winner; the first grant favours index 0."""

    def __init__(self, size: int):
        self.size = size
        self.last = size - 1

    def pick(self, requests) -> int | None:
        best = None
        best_distance = self.size
        for index in requests:
            distance = (index - self.last - 1) % self.size
            if distance < best_distance:
                best, best_distance = index, distance
        if best is not None:
            self.last = best
        return best


@dataclass
class InputChannel:
    buffer: deque = field(default_factory=deque)
    out_port: Port | None = None
    out_vc: int | None = None
    va_cycle: int = -1

    def release(self) -> None:
        self.out_port = None
        self.out_vc = None
        self.va_cycle = -1


class Router:
    """State of one mesh router."""

    def __init__(self, address: NodeAddress, config: MeshConfig):
        self.address = address
        self.config = config
        vcs = config.vcs
        self.inputs = [[InputChannel() for _ in range(vcs)] for _ in PORTS]
        self.credits = [[config.buffer_depth] * vcs for _ in PORTS]
        self.owners: list[list[tuple[int, int] | None]] = [[None] * vcs for _ in PORTS]
        self._va_arbiters = {(port, vc): RoundRobinArbiter(len(PORTS) * vcs) for port in PORTS for vc in range(vcs)}
        self._input_arbiters = [RoundRobinArbiter(vcs) for _ in PORTS]
        self._output_arbiters = [RoundRobinArbiter(len(PORTS)) for _ in PORTS]
        self.occupancy = 0

        self.ina = InaUnitState()
        self.ina_owner: Packet | None = None
        self.ina_queue: deque[Packet] = deque()
        self.pending: dict[ChainKey, PendingOperand] = {}
        self.results: dict[ChainKey, tuple[int, ...]] = {}
        self._summing: Packet | None = None

    # ------------------------------------------------------------------------
    # Packet roles at this router
    # ------------------------------------------------------------------------

    def accumulates(self, packet: Packet) -> bool:
        return self.config.ina_enabled and packet.cls is PacketClass.INA_CHAIN and self.address in packet.stops

    def appends(self, packet: Packet) -> bool:
        return packet.cls is PacketClass.GATHER and self.address in packet.stops

    def merges(self, packet: Packet) -> bool:
        return self.accumulates(packet) and packet.merge_into is not None and packet.dst == self.address

    @property
    def active(self) -> bool:
        return self.occupancy > 0 or self.ina.state is not InaState.IDLE or bool(self.ina_queue)

    # ------------------------------------------------------------------------
    # Buffer write and route compute
    # ------------------------------------------------------------------------

    def write(self, port: Port, flit: Flit, now: int) -> int:
        """Write *flit* into the input buffer of *port*; returns the new occupancy of that buffer.

        Raises:
            FlowControlError: If the buffer is already full
            InaProtocolError: If an accumulating head duplicates a chain already held by the unit
        """
        channel = self.inputs[port][flit.vc]
        if len(channel.buffer) >= self.config.buffer_depth:
            raise FlowControlError(f"router {self.address} port {port.name} VC{flit.vc} overflows its buffer")
        flit.bw_cycle = now
        if flit.is_head:
            packet = flit.packet
            flit.route = route_compute(self.address, packet.dst)
            if self.accumulates(packet):
                self._enqueue_chain(packet)
        channel.buffer.append(flit)
        self.occupancy += 1
        return len(channel.buffer)

    def _enqueue_chain(self, packet: Packet) -> None:
        key = (packet.chain_id, packet.round)
        held = list(self.ina_queue)
        if self.ina_owner is not None:
            held.append(self.ina_owner)
        if any((other.chain_id, other.round) == key for other in held):
            raise InaProtocolError(f"router {self.address}: second head for chain {key[0]} round {key[1]}")
        self.ina_queue.append(packet)

    def add_pending(self, operand: PendingOperand) -> None:
        if operand.key in self.pending:
            raise InaProtocolError(
                f"router {self.address}: operand for chain {operand.chain_id} round {operand.round} already pending"
            )
        self.pending[operand.key] = operand

    # ------------------------------------------------------------------------
    # VC allocation
    # ------------------------------------------------------------------------

    def allocate_vcs(self, now: int) -> list[tuple[Port, int]]:
        """Grant free output VCs to waiting heads; returns the granted (input port, VC) pairs."""
        vcs = self.config.vcs
        ready_at = self.config.router_latency - 3
        requests: dict[tuple[int, int], list[int]] = {}
        for port in PORTS:
            for vc, channel in enumerate(self.inputs[port]):
                if not channel.buffer or channel.out_port is not None:
                    continue
                flit = channel.buffer[0]
                if self._awaits_result(flit):
                    continue
                if flit.is_head and now >= flit.bw_cycle + ready_at:
                    requests.setdefault((flit.route, flit.vc), []).append(port * vcs + vc)

        grants = []
        for (out_port, out_vc), requesters in sorted(requests.items()):
            if self.owners[out_port][out_vc] is not None:
                continue
            winner = self._va_arbiters[(out_port, out_vc)].pick(requesters)
            in_port, in_vc = divmod(winner, vcs)
            channel = self.inputs[in_port][in_vc]
            channel.out_port = Port(out_port)
            channel.out_vc = out_vc
            channel.va_cycle = now
            self.owners[out_port][out_vc] = (in_port, in_vc)
            grants.append((Port(in_port), in_vc))
        return grants

    # ------------------------------------------------------------------------
    # Switch allocation
    # ------------------------------------------------------------------------

    def _awaits_result(self, flit: Flit) -> bool:
        """A gather head holds no output VC until this node's result is present."""
        packet = flit.packet
        return flit.is_head and self.appends(packet) and (packet.chain_id, packet.round) not in self.results

    def _eligible(self, channel: InputChannel, now: int) -> bool:
        if not channel.buffer or channel.out_port is None:
            return False
        flit = channel.buffer[0]
        if now < flit.bw_cycle + self.config.router_latency - 2:
            return False
        if flit.is_head and channel.va_cycle >= now:
            return False
        if channel.out_port is not Port.LOCAL and self.credits[channel.out_port][channel.out_vc] <= 0:
            return False
        packet = flit.packet
        if flit.index <= 1 and self.accumulates(packet):
            # head and first payload flit wait for the local operand
            if self.ina_owner is not packet or self.ina.state is not InaState.ACQUIRE_OPERAND2:
                return False
        return not self._awaits_result(flit)

    def allocate_switch(self, now: int) -> list[tuple[Port, int]]:
        """Pick at most one flit per input port and per output port; returns winning (input port, VC) pairs."""
        requests: dict[int, list[int]] = {}
        choice: dict[int, int] = {}
        for port in PORTS:
            eligible = [vc for vc, channel in enumerate(self.inputs[port]) if self._eligible(channel, now)]
            if not eligible:
                continue
            vc = self._input_arbiters[port].pick(eligible)
            choice[port] = vc
            requests.setdefault(self.inputs[port][vc].out_port, []).append(port)

        winners = []
        for out_port in sorted(requests):
            in_port = self._output_arbiters[out_port].pick(requests[out_port])
            winners.append((Port(in_port), choice[in_port]))
        return winners

    def pop(self, in_port: Port, vc: int) -> tuple[Flit, Port, int]:
        """Remove the front flit of a granted channel, releasing the route after a tail."""
        channel = self.inputs[in_port][vc]
        flit = channel.buffer.popleft()
        self.occupancy -= 1
        out_port, out_vc = channel.out_port, channel.out_vc
        if out_port is not Port.LOCAL:
            self.credits[out_port][out_vc] -= 1
        if flit.is_tail:
            self.owners[out_port][out_vc] = None
            channel.release()
        if flit.index == 1 and self.ina_owner is flit.packet:
            self._summing = flit.packet
        return flit, out_port, out_vc

    def append_gather(self, packet: Packet) -> tuple[int, ...]:
        """Copy this node's result into the passing gather packet."""
        words = self.results.pop((packet.chain_id, packet.round))
        gather_append(packet, words, packet.stops.index(self.address))
        return words

    # ------------------------------------------------------------------------
    # Accumulation unit
    # ------------------------------------------------------------------------

    def advance_ina(self) -> tuple[InaAction, Packet | None]:
        """Run one cycle of the accumulation unit; returns the action and the packet it concerns."""
        unit = self.ina
        head = local = payload = None
        if unit.state is InaState.IDLE and self.ina_queue:
            front = self.ina_queue[0]
            head = (front.chain_id, front.round)
        elif unit.state is InaState.ACQUIRE_OPERAND1 and ina_match(unit.operand1.key, self.pending):
            local = self.pending[unit.operand1.key]
        elif unit.state is InaState.ACQUIRE_OPERAND2 and self._summing is self.ina_owner:
            payload = tuple(self.ina_owner.payload)
        self._summing = None

        self.ina, action = ina_step(unit, InaInputs(head, local, payload))
        packet = self.ina_owner
        if action is InaAction.LATCH_HEAD:
            self.ina_owner = packet = self.ina_queue.popleft()
        elif action is InaAction.LATCH_LOCAL:
            del self.pending[unit.operand1.key]
        elif action is InaAction.SUM:
            packet.payload[:] = list(self.ina.result)
        elif action is InaAction.RELEASE:
            self.ina_owner = None
        return action, packet
