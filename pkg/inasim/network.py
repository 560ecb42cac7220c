"""Cycle-accurate 2D mesh network.

:class:`Network` owns the routers, the network interfaces and everything in flight between them: flits on links,
credits travelling upstream, deliveries waiting out the ejection latency and operands on their way from a PE to its
router.  :meth:`Network.step` advances exactly one cycle in a fixed order (link arrivals, credit returns, operand
deposits, NI injection, then per router VC allocation, switch allocation/traversal and the accumulation unit, and
finally NI delivery), so a run is a deterministic function of its configuration and traffic.

Weight and input distribution does not use the mesh links.  Each row has a streaming bus driven by its west-edge
stream interface with one lane per PE slot of every node; :meth:`Network.stream` times a packet on its lane and
schedules the delivery.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Protocol, TextIO

from inasim.config import MeshConfig
from inasim.exceptions import ConfigError, DrainTimeoutError, LivelockError, UsageError
from inasim.ina import InaAction, InaState, PendingOperand
from inasim.packet import Flit, NodeAddress, Packet, PacketClass
from inasim.router import Port, Router
from inasim.stats import LatencyRecord, SimStats


@dataclass(frozen=True)
class NetEvent:
    """Something observable that happened in one cycle.

    ``kind`` is one of INJECT, DELIVER, MERGE, INA_ACC, GATHER_APPEND or OPERAND; ``ref`` is a packet id except
    for INA_ACC where it is the chain id.
    """

    cycle: int
    node: NodeAddress
    kind: str
    ref: int
    vc: int = 0
    value: str = ""

    def log_line(self) -> str:
        if self.kind == "INA_ACC":
            return f"{self.cycle},{self.node},{self.kind},{self.ref},{self.value}"
        return f"{self.cycle},{self.node},{self.kind},{self.ref},{self.vc}"


class TrafficSource(Protocol):
    """Feeds packets and operands to a network while it runs."""

    def release(self, network: "Network") -> None: ...

    def on_events(self, network: "Network", events: list[NetEvent]) -> None: ...

    def next_release(self) -> int | None: ...

    def exhausted(self) -> bool: ...


class NetworkInterface:
    """Packet queue and flit injector between a PE and its router's local port."""

    def __init__(self, address: NodeAddress, config: MeshConfig):
        self.address = address
        self.config = config
        self.queue: deque[tuple[int, Packet]] = deque()
        self.sending: deque[Flit] = deque()
        self.credits = [config.buffer_depth] * config.vcs

    @property
    def busy(self) -> bool:
        return bool(self.queue) or bool(self.sending)

    def accept(self, packet: Packet, cycle: int) -> bool:
        if len(self.queue) >= self.config.ni_queue_depth:
            return False
        self.queue.append((cycle + self.config.ni_inject_latency, packet))
        return True

    def next_ready(self) -> int | None:
        if self.sending or not self.queue:
            return None
        return self.queue[0][0]


def _grid(config: MeshConfig) -> list[NodeAddress]:
    return [NodeAddress(x, y) for y in range(config.size) for x in range(config.size)]


class Network:
    """An N x N mesh of routers with one network interface per router."""

    def __init__(self, config: MeshConfig, event_log: TextIO | None = None):
        self.config = config
        self.size = config.size
        self.nodes = _grid(config)
        self.routers = [Router(node, config) for node in self.nodes]
        self.interfaces = [NetworkInterface(node, config) for node in self.nodes]
        self.links = [
            (a, b)
            for a in self.nodes
            for b in (NodeAddress(a.x + 1, a.y), NodeAddress(a.x, a.y + 1))
            if b.x < self.size and b.y < self.size
        ]
        self.cycle = 0
        self.stats = SimStats()
        self.event_log = event_log
        self.in_flight: dict[int, Packet] = {}

        self._arrivals: dict[int, list[tuple[int, Port, Flit]]] = {}
        self._credits: dict[int, list[tuple[int, Port, int]]] = {}
        self._ni_credits: dict[int, list[tuple[int, int]]] = {}
        self._deliveries: dict[int, list[tuple[int, Packet, str]]] = {}
        self._deposits: dict[int, list[tuple[int, object]]] = {}
        self._lanes: dict[tuple[int, int], int] = {}
        self._active: set[int] = set()
        self._busy: set[int] = set()
        self._early: list[NetEvent] = []
        self._buffered = 0

    # ========================================================================
    # Addressing
    # ========================================================================

    def index(self, node: NodeAddress) -> int:
        if not (0 <= node.x < self.size and 0 <= node.y < self.size):
            raise UsageError(f"node {node} is outside the {self.size}x{self.size} mesh")
        return node.y * self.size + node.x

    def router(self, node: NodeAddress) -> Router:
        return self.routers[self.index(node)]

    def _neighbor(self, index: int, port: Port) -> int:
        dx, dy = port.delta
        node = self.nodes[index]
        return self.index(NodeAddress(node.x + dx, node.y + dy))

    @staticmethod
    def _schedule(calendar: dict[int, list], cycle: int, item) -> None:
        calendar.setdefault(cycle, []).append(item)

    # ========================================================================
    # Traffic entry points
    # ========================================================================

    def inject(self, packet: Packet, at: NodeAddress | None = None, cycle: int | None = None) -> bool:
        """Offer *packet* to the NI at its source node.

        Args:
            packet: Packet to send
            at: Injecting node; must be the packet's source
            cycle: Issue cycle, defaults to the current cycle

        Returns:
            False when the NI queue is full and the caller must retry later
        """
        at = packet.src if at is None else at
        if at != packet.src:
            raise UsageError(f"packet {packet.packet_id} has source {packet.src}, cannot inject at {at}")
        cycle = self.cycle if cycle is None else cycle
        if cycle < self.cycle:
            raise UsageError(f"cannot inject packet {packet.packet_id} in the past (cycle {cycle} < {self.cycle})")
        self.index(packet.dst)
        if packet.flit_width != self.config.flit_width:
            raise UsageError(f"packet {packet.packet_id} built for {packet.flit_width}-bit flits")
        index = self.index(at)
        if not self.interfaces[index].accept(packet, cycle):
            return False
        self._busy.add(index)
        packet.issue_cycle = cycle
        return True

    def stream(self, packet: Packet, lane: int = 0, cycle: int | None = None) -> int:
        """Send a stream packet over its row's streaming bus.

        The lane of (destination node, *lane*) carries one flit per cycle and serializes its packets; different
        lanes run in parallel.  Delivery follows the injection latency, one link latency per bus segment from the
        west edge, the packet's serialization and the ejection latency.

        Returns:
            The delivery cycle

        Raises:
            UsageError: If the packet is not a stream packet leaving the west edge of its row, or the lane does not
                exist
        """
        cycle = self.cycle if cycle is None else cycle
        if packet.cls is not PacketClass.STREAM:
            raise UsageError(f"packet {packet.packet_id} is {packet.cls.value}, only stream packets use the bus")
        if cycle < self.cycle:
            raise UsageError(f"cannot stream packet {packet.packet_id} in the past (cycle {cycle} < {self.cycle})")
        index = self.index(packet.dst)
        if packet.src != NodeAddress(0, packet.dst.y):
            raise UsageError(f"stream packet {packet.packet_id} must leave the west edge of row {packet.dst.y}")
        if not 0 <= lane < self.config.pes:
            raise UsageError(f"lane {lane} does not exist with {self.config.pes} PE(s) per router")

        config = self.config
        start = max(cycle + config.ni_inject_latency, self._lanes.get((index, lane), 0))
        self._lanes[(index, lane)] = start + packet.flits
        segments = packet.dst.x + 1
        deliver = start + segments * config.link_latency + packet.flits - 1 + config.ni_eject_latency

        packet.issue_cycle = cycle
        packet.inject_cycle = start
        self.in_flight[packet.packet_id] = packet
        self.stats.packets_injected += 1
        self.stats.flits_created += packet.flits
        self.stats.flits_retired += packet.flits
        self._count(packet.src, packet, "ni_inject")
        self._count(packet.dst, packet, "link_traversal", packet.flits * segments)
        self._early.append(NetEvent(start, packet.src, "INJECT", packet.packet_id, packet.vc))
        self._schedule(self._deliveries, deliver, (index, packet, "DELIVER"))
        return deliver

    def register_operand(self, node: NodeAddress, operand: PendingOperand, cycle: int) -> None:
        """Hand a PE psum to the router's accumulation unit, arriving at *cycle*."""
        self._schedule(self._deposits, max(cycle, self.cycle), (self.index(node), operand))

    def register_result(self, node: NodeAddress, gather_id: int, round_index: int, words, cycle: int) -> None:
        """Hand a PE result to the router for the row gather, arriving at *cycle*."""
        item = ((gather_id, round_index), tuple(words))
        self._schedule(self._deposits, max(cycle, self.cycle), (self.index(node), item))

    # ========================================================================
    # State queries
    # ========================================================================

    def quiescent(self) -> bool:
        """No flit is buffered, on a link or being injected, and no accumulation unit is busy."""
        if self._buffered or self._arrivals or any(self.interfaces[i].sending for i in self._busy):
            return False
        return not any(self.routers[i].active for i in self._active)

    def drained(self) -> bool:
        if not self.quiescent():
            return False
        if self._deliveries or self._deposits or self._credits or self._ni_credits:
            return False
        return not self._busy

    def next_timed_cycle(self) -> int | None:
        cycles = [min(c) for c in (self._deliveries, self._deposits, self._credits, self._ni_credits) if c]
        cycles.extend(c for c in (self.interfaces[i].next_ready() for i in self._busy) if c is not None)
        return min(cycles) if cycles else None

    def fast_forward(self, limit: int | None = None) -> None:
        """Skip idle cycles up to the next timed event or *limit*, whichever is first."""
        if not self.quiescent():
            return
        candidates = [c for c in (self.next_timed_cycle(), limit) if c is not None]
        if not candidates:
            return
        target = min(candidates)
        if target > self.cycle:
            logging.debug(f"Fast-forward from cycle {self.cycle} to {target}")
            self.cycle = target

    # ========================================================================
    # Cycle loop
    # ========================================================================

    def step(self) -> list[NetEvent]:
        """Advance one cycle and return the events it produced."""
        now = self.cycle
        events, self._early = self._early, []

        for index, port, flit in self._arrivals.pop(now, ()):
            self._write(index, port, flit, now)
        for index, port, vc in self._credits.pop(now, ()):
            self.routers[index].credits[port][vc] += 1
        for index, vc in self._ni_credits.pop(now, ()):
            self.interfaces[index].credits[vc] += 1
        for index, item in self._deposits.pop(now, ()):
            self._deposit(index, item, now, events)

        for index in sorted(self._busy):
            ni = self.interfaces[index]
            self._inject_flit(index, ni, now, events)
            if not ni.busy:
                self._busy.discard(index)

        for index in sorted(self._active):
            router = self.routers[index]
            for in_port, vc in router.allocate_vcs(now):
                self._count(router.address, router.inputs[in_port][vc].buffer[0].packet, "arbitration")
            for in_port, vc in router.allocate_switch(now):
                self._traverse(index, router, in_port, vc, now, events)
            self._advance_ina(index, router, now, events)
            if not router.active:
                self._active.discard(index)

        for index, packet, kind in self._deliveries.pop(now, ()):
            self._complete(index, packet, kind, now, events)

        self._check_livelock(now)
        if self.event_log is not None:
            for event in events:
                self.event_log.write(event.log_line() + "\n")
        self.cycle += 1
        return events

    def _count(self, node: NodeAddress, packet: Packet, event: str, amount: int = 1) -> None:
        self.stats.count(node, packet.cls.value, event, amount)

    def _write(self, index: int, port: Port, flit: Flit, now: int) -> None:
        router = self.routers[index]
        occupancy = router.write(port, flit, now)
        self._buffered += 1
        self._active.add(index)
        self.stats.max_buffer_occupancy = max(self.stats.max_buffer_occupancy, occupancy)
        self._count(router.address, flit.packet, "buffer_write")

    def _deposit(self, index: int, item, now: int, events: list[NetEvent]) -> None:
        router = self.routers[index]
        if isinstance(item, PendingOperand):
            router.add_pending(item)
            ref = item.chain_id
        else:
            key, words = item
            router.results[key] = words
            ref = key[0]
        self.stats.count(router.address, "operand", "operand_latch")
        self._active.add(index)
        events.append(NetEvent(now, router.address, "OPERAND", ref))

    def _inject_flit(self, index: int, ni: NetworkInterface, now: int, events: list[NetEvent]) -> None:
        if not ni.sending:
            ready, packet = ni.queue[0]
            if ready > now:
                return
            ni.queue.popleft()
            ni.sending.extend(packet.make_flits())
            self.stats.flits_created += packet.flits
        flit = ni.sending[0]
        if ni.credits[flit.vc] <= 0:
            return
        ni.sending.popleft()
        ni.credits[flit.vc] -= 1
        packet = flit.packet
        if flit.is_head:
            packet.inject_cycle = now
            self.in_flight[packet.packet_id] = packet
            self.stats.packets_injected += 1
            self._count(ni.address, packet, "ni_inject")
            events.append(NetEvent(now, ni.address, "INJECT", packet.packet_id, packet.vc))
        self._write(index, Port.LOCAL, flit, now)

    def _traverse(self, index: int, router: Router, in_port: Port, vc: int, now: int, events: list[NetEvent]) -> None:
        flit, out_port, out_vc = router.pop(in_port, vc)
        self._buffered -= 1
        packet = flit.packet
        node = router.address
        self._count(node, packet, "buffer_read")
        self._count(node, packet, "arbitration")

        if in_port is Port.LOCAL:
            self._schedule(self._ni_credits, now + 1, (index, vc))
        else:
            self._schedule(self._credits, now + 1, (self._neighbor(index, in_port), in_port.opposite(), vc))

        if flit.is_head and router.appends(packet):
            words = router.append_gather(packet)
            self._count(node, packet, "gather_append")
            events.append(NetEvent(now, node, "GATHER_APPEND", packet.packet_id, vc, " ".join(map(str, words))))

        exit_cycle = now + 2
        if out_port is Port.LOCAL and router.merges(packet):
            self.stats.flits_retired += 1
            if flit.is_tail:
                self._schedule(self._deliveries, exit_cycle, (index, packet, "MERGE"))
            return

        self._count(node, packet, "crossbar_traversal")
        if out_port is Port.LOCAL:
            self.stats.flits_retired += 1
            if flit.is_tail:
                self._schedule(self._deliveries, exit_cycle + self.config.ni_eject_latency, (index, packet, "DELIVER"))
            return

        self._count(node, packet, "link_traversal")
        downstream = self._neighbor(index, out_port)
        self._schedule(self._arrivals, exit_cycle + self.config.link_latency, (downstream, out_port.opposite(), flit))

    def _advance_ina(self, index: int, router: Router, now: int, events: list[NetEvent]) -> None:
        if router.ina.state is InaState.IDLE and not router.ina_queue:
            return
        action, packet = router.advance_ina()
        if action is InaAction.SUM:
            self._count(router.address, packet, "ina_add", len(packet.payload))
            value = " ".join(str(word) for word in packet.payload)
            events.append(NetEvent(now, router.address, "INA_ACC", packet.chain_id, packet.vc, value))

    def _complete(self, index: int, packet: Packet, kind: str, now: int, events: list[NetEvent]) -> None:
        node = self.nodes[index]
        packet.deliver_cycle = now
        if kind == "MERGE":
            self.routers[index].results[(packet.merge_into, packet.round)] = tuple(packet.payload)
            self._active.add(index)
        else:
            self._count(node, packet, "ni_eject")
        self.in_flight.pop(packet.packet_id, None)
        self.stats.packets_delivered += 1
        self.stats.records.append(
            LatencyRecord(
                packet.packet_id, packet.cls.value, packet.src, packet.dst, packet.flits, packet.inject_cycle, now
            )
        )
        events.append(NetEvent(now, node, kind, packet.packet_id, packet.vc))

    def _check_livelock(self, now: int) -> None:
        if not self.in_flight:
            return
        oldest = next(iter(self.in_flight.values()))
        if now - oldest.inject_cycle <= self.config.livelock_bound:
            return
        for router in self.routers:
            owner = router.ina_owner
            if router.ina.state is InaState.ACQUIRE_OPERAND1 and owner is not None:
                raise DrainTimeoutError(
                    f"router {router.address} waits for the local operand of chain {owner.chain_id} "
                    f"round {owner.round} since before cycle {now - self.config.livelock_bound}"
                )
            for channels in router.inputs:
                for channel in channels:
                    if channel.buffer and channel.buffer[0].is_head:
                        packet = channel.buffer[0].packet
                        key = (packet.chain_id, packet.round)
                        if router.appends(packet) and key not in router.results:
                            raise DrainTimeoutError(
                                f"router {router.address} holds gather {packet.chain_id} round {packet.round} "
                                f"waiting for a result that was never produced"
                            )
        raise LivelockError(
            f"packet {oldest.packet_id} ({oldest.cls.value} {oldest.src}->{oldest.dst}) in flight for "
            f"{now - oldest.inject_cycle} cycles"
        )


def build_mesh(config: MeshConfig, event_log: TextIO | None = None) -> Network:
    """Create an idle N x N mesh.

    Raises:
        ConfigError: If the mesh is smaller than 2 x 2 or buffers have no depth
    """
    if config.size < 2 or config.buffer_depth < 1:
        raise ConfigError(f"invalid mesh: size {config.size}, buffer depth {config.buffer_depth}")
    network = Network(config, event_log)
    logging.debug(f"Built {config.size}x{config.size} mesh with {len(network.links)} links")
    return network


def run_until_drained(network: Network, source: TrafficSource | None = None) -> SimStats:
    """Step *network* until every packet is delivered and *source* has nothing left to release.

    Raises:
        LivelockError: If a flit exceeds the age bound or the source waits for events that cannot happen
    """
    while True:
        if source is not None:
            source.release(network)
        if network.drained() and (source is None or source.exhausted()):
            break
        limit = source.next_release() if source is not None else None
        if network.drained() and limit is None:
            raise LivelockError(f"traffic source stalled at cycle {network.cycle} with an empty network")
        before = network.cycle
        network.fast_forward(limit)
        if source is not None and network.cycle != before:
            source.release(network)
        events = network.step()
        if source is not None:
            source.on_events(network, events)
    network.stats.total_cycles = network.cycle
    return network.stats


class PacketTrace:
    """Traffic source that offers a fixed list of packets at their issue cycles, retrying on backpressure."""

    def __init__(self, entries: list[tuple[int, Packet]]):
        self._pending = deque(sorted(entries, key=lambda entry: (entry[0], entry[1].packet_id)))
        self._retry: list[Packet] = []

    def release(self, network: Network) -> None:
        now = network.cycle
        while self._pending and self._pending[0][0] <= now:
            self._retry.append(self._pending.popleft()[1])
        self._retry = [packet for packet in self._retry if not network.inject(packet, cycle=now)]

    def on_events(self, network: Network, events: list[NetEvent]) -> None:
        pass

    def next_release(self) -> int | None:
        return self._pending[0][0] if self._pending else None

    def exhausted(self) -> bool:
        return not self._pending and not self._retry
