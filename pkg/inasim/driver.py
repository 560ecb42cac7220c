"""Replay of generated schedules on the cycle-accurate network."""

import logging
from dataclasses import dataclass, field
from typing import TextIO

from inasim.config import MeshConfig
from inasim.dataflow import ComputeTask, Round, Schedule, SyntheticTensors, TraceEvent
from inasim.exceptions import UsageError
from inasim.ina import PendingOperand
from inasim.network import NetEvent, Network, build_mesh, run_until_drained
from inasim.packet import WORD_MASK, Packet, PacketClass
from inasim.stats import SimStats


def _add_words(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if len(a) != len(b):
        raise UsageError(f"cannot add {len(a)} words to {len(b)} words")
    return tuple((x + y) & WORD_MASK for x, y in zip(a, b, strict=True))


@dataclass
class RunResult:
    """Outcome of one simulated schedule."""

    stats: SimStats
    gathered: dict[int, tuple[int, ...]] = field(default_factory=dict)
    delivered: dict[int, tuple[int, ...]] = field(default_factory=dict)
    round_spans: list[tuple[int, int]] = field(default_factory=list)


class _RoundState:
    def __init__(self, round_: Round, start: int):
        self.round = round_
        self.start = start
        self.tasks: list[ComputeTask] = list(round_.computes)
        self.events: list[TraceEvent] = list(round_.events)
        self.members = sum(task.barrier_member for task in round_.computes)
        self.member_ready: list[int] = []
        self.barrier: int | None = start if self.members == 0 else None
        self.outstanding: set[int] = set()
        self.last_ready = start

    @property
    def done(self) -> bool:
        return not self.tasks and not self.events and not self.outstanding


class ScheduleDriver:
    """Traffic source that releases a :class:`Schedule` round by round.

    Rounds run back to back: a round ends once every PE has handed its psums to its router and every packet except
    the row gathers has been delivered, and the next round starts in that cycle.  Gathers drain while the next round
    streams and computes.  Within a round every task and event waits for its dependencies; completion cycles of
    compute tasks are known as soon as their inputs are, so results and operands are handed to the routers ahead of
    time.  Stream packets travel on the row streaming buses, everything else through the mesh.
    """

    def __init__(self, schedule: Schedule):
        self.schedule = schedule
        self.result = RunResult(SimStats())
        self._rounds = list(reversed(schedule.rounds))
        self._current: _RoundState | None = None
        self._completed: dict[int, int] = {}
        self._packets: dict[int, Packet] = {}
        self._next: int | None = None
        self._dirty = True

    # ========================================================================
    # TrafficSource protocol
    # ========================================================================

    def release(self, network: Network) -> None:
        now = network.cycle
        if not self._dirty and (self._next is None or self._next > now):
            return
        self._dirty = False
        self._next = None
        while True:
            if self._current is None:
                if not self._rounds:
                    return
                self._current = _RoundState(self._rounds.pop(), now)
                logging.debug(f"Round {self._current.round.index} starts at cycle {now}")
            self._advance(self._current, network, now)
            if not self._current.done or self._current.last_ready > now:
                if self._current.done:
                    self._wake(self._current.last_ready)
                return
            self.result.round_spans.append((self._current.start, now))
            self._current = None

    def on_events(self, network: Network, events: list[NetEvent]) -> None:
        for event in events:
            if event.kind not in ("DELIVER", "MERGE"):
                continue
            packet = self._packets.pop(event.ref, None)
            if packet is None:
                continue
            self._completed[event.ref] = event.cycle
            self.result.delivered[event.ref] = tuple(packet.payload)
            if event.ref in self.schedule.outputs:
                self.result.gathered[event.ref] = tuple(packet.payload)
            if self._current is not None:
                self._current.outstanding.discard(event.ref)
            self._dirty = True

    def next_release(self) -> int | None:
        return self._next

    def exhausted(self) -> bool:
        return self._current is None and not self._rounds

    # ========================================================================
    # Dependency resolution
    # ========================================================================

    def _wake(self, cycle: int) -> None:
        self._next = cycle if self._next is None else min(self._next, cycle)

    def _ready(self, after: tuple[int, ...]) -> list[int] | None:
        cycles = [self._completed.get(dep) for dep in after]
        return None if None in cycles else cycles

    def _advance(self, state: _RoundState, network: Network, now: int) -> None:
        progress = True
        while progress:
            progress = self._schedule_tasks(state, network)
        for event in list(state.events):
            deps = self._ready(event.after)
            if deps is None or (event.barrier and state.barrier is None):
                continue
            release_at = state.start + event.cycle
            if deps:
                release_at = max(release_at, max(deps) + event.delay)
            if event.barrier:
                release_at = max(release_at, state.barrier)
            if release_at > now:
                self._wake(release_at)
                continue
            payload = event.payload
            if event.accumulate:
                payload = _add_words(self.result.delivered[event.after[0]], event.payload)
            packet = event.to_packet(network.config.flit_width, payload)
            if event.cls is PacketClass.STREAM:
                network.stream(packet, event.lane, cycle=now)
            elif not network.inject(packet, cycle=now):
                self._wake(now + 1)
                continue
            state.events.remove(event)
            if event.cls is not PacketClass.GATHER:
                state.outstanding.add(event.packet_id)
            self._packets[event.packet_id] = packet

    def _schedule_tasks(self, state: _RoundState, network: Network) -> bool:
        progress = False
        for task in list(state.tasks):
            deps = self._ready(task.after)
            if deps is None:
                continue
            ready = max([state.start, *deps]) + task.cycles
            words = task.words
            if task.accumulate_from is not None:
                words = _add_words(self.result.delivered[task.accumulate_from], words)
            handoff = ready + network.config.ni_inject_latency
            if task.operand_chain is not None:
                operand = PendingOperand(task.operand_chain, words, state.round.index)
                network.register_operand(task.node, operand, handoff)
            if task.result_gather is not None:
                network.register_result(task.node, task.result_gather, state.round.index, words, handoff)
            self._completed[task.task_id] = ready
            state.last_ready = max(state.last_ready, ready)
            if task.barrier_member:
                state.member_ready.append(ready)
            state.tasks.remove(task)
            progress = True
        if state.barrier is None and len(state.member_ready) == state.members:
            state.barrier = max(state.member_ready)
        return progress

    def run(self, network: Network) -> RunResult:
        self.result.stats = run_until_drained(network, self)
        if not self.exhausted():
            raise UsageError("network drained before the schedule finished")
        return self.result


def simulate(schedule: Schedule, config: MeshConfig | None = None, event_log: TextIO | None = None) -> RunResult:
    """Build a mesh for *schedule* and run it to completion."""
    config = config or schedule.mesh
    if schedule.mode == "ws_ina" and not config.ina_enabled:
        raise UsageError("an accumulating schedule needs a mesh with in-network accumulation enabled")
    network = build_mesh(config, event_log)
    result = ScheduleDriver(schedule).run(network)
    logging.info(
        f"{schedule.layer_name} {schedule.mode}: {schedule.simulated_rounds} round(s) in {result.stats.total_cycles}"
        " cycles"
    )
    return result


def expected_outputs(schedule: Schedule) -> dict[int, tuple[int, ...]]:
    """Gather payloads a correct run must deliver, from the direct convolution of the synthetic tensors."""
    if schedule.layer is None:
        return {}
    tensors = SyntheticTensors(schedule.layer, schedule.seed)
    return {
        packet_id: tuple(0 if item is None else tensors.output(item) for item in items)
        for packet_id, items in schedule.outputs.items()
    }
