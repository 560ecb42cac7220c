"""Weight-stationary and output-stationary traffic generation.

A :class:`Schedule` is a list of rounds.  Each round holds trace events (packets to inject) and compute tasks (PE
work producing psums), linked by dependencies: an event is released once the packets and tasks it lists under
``after`` have completed, optionally only after the round's compute barrier.  The generators compute every psum
value from deterministic synthetic tensors, so the values a simulation gathers can be checked against
:func:`reference_conv`.

Weight-stationary mapping: a filter of P# parts occupies P# adjacent rows of one column (south to north), giving
⌊N/P#⌋ row blocks per column and N·E·⌊N/P#⌋ filter lanes per round.  (filter, pixel) items are dealt to lanes
group-major: a group of N·E filters sweeps every output pixel before the next group starts, so a lane keeps its
filter for many rounds and the round count equals the closed-form rounds model exactly.
"""

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from inasim.analytic import DEFAULT_MEMORY_BITS, DEFAULT_PRECISION, pe_count
from inasim.config import MeshConfig
from inasim.exceptions import ConfigError, UnmappableLayerError
from inasim.layers import LayerShape
from inasim.packet import WORD_MASK, NodeAddress, Packet, PacketClass, flit_count

WS_INA = "ws_ina"
WS_PLAIN = "ws_plain"
OS_GATHER = "os_gather"
CHAIN_INA = "chain_ina"
CHAIN_PLAIN = "chain_plain"

Item = tuple[int, int]  # (filter, output pixel)


# ============================================================================
# Weight partitioning
# ============================================================================


@dataclass(frozen=True)
class PartRange:
    start: int
    stop: int

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class Lane:
    """One filter slot of a round: a mesh column, a row block within it and a PE index."""

    column: int
    block: int
    pe: int
    nodes: tuple[NodeAddress, ...]

    @property
    def initiator(self) -> NodeAddress:
        return self.nodes[0]


@dataclass(frozen=True)
class PartitionPlan:
    """How one filter's C·R·R weights are spread over adjacent PEs of a column."""

    layer: LayerShape
    part_size: int
    parts: tuple[PartRange, ...]
    mesh_size: int
    pes: int

    @property
    def pe_count(self) -> int:
        return len(self.parts)

    @property
    def blocks(self) -> int:
        """Row blocks (chains) per column."""
        return self.mesh_size // self.pe_count

    @property
    def lanes_per_round(self) -> int:
        return self.blocks * self.mesh_size * self.pes

    def result_row(self, block: int) -> int:
        return block * self.pe_count + self.pe_count - 1

    def lane(self, index: int) -> Lane:
        slot, pe = divmod(index, self.pes)
        block, column = divmod(slot, self.mesh_size)
        first_row = block * self.pe_count
        nodes = tuple(NodeAddress(column, first_row + i) for i in range(self.pe_count))
        return Lane(column, block, pe, nodes)

    def placement(self, lane_index: int) -> tuple[tuple[NodeAddress, PartRange], ...]:
        """Ordered (node, weight range) pairs of the filter held by a lane."""
        return tuple(zip(self.lane(lane_index).nodes, self.parts, strict=True))

    def item_placement(self, filter_index: int, pixel: int) -> tuple[tuple[NodeAddress, PartRange], ...]:
        """Where the filter computing (filter, pixel) sits in the round that handles that pair."""
        layer = self.layer
        if not (0 <= filter_index < layer.filters and 0 <= pixel < layer.output_pixels):
            raise ValueError(f"no item ({filter_index}, {pixel}) in layer {layer.name}")
        width = self.mesh_size * self.pes
        full_groups = layer.filters // width
        group, offset = divmod(filter_index, width)
        if group < full_groups:
            k = group * width * layer.output_pixels + pixel * width + offset
        else:
            last = layer.filters - full_groups * width
            k = full_groups * width * layer.output_pixels + pixel * last + offset
        return self.placement(k % self.lanes_per_round)


def split_weights(
    layer: LayerShape,
    q: int = DEFAULT_PRECISION,
    mem: int = DEFAULT_MEMORY_BITS,
    mesh: MeshConfig | None = None,
) -> PartitionPlan:
    """Split a filter into P# parts of at most M/q elements, the last part taking the remainder.

    Raises:
        UnmappableLayerError: If the parts do not fit in one mesh column
    """
    mesh = mesh or MeshConfig()
    capacity = mem // q
    if capacity < 1:
        raise ConfigError(f"a PE with {mem} bits cannot hold a {q}-bit value")
    elements = layer.weight_elements
    count = pe_count(layer, q, mem)
    part_size = -(-elements // count)
    parts = tuple(PartRange(start, min(start + part_size, elements)) for start in range(0, elements, part_size))
    if len(parts) > mesh.size:
        raise UnmappableLayerError(layer.name, len(parts), mesh.size)
    return PartitionPlan(layer, part_size, parts, mesh.size, mesh.pes)


def ws_item(layer: LayerShape, group_width: int, k: int) -> Item | None:
    """The k-th (filter, pixel) pair in group-major order, or None past the end of the layer."""
    pixels = layer.output_pixels
    if k >= layer.filters * pixels:
        return None
    full_groups = layer.filters // group_width
    base = full_groups * group_width * pixels
    if k < base:
        group, rest = divmod(k, group_width * pixels)
        pixel, offset = divmod(rest, group_width)
        return group * group_width + offset, pixel
    last = layer.filters - full_groups * group_width
    pixel, offset = divmod(k - base, last)
    return full_groups * group_width + offset, pixel


# ============================================================================
# Synthetic payloads
# ============================================================================


class SyntheticTensors:
    """Seeded int8-range weight and input vectors for one layer.

    Row f of the weights and row p of the inputs are drawn from independent generators keyed by (seed, row), so
    any subset can be produced without materializing the whole layer.
    """

    def __init__(self, layer: LayerShape, seed: int = 0):
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        self.layer = layer
        self.seed = seed
        self._weights: dict[int, np.ndarray] = {}
        self._inputs: dict[int, np.ndarray] = {}

    def _row(self, cache: dict[int, np.ndarray], stream: int, index: int) -> np.ndarray:
        row = cache.get(index)
        if row is None:
            rng = np.random.default_rng([self.seed, stream, index])
            row = rng.integers(-128, 128, size=self.layer.weight_elements, dtype=np.int64)
            cache[index] = row
        return row

    def weights(self, filter_index: int) -> np.ndarray:
        return self._row(self._weights, 0, filter_index)

    def inputs(self, pixel: int) -> np.ndarray:
        return self._row(self._inputs, 1, pixel)

    def psum(self, item: Item | None, part: PartRange) -> int:
        if item is None:
            return 0
        w = self.weights(item[0])[part.start : part.stop]
        x = self.inputs(item[1])[part.start : part.stop]
        return int(np.dot(w, x)) & WORD_MASK

    def output(self, item: Item) -> int:
        return self.psum(item, PartRange(0, self.layer.weight_elements))

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Full (F x C·R·R) weight and (O² x C·R·R) input matrices."""
        weights = np.stack([self.weights(f) for f in range(self.layer.filters)])
        inputs = np.stack([self.inputs(p) for p in range(self.layer.output_pixels)])
        return weights, inputs


def reference_conv(weights: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Direct convolution oracle: out[f, p] = Σ_k W[f, k]·I[p, k] wrapped to 32 bits."""
    product = weights.astype(np.int64) @ inputs.astype(np.int64).T
    return (product & WORD_MASK).astype(np.uint32)


# ============================================================================
# Schedule
# ============================================================================


@dataclass(frozen=True)
class TraceEvent:
    """A packet to inject.

    ``cycle`` is the earliest release relative to the round start: 0 for streams and, for packets behind the
    compute barrier, the longest compute task of the round.  The packet is also held back until every id in
    ``after`` has completed (plus ``delay``) and, when ``barrier`` is set, until every PE of the round has its
    psums.  With ``accumulate`` the injected payload is the delivered payload of ``after[0]`` plus ``payload``.
    Stream packets travel on bus lane ``lane`` of their destination node.
    """

    packet_id: int
    round: int
    cycle: int
    src: NodeAddress
    dst: NodeAddress
    cls: PacketClass
    words: int
    flits: int
    chain_id: int | None = None
    payload: tuple[int, ...] = ()
    stops: tuple[NodeAddress, ...] = ()
    slot_words: int = 0
    merge_into: int | None = None
    after: tuple[int, ...] = ()
    delay: int = 0
    barrier: bool = False
    accumulate: bool = False
    label: str = ""
    lane: int = 0

    @property
    def node(self) -> NodeAddress:
        return self.src

    def to_packet(self, flit_width: int, payload: tuple[int, ...] | None = None) -> Packet:
        return Packet(
            packet_id=self.packet_id,
            cls=self.cls,
            src=self.src,
            dst=self.dst,
            words=self.words,
            payload=list(self.payload if payload is None else payload),
            chain_id=self.chain_id,
            round=self.round,
            stops=self.stops,
            merge_into=self.merge_into,
            slot_words=self.slot_words,
            flit_width=flit_width,
        )


@dataclass(frozen=True)
class ComputeTask:
    """PE work at one router: ``cycles`` after its inputs arrive, ``words`` (one per PE) are ready.

    The words go to the router's accumulation unit (``operand_chain``) or become the node's result for a row
    gather (``result_gather``); with ``accumulate_from`` they are first added to that packet's delivered payload.
    Only tasks with ``barrier_member`` set count toward the round's compute barrier.
    """

    task_id: int
    round: int
    node: NodeAddress
    cycles: int
    words: tuple[int, ...]
    after: tuple[int, ...] = ()
    accumulate_from: int | None = None
    operand_chain: int | None = None
    result_gather: int | None = None
    barrier_member: bool = True


@dataclass(frozen=True)
class Round:
    index: int
    events: tuple[TraceEvent, ...]
    computes: tuple[ComputeTask, ...]


@dataclass
class Schedule:
    """Generated traffic for one layer, mesh and mode.

    ``outputs`` maps each gather packet id to the (filter, pixel) pair of every payload word, None for idle PEs.
    ``total_items`` counts the (filter, pixel) outputs of the whole layer, ``simulated_items`` those the generated
    rounds compute.
    """

    layer: LayerShape | None
    mesh: MeshConfig
    mode: str
    seed: int
    total_rounds: int
    rounds: list[Round] = field(default_factory=list)
    volume_divisor: int = 1
    outputs: dict[int, tuple[Item | None, ...]] = field(default_factory=dict)
    total_items: int = 0
    simulated_items: int = 0

    @property
    def simulated_rounds(self) -> int:
        return len(self.rounds)

    @property
    def projection(self) -> Fraction:
        """Factor from the simulated rounds to the whole layer, by outputs computed (by rounds without outputs)."""
        if self.simulated_items:
            return Fraction(self.total_items, self.simulated_items)
        return Fraction(self.total_rounds, max(self.simulated_rounds, 1))

    @property
    def layer_name(self) -> str:
        return self.layer.name if self.layer is not None else "synthetic"

    def events(self) -> list[TraceEvent]:
        return sorted((e for r in self.rounds for e in r.events), key=lambda e: (e.round, e.cycle, e.packet_id))

    def computes(self) -> list[ComputeTask]:
        return [task for r in self.rounds for task in r.computes]


class _RoundBuilder:
    """Collects one round's events and tasks, handing out ids from a schedule-wide counter."""

    def __init__(self, schedule: Schedule, index: int, counter: list[int]):
        self.schedule = schedule
        self.index = index
        self.counter = counter
        self.events: list[TraceEvent] = []
        self.computes: list[ComputeTask] = []

    def _next_id(self) -> int:
        self.counter[0] += 1
        return self.counter[0] - 1

    def event(self, cls: PacketClass, src: NodeAddress, dst: NodeAddress, words: int, **kwargs) -> TraceEvent:
        width = self.schedule.mesh.flit_width
        event = TraceEvent(self._next_id(), self.index, 0, src, dst, cls, words, flit_count(words, width), **kwargs)
        self.events.append(event)
        return event

    def compute(self, node: NodeAddress, cycles: int, words: tuple[int, ...], **kwargs) -> ComputeTask:
        task = ComputeTask(self._next_id(), self.index, node, cycles, tuple(words), **kwargs)
        self.computes.append(task)
        return task

    def stream(self, node: NodeAddress, words: int, label: str, lane: int = 0) -> int:
        return self.event(PacketClass.STREAM, NodeAddress(0, node.y), node, words, label=label, lane=lane).packet_id

    def gather(self, row: int, gather_id: int, items: list[Item | None]) -> None:
        mesh = self.schedule.mesh
        stops = tuple(NodeAddress(x, row) for x in range(mesh.size))
        event = self.event(
            PacketClass.GATHER,
            stops[0],
            stops[-1],
            mesh.size * mesh.pes,
            chain_id=gather_id,
            stops=stops,
            slot_words=mesh.pes,
            barrier=True,
            label="gather",
        )
        self.schedule.outputs[event.packet_id] = tuple(items)

    def close(self) -> Round:
        longest = max((task.cycles for task in self.computes if task.barrier_member), default=0)
        events = tuple(replace(event, cycle=longest) if event.barrier else event for event in self.events)
        self.schedule.simulated_items += sum(
            item is not None for event in events for item in self.schedule.outputs.get(event.packet_id, ())
        )
        return Round(self.index, events, tuple(self.computes))


def _scaled(amount: int, divisor: int) -> int:
    return -(-amount // divisor)


def _capped(total: int, rounds_cap: int | None) -> int:
    return total if rounds_cap is None else min(total, rounds_cap)


def local_acc_cycles(mesh: MeshConfig) -> int:
    """PE-side accumulation of a received psum packet: one payload flit per ``local_acc_latency`` cycles."""
    return mesh.local_acc_latency * (flit_count(mesh.pes, mesh.flit_width) - 1)


# ============================================================================
# Weight-stationary traces
# ============================================================================


def gen_ws_trace(
    layer: LayerShape,
    mesh: MeshConfig,
    ina_enabled: bool,
    rounds_cap: int | None = None,
    q: int = DEFAULT_PRECISION,
    mem: int = DEFAULT_MEMORY_BITS,
    seed: int = 0,
    volume_divisor: int = 1,
) -> Schedule:
    """Generate the weight-stationary schedule of a layer.

    Each round streams, over the node's first bus lane, one weight packet carrying the parts of every PE whose
    filter changed and the input vector part the node's PEs share, lets each PE compute its part, accumulates every
    lane's parts up its column (one accumulating chain packet with INA, a unicast/accumulate/re-inject sequence
    without) and collects the result rows with gather packets running east.

    Raises:
        UnmappableLayerError: If P# exceeds the mesh size
    """
    plan = split_weights(layer, q, mem, mesh)
    size, pes = mesh.size, mesh.pes
    lanes = plan.lanes_per_round
    total = math.ceil(layer.filters * layer.output_pixels / lanes)
    mode = WS_INA if ina_enabled else WS_PLAIN
    schedule = Schedule(
        layer, mesh, mode, seed, total, volume_divisor=volume_divisor, total_items=layer.filters * layer.output_pixels
    )
    tensors = SyntheticTensors(layer, seed)
    counter = [0]
    resident: dict[int, int] = {}

    for r in range(_capped(total, rounds_cap)):
        builder = _RoundBuilder(schedule, r, counter)
        items = [ws_item(layer, size * pes, r * lanes + lane) for lane in range(lanes)]
        for block in range(plan.blocks):
            block_items = items[block * size * pes : (block + 1) * size * pes]
            if not any(block_items):
                continue
            result_row = plan.result_row(block)
            for column in range(size):
                first = (block * size + column) * pes
                lane_items = items[first : first + pes]
                if not any(lane_items):
                    builder.compute(NodeAddress(column, result_row), 0, (0,) * pes, result_gather=block)
                    continue
                _ws_column(builder, plan, tensors, block, column, first, lane_items, resident, ina_enabled)
            builder.gather(result_row, block, block_items)
        schedule.rounds.append(builder.close())
    return schedule


def _ws_column(builder, plan, tensors, block, column, first_lane, lane_items, resident, ina_enabled) -> None:
    """Streams, compute tasks and psum accumulation for the lanes of one column in one row block."""
    mesh = builder.schedule.mesh
    divisor = builder.schedule.volume_divisor
    parts = plan.pe_count
    changed = [item is not None and resident.get(first_lane + e) != item[0] for e, item in enumerate(lane_items)]
    pixels = {item[1] for item in lane_items if item is not None}
    for e, item in enumerate(lane_items):
        if item is not None:
            resident[first_lane + e] = item[0]

    nodes = plan.lane(first_lane).nodes
    active = [item for item in lane_items if item is not None]
    chain_id = active[0][0] * plan.layer.output_pixels + active[0][1]
    psums = []
    for i, (node, part) in enumerate(zip(nodes, plan.parts, strict=True)):
        streams = []
        if any(changed):
            streams.append(builder.stream(node, _scaled(sum(changed) * part.size, divisor), "weights"))
        streams.append(builder.stream(node, _scaled(len(pixels) * part.size, divisor), "inputs"))
        words = tuple(tensors.psum(item, part) for item in lane_items)
        psums.append(words)
        builder.compute(
            node,
            _scaled(part.size, divisor),
            words,
            after=tuple(streams),
            operand_chain=chain_id if ina_enabled and i > 0 else None,
            result_gather=block if parts == 1 else None,
        )

    if parts == 1:
        return
    if ina_enabled:
        builder.event(
            PacketClass.INA_CHAIN,
            nodes[0],
            nodes[-1],
            mesh.pes,
            chain_id=chain_id,
            payload=psums[0],
            stops=nodes[1:],
            merge_into=block,
            barrier=True,
            label="chain",
        )
        return
    previous = None
    for i in range(1, parts):
        if previous is None:
            hop = builder.event(
                PacketClass.UNICAST, nodes[0], nodes[1], mesh.pes, chain_id=chain_id, payload=psums[0], barrier=True,
                label="psum",
            )
        else:
            hop = builder.event(
                PacketClass.UNICAST,
                nodes[i - 1],
                nodes[i],
                mesh.pes,
                chain_id=chain_id,
                payload=psums[i - 1],
                after=(previous,),
                delay=local_acc_cycles(mesh),
                barrier=True,
                accumulate=True,
                label="psum",
            )
        previous = hop.packet_id
    builder.compute(
        nodes[-1],
        local_acc_cycles(mesh),
        psums[-1],
        after=(previous,),
        accumulate_from=previous,
        result_gather=block,
        barrier_member=False,
    )


# ============================================================================
# Output-stationary traces
# ============================================================================


def gen_os_trace(
    layer: LayerShape,
    mesh: MeshConfig,
    rounds_cap: int | None = None,
    seed: int = 0,
    volume_divisor: int = 1,
) -> Schedule:
    """Generate the output-stationary schedule of a layer.

    (filter, pixel) outputs are dealt round-robin to the N·N·E PEs in filter-major order.  Every round co-streams
    each PE's full weight and input vectors as two packets on the PE's own bus lane, the PE accumulates its output
    locally and row gathers collect the results.
    """
    pes_total = mesh.size * mesh.size * mesh.pes
    pixels = layer.output_pixels
    items_total = layer.filters * pixels
    total = math.ceil(items_total / pes_total)
    schedule = Schedule(layer, mesh, OS_GATHER, seed, total, volume_divisor=volume_divisor, total_items=items_total)
    tensors = SyntheticTensors(layer, seed)
    elements = layer.weight_elements
    counter = [0]

    for r in range(_capped(total, rounds_cap)):
        builder = _RoundBuilder(schedule, r, counter)
        for y in range(mesh.size):
            row_items: list[Item | None] = []
            for x in range(mesh.size):
                first = r * pes_total + (y * mesh.size + x) * mesh.pes
                node_items = [divmod(k, pixels) if k < items_total else None for k in range(first, first + mesh.pes)]
                row_items.extend(node_items)
            if not any(row_items):
                continue
            for x in range(mesh.size):
                node = NodeAddress(x, y)
                node_items = row_items[x * mesh.pes : (x + 1) * mesh.pes]
                if not any(node_items):
                    builder.compute(node, 0, (0,) * mesh.pes, result_gather=y)
                    continue
                streams = []
                for pe, item in enumerate(node_items):
                    if item is not None:
                        streams.append(builder.stream(node, _scaled(elements, volume_divisor), "weights", lane=pe))
                        streams.append(builder.stream(node, _scaled(elements, volume_divisor), "inputs", lane=pe))
                words = tuple(tensors.output(item) if item is not None else 0 for item in node_items)
                builder.compute(node, _scaled(elements, volume_divisor), words, after=tuple(streams), result_gather=y)
            builder.gather(y, y, row_items)
        schedule.rounds.append(builder.close())
    return schedule


# ============================================================================
# Synthetic accumulation chain
# ============================================================================


def gen_chain_trace(
    mesh: MeshConfig,
    intermediates: int,
    ina_enabled: bool,
    column: int = 0,
    operands: list[tuple[int, ...]] | None = None,
) -> Schedule:
    """A single chain up one column: initiator, *intermediates* accumulating nodes and a plain terminal.

    With INA one chain packet carries the initiator's psum through every intermediate router; without it each
    intermediate ejects, adds its operand locally and re-injects.  The terminal receives the total either way.

    Args:
        mesh: Mesh configuration; the chain needs intermediates + 2 rows
        intermediates: Number of accumulating nodes between initiator and terminal
        ina_enabled: Accumulate in the routers instead of the PEs
        column: Mesh column the chain runs up
        operands: Psum words of the initiator followed by each intermediate; defaults to small constants
    """
    if intermediates < 1 or intermediates + 2 > mesh.size:
        raise ConfigError(f"a chain with {intermediates} intermediates does not fit a {mesh.size}-row column")
    nodes = tuple(NodeAddress(column, y) for y in range(intermediates + 2))
    if operands is None:
        operands = [tuple(i + 1 for _ in range(mesh.pes)) for i in range(intermediates + 1)]
    if len(operands) != intermediates + 1:
        raise ConfigError(f"expected {intermediates + 1} operand vectors, got {len(operands)}")
    mode = CHAIN_INA if ina_enabled else CHAIN_PLAIN
    schedule = Schedule(None, mesh, mode, 0, 1)
    builder = _RoundBuilder(schedule, 0, [0])
    chain_id = 0
    if ina_enabled:
        for node, words in zip(nodes[1:-1], operands[1:], strict=True):
            builder.compute(node, 0, words, operand_chain=chain_id)
        builder.event(
            PacketClass.INA_CHAIN, nodes[0], nodes[-1], mesh.pes, chain_id=chain_id, payload=operands[0],
            stops=nodes[1:-1], label="chain",
        )
    else:
        previous = builder.event(
            PacketClass.UNICAST, nodes[0], nodes[1], mesh.pes, chain_id=chain_id, payload=operands[0], label="psum"
        ).packet_id
        for i in range(1, intermediates + 1):
            previous = builder.event(
                PacketClass.UNICAST,
                nodes[i],
                nodes[i + 1],
                mesh.pes,
                chain_id=chain_id,
                payload=operands[i],
                after=(previous,),
                delay=local_acc_cycles(mesh),
                accumulate=True,
                label="psum",
            ).packet_id
    schedule.rounds.append(builder.close())
    return schedule


# ============================================================================
# Volume accounting
# ============================================================================


@dataclass(frozen=True)
class ClassVolume:
    packets: int = 0
    flits: int = 0
    words: int = 0


@dataclass(frozen=True)
class TraceVolume:
    """Exact traffic totals of a schedule.

    A chain packet that merges into its destination router is injected but never ejected.
    """

    classes: dict[str, ClassVolume]
    ni_inject: int
    ni_eject: int

    @property
    def ni_events(self) -> int:
        return self.ni_inject + self.ni_eject

    @property
    def packets(self) -> int:
        return sum(v.packets for v in self.classes.values())

    @property
    def flits(self) -> int:
        return sum(v.flits for v in self.classes.values())

    @property
    def words(self) -> int:
        return sum(v.words for v in self.classes.values())


def trace_volume(schedule: Schedule) -> TraceVolume:
    totals = {cls.value: [0, 0, 0] for cls in PacketClass}
    merged = 0
    events = schedule.events()
    for event in events:
        entry = totals[event.cls.value]
        entry[0] += 1
        entry[1] += event.flits
        entry[2] += event.words
        if event.merge_into is not None and schedule.mode == WS_INA:
            merged += 1
    classes = {name: ClassVolume(*values) for name, values in totals.items()}
    return TraceVolume(classes, len(events), len(events) - merged)
