"""Tests for schedule generation in inasim.dataflow."""

from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from inasim.analytic import MeshShape, ina_rounds_multi_pe, rounds_for
from inasim.dataflow import (
    CHAIN_INA,
    CHAIN_PLAIN,
    OS_GATHER,
    WS_INA,
    WS_PLAIN,
    ClassVolume,
    PartRange,
    SyntheticTensors,
    gen_chain_trace,
    gen_os_trace,
    gen_ws_trace,
    local_acc_cycles,
    reference_conv,
    split_weights,
    trace_volume,
    ws_item,
)
from inasim.exceptions import ConfigError, UnmappableLayerError
from inasim.layers import LayerShape, load_workload
from inasim.packet import WORD_MASK, NodeAddress, PacketClass

# Two 32-bit weights per filter on 32-bit PEs: every filter is split over two PEs.
SPLIT_MEMORY = 32


def labels(schedule, round_index=None):
    return Counter(
        event.label for event in schedule.events() if round_index is None or event.round == round_index
    )


class TestSplitWeights:
    def test_last_part_takes_remainder(self, toy_layer):
        plan = split_weights(toy_layer(channels=10), q=32, mem=128)
        assert plan.pe_count == 3
        assert plan.part_size == 4
        assert plan.parts == (PartRange(0, 4), PartRange(4, 8), PartRange(8, 10))
        assert [part.size for part in plan.parts] == [4, 4, 2]

    def test_single_part(self, toy_layer):
        plan = split_weights(toy_layer(channels=10))
        assert plan.parts == (PartRange(0, 10),)

    def test_too_many_parts(self, toy_layer, small_mesh):
        with pytest.raises(UnmappableLayerError) as excinfo:
            split_weights(toy_layer(channels=10), q=32, mem=128, mesh=small_mesh(size=2))
        assert excinfo.value.parts == 3

    def test_memory_below_one_value(self, toy_layer):
        with pytest.raises(ConfigError):
            split_weights(toy_layer(), q=32, mem=16)

    def test_lanes(self, toy_layer, small_mesh):
        plan = split_weights(toy_layer(), q=32, mem=SPLIT_MEMORY, mesh=small_mesh(pes=2))
        assert (plan.pe_count, plan.blocks, plan.lanes_per_round) == (2, 2, 16)
        lane = plan.lane(5)
        assert (lane.column, lane.block, lane.pe) == (2, 0, 1)
        assert lane.nodes == (NodeAddress(2, 0), NodeAddress(2, 1))
        assert plan.lane(9).nodes == (NodeAddress(0, 2), NodeAddress(0, 3))
        assert plan.lane(9).initiator == NodeAddress(0, 2)
        assert plan.result_row(1) == 3


class TestItemOrder:
    def test_group_major(self):
        layer = LayerShape("T", kernel=1, channels=2, filters=5, output=2)
        order = [ws_item(layer, 2, k) for k in range(layer.filters * layer.output_pixels + 1)]
        assert order[:4] == [(0, 0), (1, 0), (0, 1), (1, 1)]
        assert order[8:10] == [(2, 0), (3, 0)]
        assert order[16:20] == [(4, 0), (4, 1), (4, 2), (4, 3)]
        assert order[-1] is None

    @pytest.mark.parametrize(("filters", "output", "width"), [(5, 2, 2), (7, 3, 4), (3, 1, 8), (8, 2, 4)])
    def test_each_item_once(self, filters, output, width):
        layer = LayerShape("T", kernel=1, channels=1, filters=filters, output=output)
        items = [ws_item(layer, width, k) for k in range(filters * output * output)]
        assert sorted(items) == [(f, p) for f in range(filters) for p in range(output * output)]

    @pytest.mark.parametrize("filters", [7, 19])
    def test_item_placement_matches_schedule_order(self, small_mesh, filters):
        layer = LayerShape("T", kernel=1, channels=2, filters=filters, output=2)
        plan = split_weights(layer, q=32, mem=SPLIT_MEMORY, mesh=small_mesh(pes=2))
        width = 4 * 2
        for k in range(layer.filters * layer.output_pixels):
            f, p = ws_item(layer, width, k)
            assert plan.item_placement(f, p) == plan.placement(k % plan.lanes_per_round)

    def test_item_placement_range(self, toy_layer):
        plan = split_weights(toy_layer())
        with pytest.raises(ValueError, match="no item"):
            plan.item_placement(2, 0)


class TestSyntheticTensors:
    def test_deterministic_and_bounded(self, toy_layer):
        layer = toy_layer(channels=50)
        first, second = SyntheticTensors(layer, seed=3), SyntheticTensors(layer, seed=3)
        assert np.array_equal(first.weights(1), second.weights(1))
        assert not np.array_equal(first.weights(1), SyntheticTensors(layer, seed=4).weights(1))
        assert first.inputs(0).min() >= -128 and first.inputs(0).max() < 128

    def test_parts_sum_to_output(self, toy_layer):
        layer = toy_layer(channels=30, filters=3, output=2)
        tensors = SyntheticTensors(layer, seed=11)
        parts = split_weights(layer, q=32, mem=320).parts
        for f in range(3):
            for p in range(4):
                total = sum(tensors.psum((f, p), part) for part in parts) & WORD_MASK
                assert total == tensors.output((f, p))

    def test_reference_conv(self, toy_layer):
        layer = toy_layer(channels=6, filters=3, output=2)
        tensors = SyntheticTensors(layer, seed=5)
        expected = reference_conv(*tensors.matrices())
        assert expected.shape == (3, 4)
        assert expected.dtype == np.uint32
        for f in range(3):
            for p in range(4):
                assert expected[f, p] == tensors.output((f, p))

    def test_idle_psum(self, toy_layer):
        assert SyntheticTensors(toy_layer()).psum(None, PartRange(0, 2)) == 0

    def test_negative_seed(self, toy_layer):
        with pytest.raises(ConfigError, match="seed"):
            SyntheticTensors(toy_layer(), seed=-1)


class TestWeightStationary:
    def test_toy_layer_with_accumulation(self, toy_layer, small_mesh):
        schedule = gen_ws_trace(toy_layer(), small_mesh(), ina_enabled=True, mem=SPLIT_MEMORY)
        assert schedule.mode == WS_INA
        assert (schedule.total_rounds, schedule.simulated_rounds) == (1, 1)
        assert labels(schedule) == Counter(weights=4, inputs=4, chain=2, gather=1)
        assert len(schedule.computes()) == 6

        chains = [event for event in schedule.events() if event.cls is PacketClass.INA_CHAIN]
        assert [(c.src, c.dst, c.stops) for c in chains] == [
            (NodeAddress(0, 0), NodeAddress(0, 1), (NodeAddress(0, 1),)),
            (NodeAddress(1, 0), NodeAddress(1, 1), (NodeAddress(1, 1),)),
        ]
        assert all(c.merge_into == 0 and c.barrier for c in chains)

        (gather,) = [event for event in schedule.events() if event.cls is PacketClass.GATHER]
        assert gather.src == NodeAddress(0, 1) and gather.dst == NodeAddress(3, 1)
        assert schedule.outputs[gather.packet_id] == ((0, 0), (1, 0), None, None)

    def test_toy_layer_without_accumulation(self, toy_layer, small_mesh):
        schedule = gen_ws_trace(toy_layer(), small_mesh(), ina_enabled=False, mem=SPLIT_MEMORY)
        assert schedule.mode == WS_PLAIN
        assert labels(schedule) == Counter(weights=4, inputs=4, psum=2, gather=1)
        finals = [task for task in schedule.computes() if task.accumulate_from is not None]
        assert len(finals) == 2
        assert all(not task.barrier_member and task.result_gather == 0 for task in finals)

    def test_barrier_packets_release_after_longest_task(self, toy_layer, small_mesh):
        layer = toy_layer(channels=6)
        schedule = gen_ws_trace(layer, small_mesh(), ina_enabled=True, mem=3 * 32)
        longest = max(task.cycles for task in schedule.computes() if task.barrier_member)
        assert longest == 3
        for event in schedule.events():
            assert event.cycle == (longest if event.barrier else 0)

    def test_streams_enter_from_west_edge(self, toy_layer, small_mesh):
        schedule = gen_ws_trace(toy_layer(filters=6, output=2), small_mesh(), ina_enabled=True, mem=SPLIT_MEMORY)
        for event in schedule.events():
            if event.cls is PacketClass.STREAM:
                assert event.src == NodeAddress(0, event.dst.y)

    def test_resident_weights_are_not_resent(self, small_mesh):
        layer = LayerShape("T", kernel=1, channels=2, filters=1, output=2)
        schedule = gen_ws_trace(layer, small_mesh(size=2), ina_enabled=True, mem=SPLIT_MEMORY)
        assert schedule.total_rounds == 2
        assert labels(schedule, 0)["weights"] == 4
        assert labels(schedule, 1)["weights"] == 0
        assert labels(schedule, 1)["inputs"] == 4

    def test_single_part_layer_has_no_chains(self, toy_layer, small_mesh):
        schedule = gen_ws_trace(toy_layer(), small_mesh(), ina_enabled=True)
        assert labels(schedule) == Counter(weights=2, inputs=2, gather=1)
        assert all(task.result_gather == 0 for task in schedule.computes())

    def test_rounds_cap(self, small_mesh):
        layer = LayerShape("T", kernel=1, channels=2, filters=1, output=3)
        schedule = gen_ws_trace(layer, small_mesh(size=2), ina_enabled=True, rounds_cap=2, mem=SPLIT_MEMORY)
        assert (schedule.total_rounds, schedule.simulated_rounds) == (5, 2)

    def test_volume_divisor(self, toy_layer, small_mesh):
        layer = toy_layer(channels=64)
        full = gen_ws_trace(layer, small_mesh(), ina_enabled=True)
        scaled = gen_ws_trace(layer, small_mesh(), ina_enabled=True, volume_divisor=16)
        assert [e.words for e in full.events() if e.label == "inputs"] == [64, 64]
        assert [e.words for e in scaled.events() if e.label == "inputs"] == [4, 4]
        assert [t.cycles for t in scaled.computes()][:2] == [4, 4]

    def test_unmappable(self, small_mesh):
        layer = LayerShape("WIDE", kernel=1, channels=3000, filters=1, output=1)
        with pytest.raises(UnmappableLayerError):
            gen_ws_trace(layer, small_mesh(size=2), ina_enabled=True)

    @pytest.mark.parametrize("pes", [1, 2])
    def test_round_count_matches_closed_form(self, pes, small_mesh):
        mesh = small_mesh(size=8, pes=pes)
        for layer in load_workload("alexnet").layers[1:]:
            schedule = gen_ws_trace(layer, mesh, ina_enabled=True, rounds_cap=1)
            plan = ina_rounds_multi_pe(layer, MeshShape(8, pes))
            assert schedule.total_rounds == plan.rounds
            assert schedule.simulated_rounds == 1

    def test_alexnet_conv2(self, small_mesh):
        conv2 = load_workload("alexnet").layer("CONV2")
        assert gen_ws_trace(conv2, small_mesh(size=8), True, rounds_cap=1).total_rounds == 4374
        assert gen_ws_trace(conv2, small_mesh(size=8, pes=2), True, rounds_cap=1).total_rounds == 2187

    @pytest.mark.parametrize(("pes", "latency", "cycles"), [(1, 1, 1), (4, 1, 1), (8, 1, 2), (8, 3, 6), (8, 0, 0)])
    def test_local_accumulation_per_flit(self, small_mesh, pes, latency, cycles):
        mesh = small_mesh(pes=pes, local_acc_latency=latency)
        assert local_acc_cycles(mesh) == cycles
        schedule = gen_chain_trace(mesh, 1, ina_enabled=False)
        assert [e.delay for e in schedule.events()] == [0, cycles]

    def test_projection_by_items(self, small_mesh):
        layer = LayerShape("T", kernel=1, channels=2, filters=1, output=3)
        schedule = gen_ws_trace(layer, small_mesh(size=2), ina_enabled=True, rounds_cap=2, mem=SPLIT_MEMORY)
        assert (schedule.total_items, schedule.simulated_items) == (9, 4)
        assert schedule.projection == Fraction(9, 4)

    def test_ids_unique(self, toy_layer, small_mesh):
        schedule = gen_ws_trace(toy_layer(filters=9, output=2), small_mesh(), ina_enabled=False, mem=SPLIT_MEMORY)
        ids = [e.packet_id for e in schedule.events()] + [t.task_id for t in schedule.computes()]
        assert len(ids) == len(set(ids))


class TestOutputStationary:
    def test_toy_layer(self, small_mesh):
        layer = LayerShape("T", kernel=1, channels=3, filters=3, output=2)
        schedule = gen_os_trace(layer, small_mesh(size=2))
        assert schedule.mode == OS_GATHER
        assert (schedule.total_rounds, schedule.simulated_rounds) == (3, 3)
        assert labels(schedule, 0) == Counter(weights=4, inputs=4, gather=2)
        first_gather = next(e for e in schedule.events() if e.cls is PacketClass.GATHER)
        assert schedule.outputs[first_gather.packet_id] == ((0, 0), (0, 1))
        assert all(e.words == 3 for e in schedule.events() if e.cls is PacketClass.STREAM)
        assert (schedule.total_items, schedule.simulated_items, schedule.projection) == (12, 12, 1)

    def test_partial_round(self, small_mesh):
        layer = LayerShape("T", kernel=1, channels=3, filters=1, output=1)
        schedule = gen_os_trace(layer, small_mesh(size=2))
        assert labels(schedule) == Counter(weights=1, inputs=1, gather=1)
        assert len(schedule.computes()) == 2
        idle = [task for task in schedule.computes() if task.cycles == 0]
        assert idle[0].node == NodeAddress(1, 0)

    def test_each_pe_streams_on_its_own_lane(self, small_mesh):
        layer = LayerShape("T", kernel=1, channels=4, filters=2, output=2)
        schedule = gen_os_trace(layer, small_mesh(size=2, pes=2))
        streams = [e for e in schedule.events() if e.dst == NodeAddress(0, 0) and e.cls is PacketClass.STREAM]
        assert sorted((e.lane, e.label) for e in streams) == [
            (0, "inputs"),
            (0, "weights"),
            (1, "inputs"),
            (1, "weights"),
        ]
        assert all(e.words == 4 for e in streams)
        (task,) = [t for t in schedule.computes() if t.node == NodeAddress(0, 0)]
        assert set(task.after) == {e.packet_id for e in streams}

    def test_stream_size_does_not_grow_with_pes(self, small_mesh):
        layer = load_workload("alexnet").layer("CONV2")
        sizes = set()
        for pes in (1, 2, 4, 8):
            schedule = gen_os_trace(layer, small_mesh(size=4, pes=pes), rounds_cap=1, volume_divisor=16)
            sizes |= {e.words for e in schedule.events() if e.cls is PacketClass.STREAM}
        assert sizes == {-(-layer.weight_elements // 16)}

    def test_round_count(self, small_mesh):
        layer = load_workload("alexnet").layer("CONV1")
        schedule = gen_os_trace(layer, small_mesh(size=8), rounds_cap=1)
        assert schedule.total_rounds == -(-layer.filters * layer.output_pixels // 64)

    def test_no_chains(self, small_mesh, toy_layer):
        schedule = gen_os_trace(toy_layer(filters=9, output=3), small_mesh(pes=2))
        assert {event.cls for event in schedule.events()} == {PacketClass.STREAM, PacketClass.GATHER}


class TestChainTrace:
    def test_with_accumulation(self, small_mesh):
        schedule = gen_chain_trace(small_mesh(), 2, ina_enabled=True)
        assert schedule.mode == CHAIN_INA
        assert schedule.layer_name == "synthetic"
        (chain,) = schedule.events()
        assert chain.src == NodeAddress(0, 0) and chain.dst == NodeAddress(0, 3)
        assert chain.stops == (NodeAddress(0, 1), NodeAddress(0, 2))
        assert chain.payload == (1,)
        assert [task.words for task in schedule.computes()] == [(2,), (3,)]

    def test_without_accumulation(self, small_mesh):
        schedule = gen_chain_trace(small_mesh(), 2, ina_enabled=False)
        assert schedule.mode == CHAIN_PLAIN
        events = schedule.events()
        assert [(e.src.y, e.dst.y, e.accumulate) for e in events] == [(0, 1, False), (1, 2, True), (2, 3, True)]
        assert schedule.computes() == []

    @pytest.mark.parametrize("intermediates", [0, 3])
    def test_must_fit_column(self, small_mesh, intermediates):
        with pytest.raises(ConfigError, match="does not fit"):
            gen_chain_trace(small_mesh(), intermediates, ina_enabled=True)

    def test_operand_count(self, small_mesh):
        with pytest.raises(ConfigError, match="operand vectors"):
            gen_chain_trace(small_mesh(), 1, ina_enabled=True, operands=[(1,)])


class TestTraceVolume:
    def test_merged_chains_are_not_ejected(self, toy_layer, small_mesh):
        volume = trace_volume(gen_ws_trace(toy_layer(), small_mesh(), ina_enabled=True, mem=SPLIT_MEMORY))
        assert volume.classes["ina_chain"].packets == 2
        assert volume.classes["ina_chain"].flits == 4
        assert (volume.ni_inject, volume.ni_eject) == (11, 9)
        assert volume.ni_events == 20
        assert volume.packets == 11

    def test_plain_ejects_everything(self, toy_layer, small_mesh):
        volume = trace_volume(gen_ws_trace(toy_layer(), small_mesh(), ina_enabled=False, mem=SPLIT_MEMORY))
        assert volume.classes["ina_chain"] == ClassVolume()
        assert volume.ni_inject == volume.ni_eject == 11

    def test_chain_ni_counts(self, small_mesh):
        for k in (1, 2, 4):
            plain = trace_volume(gen_chain_trace(small_mesh(size=8), k, ina_enabled=False))
            ina = trace_volume(gen_chain_trace(small_mesh(size=8), k, ina_enabled=True))
            assert (plain.ni_inject, plain.ni_eject) == (k + 1, k + 1)
            assert (ina.ni_inject, ina.ni_eject) == (1, 1)
            assert plain.words == (k + 1) * ina.words
