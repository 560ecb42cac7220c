"""Tests for trace files in inasim.trace_io."""

import csv
import io

import pytest

from inasim.dataflow import gen_chain_trace, gen_os_trace, gen_ws_trace
from inasim.driver import simulate
from inasim.exceptions import ConfigError
from inasim.layers import LayerShape
from inasim.trace_io import TRACE_COLUMNS, load_trace, read_trace, save_trace, write_trace

LAYER = LayerShape("T", kernel=1, channels=3, filters=6, output=2)


def text_of(schedule):
    stream = io.StringIO()
    write_trace(schedule, stream)
    return stream.getvalue()


@pytest.fixture
def schedules(small_mesh):
    return {
        "ws_ina": gen_ws_trace(LAYER, small_mesh(pes=2), True, mem=64, seed=4),
        "ws_plain": gen_ws_trace(LAYER, small_mesh(), False, mem=64, seed=4, volume_divisor=2),
        "os_gather": gen_os_trace(LAYER, small_mesh(size=2), rounds_cap=3),
        "chain": gen_chain_trace(small_mesh(), 2, True),
    }


class TestRoundTrip:
    @pytest.mark.parametrize("name", ["ws_ina", "ws_plain", "os_gather", "chain"])
    def test_read_gives_same_schedule(self, schedules, name):
        schedule = schedules[name]
        assert read_trace(io.StringIO(text_of(schedule))) == schedule

    def test_replay_matches(self, schedules):
        schedule = schedules["ws_plain"]
        replayed = read_trace(io.StringIO(text_of(schedule)))
        assert simulate(replayed).stats.digest() == simulate(schedule).stats.digest()

    def test_file(self, schedules, tmp_path):
        path = save_trace(schedules["ws_ina"], tmp_path / "traces" / "t.trace")
        assert path.is_file()
        assert list(path.parent.iterdir()) == [path]
        assert load_trace(path) == schedules["ws_ina"]


class TestFormat:
    def test_header_and_columns(self, schedules):
        lines = text_of(schedules["ws_ina"]).splitlines()
        assert lines[0] == "# layer=T R=1 C=3 F=6 O=2"
        assert lines[1].startswith("# mesh size=4 pes=2 router_latency=4")
        assert lines[2] == (
            "# mode=ws_ina seed=4 total_rounds=2 total_items=24 simulated_items=24 volume_divisor=1"
        )
        assert lines[3] == ",".join(TRACE_COLUMNS)
        assert TRACE_COLUMNS[:8] == ("cycle", "src_x", "src_y", "class", "dst_x", "dst_y", "flits", "chain_id")

    def test_record(self, schedules):
        lines = text_of(schedules["chain"]).splitlines()
        assert lines[0] == "# layer=synthetic"
        chain = next(line for line in lines if ",ina_chain," in line)
        assert chain.startswith("0,0,0,ina_chain,0,3,2,0,0,")
        assert ",0:1 0:2," in chain

    def test_cycle_column(self, schedules):
        rows = list(csv.DictReader(line for line in text_of(schedules["ws_ina"]).splitlines() if line[0] != "#"))
        cycles = {row["class"]: set() for row in rows}
        for row in rows:
            cycles[row["class"]].add(row["cycle"])
        assert cycles == {"stream": {"0"}, "ina_chain": {"2"}, "gather": {"2"}, "compute": {"0"}}

    def test_lane_column(self, small_mesh):
        layer = LayerShape("T", kernel=1, channels=4, filters=2, output=2)
        text = text_of(gen_os_trace(layer, small_mesh(size=2, pes=2)))
        rows = list(csv.DictReader(line for line in text.splitlines() if line[0] != "#"))
        assert {row["lane"] for row in rows if row["class"] == "stream"} == {"0", "1"}


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_trace(tmp_path / "absent.trace")

    def test_missing_header(self, schedules):
        body = "\n".join(line for line in text_of(schedules["chain"]).splitlines() if not line.startswith("# mode"))
        with pytest.raises(ConfigError, match="lacks"):
            read_trace(io.StringIO(body))

    def test_missing_mesh_field(self, schedules):
        text = text_of(schedules["chain"]).replace(" vcs=2", "")
        with pytest.raises(ConfigError, match="mesh.vcs"):
            read_trace(io.StringIO(text))

    def test_malformed_record(self, schedules):
        text = text_of(schedules["chain"]).replace(",ina_chain,", ",teleport,")
        with pytest.raises(ConfigError, match="malformed trace record 1"):
            read_trace(io.StringIO(text))
