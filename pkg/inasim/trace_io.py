"""Trace files: a line-oriented text rendering of a :class:`~inasim.dataflow.Schedule`.

A trace starts with ``#`` header lines naming the layer, mesh and mode, then one comma-separated record per packet
or compute task, round by round.  The first eight columns are ``cycle,src_x,src_y,class,dst_x,dst_y,flits,chain_id``;
the rest carry the dependency and payload information the driver needs, so reading a trace back gives the same
schedule.  ``cycle`` is a packet's earliest release within its round and ``lane`` the streaming bus lane of a stream
packet.  Compute tasks use the class ``compute`` with the task's node as both endpoints, its duration under
``delay``, its result gather under ``merge_into`` and the packet it accumulates from under ``accumulate``.
"""

import csv
import logging
from dataclasses import fields
from pathlib import Path
from typing import TextIO

from inasim.config import MeshConfig
from inasim.dataflow import ComputeTask, Round, Schedule, TraceEvent
from inasim.exceptions import ConfigError
from inasim.layers import LayerShape
from inasim.packet import NodeAddress, PacketClass

TRACE_COLUMNS = (
    "cycle",
    "src_x",
    "src_y",
    "class",
    "dst_x",
    "dst_y",
    "flits",
    "chain_id",
    "round",
    "id",
    "words",
    "payload",
    "stops",
    "slot_words",
    "merge_into",
    "after",
    "delay",
    "barrier",
    "accumulate",
    "label",
    "lane",
    "items",
)
COMPUTE = "compute"


def _ints(values) -> str:
    return " ".join(str(v) for v in values)


def _optional(value: int | None) -> str:
    return "" if value is None else str(value)


def _header_lines(schedule: Schedule) -> list[str]:
    layer = schedule.layer
    shape = "" if layer is None else f" R={layer.kernel} C={layer.channels} F={layer.filters} O={layer.output}"
    mesh = " ".join(f"{f.name}={getattr(schedule.mesh, f.name)}" for f in fields(MeshConfig))
    return [
        f"# layer={schedule.layer_name}{shape}",
        f"# mesh {mesh}",
        f"# mode={schedule.mode} seed={schedule.seed} total_rounds={schedule.total_rounds} "
        f"total_items={schedule.total_items} simulated_items={schedule.simulated_items} "
        f"volume_divisor={schedule.volume_divisor}",
    ]


def _event_record(schedule: Schedule, event: TraceEvent) -> list[str]:
    items = schedule.outputs.get(event.packet_id)
    return [
        str(event.cycle),
        str(event.src.x),
        str(event.src.y),
        event.cls.value,
        str(event.dst.x),
        str(event.dst.y),
        str(event.flits),
        _optional(event.chain_id),
        str(event.round),
        str(event.packet_id),
        str(event.words),
        _ints(event.payload),
        " ".join(f"{n.x}:{n.y}" for n in event.stops),
        str(event.slot_words),
        _optional(event.merge_into),
        _ints(event.after),
        str(event.delay),
        str(int(event.barrier)),
        str(int(event.accumulate)),
        event.label,
        str(event.lane),
        "" if items is None else " ".join("-" if item is None else f"{item[0]}:{item[1]}" for item in items),
    ]


def _compute_record(task: ComputeTask) -> list[str]:
    node = task.node
    return [
        "0",
        str(node.x),
        str(node.y),
        COMPUTE,
        str(node.x),
        str(node.y),
        "0",
        _optional(task.operand_chain),
        str(task.round),
        str(task.task_id),
        str(len(task.words)),
        _ints(task.words),
        "",
        "0",
        _optional(task.result_gather),
        _ints(task.after),
        str(task.cycles),
        str(int(task.barrier_member)),
        _optional(task.accumulate_from),
        COMPUTE,
        "0",
        "",
    ]


def write_trace(schedule: Schedule, stream: TextIO) -> None:
    for line in _header_lines(schedule):
        stream.write(line + "\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for round_ in schedule.rounds:
        writer.writerows(_event_record(schedule, event) for event in round_.events)
        writer.writerows(_compute_record(task) for task in round_.computes)


def save_trace(schedule: Schedule, path: Path) -> Path:
    """Write *schedule* to *path* atomically."""
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_name(f".{path.name}.tmp")
    with temporary.open("w") as f:
        write_trace(schedule, f)
    temporary.replace(path)
    logging.info(f"Trace written to {path}")
    return path


# ============================================================================
# Reading
# ============================================================================


def _pairs(text: str) -> dict[str, str]:
    pairs = {}
    for token in text.split():
        key, sep, value = token.partition("=")
        if sep:
            pairs[key] = value
    return pairs


def _parse_header(lines: list[str]) -> dict[str, str]:
    header: dict[str, str] = {}
    for line in lines:
        body = line.lstrip("#").strip()
        if body.startswith("mesh "):
            header.update({f"mesh.{k}": v for k, v in _pairs(body[len("mesh ") :]).items()})
        else:
            header.update(_pairs(body))
    return header


def _mesh_from(header: dict[str, str]) -> MeshConfig:
    values = {}
    for f in fields(MeshConfig):
        text = header.get(f"mesh.{f.name}")
        if text is None:
            raise ConfigError(f"trace header lacks mesh.{f.name}")
        values[f.name] = text == "True" if f.name == "ina_enabled" else int(text)
    return MeshConfig(**values)


def _layer_from(header: dict[str, str]) -> LayerShape | None:
    if "F" not in header:
        return None
    return LayerShape(
        name=header["layer"],
        kernel=int(header["R"]),
        channels=int(header["C"]),
        filters=int(header["F"]),
        output=int(header["O"]),
    )


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split())


def _opt_int(text: str) -> int | None:
    return int(text) if text else None


def _items(text: str):
    items = []
    for token in text.split():
        if token == "-":
            items.append(None)
        else:
            f, p = token.split(":")
            items.append((int(f), int(p)))
    return tuple(items)


def read_trace(stream: TextIO) -> Schedule:
    """Parse a trace written by :func:`write_trace`.

    Raises:
        ConfigError: If the header or a record is malformed
    """
    lines = stream.read().splitlines()
    header = _parse_header([line for line in lines if line.startswith("#")])
    try:
        schedule = Schedule(
            layer=_layer_from(header),
            mesh=_mesh_from(header),
            mode=header["mode"],
            seed=int(header["seed"]),
            total_rounds=int(header["total_rounds"]),
            total_items=int(header.get("total_items", "0")),
            simulated_items=int(header.get("simulated_items", "0")),
            volume_divisor=int(header.get("volume_divisor", "1")),
        )
    except KeyError as e:
        raise ConfigError(f"trace header lacks {e}") from e

    events: dict[int, list[TraceEvent]] = {}
    computes: dict[int, list[ComputeTask]] = {}
    rows = csv.DictReader(line for line in lines if line and not line.startswith("#"))
    for number, row in enumerate(rows, start=1):
        try:
            round_index = int(row["round"])
            src = NodeAddress(int(row["src_x"]), int(row["src_y"]))
            dst = NodeAddress(int(row["dst_x"]), int(row["dst_y"]))
            if row["class"] == COMPUTE:
                computes.setdefault(round_index, []).append(
                    ComputeTask(
                        task_id=int(row["id"]),
                        round=round_index,
                        node=src,
                        cycles=int(row["delay"]),
                        words=_int_tuple(row["payload"]),
                        after=_int_tuple(row["after"]),
                        accumulate_from=_opt_int(row["accumulate"]),
                        operand_chain=_opt_int(row["chain_id"]),
                        result_gather=_opt_int(row["merge_into"]),
                        barrier_member=row["barrier"] == "1",
                    )
                )
                continue
            stops = tuple(NodeAddress(*(int(v) for v in token.split(":"))) for token in row["stops"].split())
            event = TraceEvent(
                packet_id=int(row["id"]),
                round=round_index,
                cycle=int(row["cycle"]),
                src=src,
                dst=dst,
                cls=PacketClass(row["class"]),
                words=int(row["words"]),
                flits=int(row["flits"]),
                chain_id=_opt_int(row["chain_id"]),
                payload=_int_tuple(row["payload"]),
                stops=stops,
                slot_words=int(row["slot_words"]),
                merge_into=_opt_int(row["merge_into"]),
                after=_int_tuple(row["after"]),
                delay=int(row["delay"]),
                barrier=row["barrier"] == "1",
                accumulate=row["accumulate"] == "1",
                label=row["label"],
                lane=int(row.get("lane") or 0),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"malformed trace record {number}: {e}") from e
        events.setdefault(round_index, []).append(event)
        if row["items"]:
            schedule.outputs[event.packet_id] = _items(row["items"])

    indices = sorted(set(events) | set(computes))
    schedule.rounds = [Round(i, tuple(events.get(i, ())), tuple(computes.get(i, ()))) for i in indices]
    return schedule


def load_trace(path: Path) -> Schedule:
    if not path.is_file():
        raise ConfigError(f"trace file not found: {path}")
    with path.open() as f:
        return read_trace(f)
