"""Experiment configuration loading.

Settings come from three layers, highest precedence first: command-line overrides, the user's YAML file and the
bundled ``default.yaml``.  Each section is merged through a :class:`collections.ChainMap` so a file only needs the
keys it changes.
"""

import logging
import os
from collections import ChainMap
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

from inasim.exceptions import ConfigError
from inasim.power import EnergyCoefficients

try:
    from ruamel.yaml import YAML

    yaml = YAML(typ="safe")
except ImportError as e:  # pragma: no cover
    raise ImportError("ruamel.yaml not available. Install with: pip install ruamel.yaml") from e

MODES = ("ws_ina", "ws_plain", "os_gather")
PRECISIONS = (8, 16, 32)


@dataclass(frozen=True)
class MeshConfig:
    """Mesh geometry and router timing for one simulation."""

    size: int = 8
    pes: int = 1
    router_latency: int = 4
    link_latency: int = 1
    flit_width: int = 128
    buffer_depth: int = 4
    vcs: int = 2
    ni_inject_latency: int = 2
    ni_eject_latency: int = 2
    local_acc_latency: int = 1
    ni_queue_depth: int = 16
    livelock_bound: int = 1_000_000
    ina_enabled: bool = True

    def __post_init__(self):
        minimums = {
            "size": 2,
            "pes": 1,
            "router_latency": 4,
            "link_latency": 1,
            "flit_width": 32,
            "buffer_depth": 1,
            "vcs": 2,
            "ni_inject_latency": 0,
            "ni_eject_latency": 0,
            "local_acc_latency": 0,
            "ni_queue_depth": 1,
            "livelock_bound": 1,
        }
        for key, minimum in minimums.items():
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
                raise ConfigError(f"mesh.{key} must be an integer >= {minimum}, got {value!r}")
        if self.flit_width % 32:
            raise ConfigError(f"mesh.flit_width must be a multiple of 32 bits, got {self.flit_width}")

    @property
    def words_per_flit(self) -> int:
        return self.flit_width // 32

    def with_pes(self, pes: int, ina_enabled: bool | None = None) -> "MeshConfig":
        enabled = self.ina_enabled if ina_enabled is None else ina_enabled
        return replace(self, pes=pes, ina_enabled=enabled)


@dataclass(frozen=True)
class ExperimentConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    pes: tuple[int, ...] = (1, 2, 4, 8)
    precision: int = 32
    memory_bits: int = 32768
    coefficients: EnergyCoefficients = field(default_factory=EnergyCoefficients)
    workloads: tuple[str, ...] = ("alexnet", "vgg16", "resnet50")
    modes: tuple[str, ...] = MODES
    rounds_cap: int | None = 64
    seed: int = 2023
    volume_divisor: int = 16
    force_rounds: bool = False
    output: Path = Path("results")
    event_log: bool = False
    jobs: int = 0
    table_meshes: tuple[int, ...] = (8, 16)

    def __post_init__(self):
        if not self.modes:
            raise ConfigError("modes must not be empty")
        unknown = [mode for mode in self.modes if mode not in MODES]
        if unknown:
            raise ConfigError(f"unknown mode(s): {', '.join(unknown)}; expected {', '.join(MODES)}")
        if not self.pes or any(e < 1 for e in self.pes):
            raise ConfigError(f"mesh.pes must list positive integers, got {list(self.pes)}")
        if self.rounds_cap is not None and self.rounds_cap < 1:
            raise ConfigError(f"rounds_cap must be positive or null, got {self.rounds_cap}")
        if self.volume_divisor < 1:
            raise ConfigError(f"volume_divisor must be positive, got {self.volume_divisor}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {', '.join(map(str, PRECISIONS))} bits, got {self.precision}")
        if self.memory_bits < self.precision:
            raise ConfigError(f"memory_bits ({self.memory_bits}) must hold at least one {self.precision}-bit value")
        if self.jobs < 0:
            raise ConfigError(f"jobs must be non-negative, got {self.jobs}")
        if "ws_ina" in self.modes:
            self.coefficients.require_adder_cost()

    @property
    def workers(self) -> int:
        """Worker processes for a sweep; ``jobs: 0`` uses every CPU."""
        return self.jobs or os.cpu_count() or 1


def _read_yaml(source) -> dict[str, Any]:
    try:
        data = yaml.load(source)
    except Exception as e:
        raise ConfigError(f"Failed to load configuration: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError("configuration must be a mapping of keys to values")
    return dict(data)


def default_settings() -> dict[str, Any]:
    """The bundled default configuration as plain data."""
    return _read_yaml((resources.files("inasim") / "data" / "default.yaml").read_text())


def _section(name: str, *layers: Mapping[str, Any]) -> ChainMap[str, Any]:
    maps = []
    for layer in layers:
        value = layer.get(name) or {}
        if not isinstance(value, Mapping):
            raise ConfigError(f"section {name} must be a mapping")
        maps.append(dict(value))
    return ChainMap(*maps)


def _as_tuple(value: Any) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(value)
    if isinstance(value, str):
        return tuple(item.strip() for item in value.split(",") if item.strip())
    return (value,)


def build_config(
    overrides: Mapping[str, Any] | None = None,
    file_data: Mapping[str, Any] | None = None,
) -> ExperimentConfig:
    """Merge override, file and default layers into an ExperimentConfig.

    Args:
        overrides: Highest-precedence settings, shaped like the YAML file
        file_data: Settings read from a user configuration file

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    overrides = dict(overrides or {})
    file_data = dict(file_data or {})
    defaults = default_settings()
    layers = (overrides, file_data, defaults)

    for layer in (overrides, file_data):
        unknown = sorted(set(layer) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")

    top = ChainMap(*layers)
    mesh_scope = _section("mesh", *layers)
    energy_scope = _section("energy", *layers)

    mesh_keys = set(defaults["mesh"])
    unknown_mesh = sorted(set(mesh_scope) - mesh_keys)
    if unknown_mesh:
        raise ConfigError(f"unknown mesh key(s): {', '.join(unknown_mesh)}")

    pes = tuple(int(e) for e in _as_tuple(mesh_scope["pes"]))
    mesh_values = {key: mesh_scope[key] for key in mesh_keys if key != "pes"}
    try:
        mesh = MeshConfig(pes=pes[0] if pes else 1, **mesh_values)
        coefficients = EnergyCoefficients.from_mapping(dict(energy_scope))
        return ExperimentConfig(
            mesh=mesh,
            pes=pes,
            precision=int(top["precision"]),
            memory_bits=int(top["memory_bits"]),
            coefficients=coefficients,
            workloads=tuple(str(w) for w in _as_tuple(top["workloads"])),
            modes=tuple(str(m) for m in _as_tuple(top["modes"])),
            rounds_cap=None if top["rounds_cap"] is None else int(top["rounds_cap"]),
            seed=int(top["seed"]),
            volume_divisor=int(top["volume_divisor"]),
            force_rounds=bool(top["force_rounds"]),
            output=Path(str(top["output"])),
            event_log=bool(top["event_log"]),
            jobs=int(top["jobs"]),
            table_meshes=tuple(int(n) for n in _as_tuple(top["table_meshes"])),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration value: {e}") from e


def load_config(file: Path | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Load an experiment configuration file and apply overrides.

    Raises:
        ConfigError: If the file is missing, unreadable or invalid
    """
    file_data: dict[str, Any] = {}
    if file is not None:
        if not file.is_file():
            raise ConfigError(f"Configuration file not found: {file}")
        with file.open() as f:
            file_data = _read_yaml(f)
        logging.debug(f"Loaded configuration from {file}")
    return build_config(overrides, file_data)
