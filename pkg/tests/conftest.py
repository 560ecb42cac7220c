"""Shared fixtures for inasim tests.

Provides factory fixtures for writing configuration and workload files, building small meshes and invoking the
CLI entry point programmatically.
"""

from __future__ import annotations

import textwrap
from pathlib import Path

import pytest

from inasim.cli_run import main
from inasim.config import MeshConfig
from inasim.layers import LayerShape

# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


@pytest.fixture
def make_yaml():
    """Factory fixture: write a YAML configuration file into a directory."""

    def _factory(directory: Path, yaml_text: str, name: str = "config.yaml") -> Path:
        path = directory / name
        path.write_text(textwrap.dedent(yaml_text))
        return path

    return _factory


@pytest.fixture
def make_workload():
    """Factory fixture: write a layer table (``name,R,C,F,O`` rows) into a directory."""

    def _factory(directory: Path, rows: list[tuple], name: str = "toy.csv", comment: str = "") -> Path:
        lines = [f"# {comment}"] if comment else []
        lines.append("name,R,C,F,O")
        lines.extend(",".join(str(v) for v in row) for row in rows)
        path = directory / name
        path.write_text("\n".join(lines) + "\n")
        return path

    return _factory


@pytest.fixture
def small_mesh():
    """Factory fixture: a MeshConfig with default timing and the given size and PEs per router."""

    def _factory(size: int = 4, pes: int = 1, ina_enabled: bool = True, **overrides) -> MeshConfig:
        return MeshConfig(size=size, pes=pes, ina_enabled=ina_enabled, **overrides)

    return _factory


@pytest.fixture
def toy_layer():
    """Factory fixture: a small LayerShape."""

    def _factory(kernel: int = 1, channels: int = 2, filters: int = 2, output: int = 1, name: str = "TOY"):
        return LayerShape(name=name, kernel=kernel, channels=channels, filters=filters, output=output)

    return _factory


@pytest.fixture
def run_inasim():
    """Factory fixture: invoke ``inasim.cli_run.main()`` and return its exit code."""

    def _factory(*args: str) -> int:
        return main([str(arg) for arg in args])

    return _factory
