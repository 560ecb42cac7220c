"""Convolution layer shapes and workload tables.

A workload is a line-oriented comma-separated file with one CONV layer per record (``name,R,C,F,O``).
Lines starting with ``#`` are comments.  AlexNet, VGG-16 and ResNet-50 tables ship inside the package and are
addressed by name; any other argument is treated as a path.
"""

import csv
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from inasim.exceptions import ConfigError

BUNDLED_WORKLOADS = ("alexnet", "vgg16", "resnet50")
LAYER_COLUMNS = ("name", "R", "C", "F", "O")


@dataclass(frozen=True)
class LayerShape:
    """Dimensions of one convolution layer.

    Attributes:
        name: Layer label, e.g. ``CONV2``.
        kernel: Kernel height/width R.
        channels: Input channels C.
        filters: Filter count F.
        output: Output feature-map height/width O.
        batch: Input-activation count; stored but not used to scale rounds.
    """

    name: str
    kernel: int
    channels: int
    filters: int
    output: int
    batch: int = 1

    def __post_init__(self):
        for field_name in ("kernel", "channels", "filters", "output", "batch"):
            value = getattr(self, field_name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"layer {self.name}: {field_name} must be a positive integer, got {value!r}")

    @property
    def weight_elements(self) -> int:
        """Length of one filter's weight vector (C·R·R)."""
        return self.channels * self.kernel * self.kernel

    @property
    def output_pixels(self) -> int:
        return self.output * self.output

    @property
    def macs(self) -> int:
        """Multiply-accumulate operations for the whole layer."""
        return self.filters * self.output_pixels * self.weight_elements


@dataclass(frozen=True)
class Workload:
    """A named, ordered list of convolution layers."""

    name: str
    layers: tuple[LayerShape, ...]

    def layer(self, name: str) -> LayerShape:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise ConfigError(f"workload {self.name} has no layer named {name}")


def parse_layers(lines, source: str = "<memory>") -> list[LayerShape]:
    """Parse layer records from an iterable of text lines.

    Args:
        lines: Text lines including the ``name,R,C,F,O`` header row
        source: Name used in error messages

    Returns:
        Layers in file order

    Raises:
        ConfigError: If the header is missing or a record is malformed
    """
    numbered = [
        (number, line)
        for number, line in enumerate(lines, start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    rows = csv.DictReader(line for _, line in numbered)
    if rows.fieldnames is None:
        return []
    header = [name.strip() for name in rows.fieldnames]
    if tuple(header[: len(LAYER_COLUMNS)]) != LAYER_COLUMNS:
        raise ConfigError(f"{source}: expected header {','.join(LAYER_COLUMNS)}, got {','.join(header)}")

    layers = []
    for (line_number, _), row in zip(numbered[1:], rows, strict=False):
        row = {key.strip(): (value or "").strip() for key, value in row.items() if key is not None}
        try:
            layers.append(
                LayerShape(
                    name=row["name"],
                    kernel=int(row["R"]),
                    channels=int(row["C"]),
                    filters=int(row["F"]),
                    output=int(row["O"]),
                )
            )
        except ValueError as e:
            raise ConfigError(f"{source}: malformed layer record on line {line_number}: {e}") from e
    return layers


def load_workload(name_or_path: str | Path) -> Workload:
    """Load a bundled workload by name or a workload file by path.

    Raises:
        ConfigError: If the file does not exist or cannot be parsed
    """
    key = str(name_or_path)
    if key.lower() in BUNDLED_WORKLOADS:
        resource = resources.files("inasim") / "data" / f"{key.lower()}.csv"
        text = resource.read_text()
        name = key.lower()
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise ConfigError(f"workload file not found: {path}")
        text = path.read_text()
        name = path.stem

    layers = parse_layers(text.splitlines(), source=key)
    logging.debug(f"Loaded workload {name} with {len(layers)} layers")
    return Workload(name=name, layers=tuple(layers))
