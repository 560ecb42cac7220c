"""
inasim - In-Network Accumulation NoC Simulator

A cycle-accurate 2D mesh network-on-chip simulator with routers that add partial sums in flight, traffic
generators for weight-stationary and output-stationary CNN dataflows, an event-energy model and the analytic
rounds model for convolution layers.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("inasim")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .cli_run import main  # noqa: E402
from .formatting import Colors  # noqa: E402
from .report import ReportWriter  # noqa: E402
from .runner import ExperimentRunner  # noqa: E402

__all__ = ["ExperimentRunner", "ReportWriter", "Colors", "main"]
