"""Exception classes and exit codes for inasim."""


class ExitCode:
    """Standard exit codes for the inasim application."""

    OK = 0  # Success
    TEST_FAILURE = 1  # A comparison ordering check failed
    USAGE = 2  # Command line usage or configuration error
    RUNTIME = 3  # Runtime error during simulation
    INTERNAL = 99  # Internal/unexpected error


class CliError(Exception):
    """Base class for command line interface errors."""

    exit_code = ExitCode.RUNTIME


class UsageError(CliError):
    """Error in command line usage or invalid parameters."""

    exit_code = ExitCode.USAGE


class ConfigError(UsageError):
    """Invalid experiment configuration or workload file."""


class MissingModeError(UsageError):
    """A comparison referenced a mode that the report does not contain."""


class UnmappableLayerError(CliError):
    """The filter parts of a layer do not fit in one mesh column (P# > N)."""

    def __init__(self, layer_name: str, parts: int, mesh_size: int):
        super().__init__(f"layer {layer_name} needs {parts} PEs per filter but the mesh column has only {mesh_size}")
        self.layer_name = layer_name
        self.parts = parts
        self.mesh_size = mesh_size


class LivelockError(CliError):
    """A flit stayed in the network longer than the configured age bound."""


class DrainTimeoutError(LivelockError):
    """A flit is stalled on a local operand that was never produced."""


class InaProtocolError(CliError):
    """Two chain heads with the same chain id and round met one INA unit."""


class SlotOverflowError(CliError):
    """A gather payload write fell outside the packet's reserved slots."""


class FlowControlError(CliError):
    """A buffer write exceeded the buffer depth."""


class MetadataMismatchError(CliError):
    """Two reports describe different layers or meshes."""
