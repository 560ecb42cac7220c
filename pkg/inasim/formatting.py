"""Terminal formatting, color output, and display helpers for inasim."""

import sys
from collections.abc import Sequence

INDENT_STEP = 2
STATUS_COLUMN = 54


def indent(level: int) -> str:
    """Return an indentation string for the given nesting *level*.

    Level 0 produces no indentation; each subsequent level adds
    :data:`INDENT_STEP` spaces.
    """
    return " " * (INDENT_STEP * level)


class Colors:
    """ANSI color codes for terminal output.

    Colors are disabled when stdout is not a TTY, so redirected output stays clean.
    """

    def __init__(self):
        if sys.stdout.isatty():
            self.BLUE = "\033[34m"
            self.RED = "\033[31m"
            self.GREEN = "\033[32m"
            self.RESET = "\033[0m"
        else:
            self.BLUE = ""
            self.RED = ""
            self.GREEN = ""
            self.RESET = ""


def display_status(name: str, success: bool, indent_level: int = 1, detail: str = "") -> None:
    """Print *name* padded to the status column followed by an OK/FAIL marker.

    Args:
        name: Label of the run or check
        success: Whether it succeeded
        indent_level: Nesting level (each level = :data:`INDENT_STEP` spaces)
        detail: Optional text printed after the marker
    """
    colors = Colors()
    prefix = indent(indent_level)
    name_width = STATUS_COLUMN - len(prefix)

    status_text = f"[{colors.GREEN} OK {colors.RESET}]" if success else f"[{colors.RED}FAIL{colors.RESET}]"
    suffix = f" {detail}" if detail else ""

    print(f"{prefix}{name:<{name_width}} {status_text}{suffix}")


def print_table(header: Sequence[str], rows: Sequence[Sequence[str]], indent_level: int = 1) -> None:
    """Print rows as right-aligned columns under *header*."""
    widths = [len(column) for column in header]
    for row in rows:
        widths = [max(width, len(cell)) for width, cell in zip(widths, row, strict=True)]
    prefix = indent(indent_level)
    for row in (header, *rows):
        print(prefix + "  ".join(f"{cell:>{width}}" for cell, width in zip(row, widths, strict=True)))
