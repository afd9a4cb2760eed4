"""
CLI View Module
Terminal presentation for medsim: status lines, section headers, effect tables and run summaries.
"""

import logging
import os
import sys
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from src.models.report import EffectReport, format_comparison, format_table


class MessageLevel(Enum):
    INFO = "info"
    SUCCESS = "success"
    WARNING = "warning"
    ERROR = "error"
    DEBUG = "debug"


class Colors:
    """ANSI escape sequences used by CLIView."""
    RESET = "\033[0m"
    BOLD = "\033[1m"
    DIM = "\033[2m"
    BLUE = "\033[94m"
    GREEN = "\033[92m"
    YELLOW = "\033[93m"
    RED = "\033[91m"
    CYAN = "\033[96m"

    @staticmethod
    def enabled(stream=None) -> bool:
        """True when ``stream`` is an interactive terminal and NO_COLOR is unset."""
        stream = stream or sys.stdout
        if os.getenv("NO_COLOR") is not None or os.getenv("TERM") == "dumb":
            return False
        isatty = getattr(stream, "isatty", None)
        return bool(isatty and isatty())


# level -> (colour, marker); INFO lines carry no marker and are coloured whole
STYLES: Dict[MessageLevel, Tuple[str, str]] = {
    MessageLevel.INFO: (Colors.BLUE, ""),
    MessageLevel.SUCCESS: (Colors.GREEN, "✓"),
    MessageLevel.WARNING: (Colors.YELLOW, "⚠"),
    MessageLevel.ERROR: (Colors.RED, "✗"),
    MessageLevel.DEBUG: (Colors.CYAN, "●"),
}

RULE_WIDTH = 70
LABEL_WIDTH = 24


class CLIView:
    """Command-line interface view for the mediation simulator.

    ``quiet`` keeps only errors; ``verbose`` lets DEBUG lines through.
    Errors go to stderr, everything else to stdout.
    """

    def __init__(self, verbose: bool = False, quiet: bool = False):
        self.verbose = verbose
        self.quiet = quiet
        self.warning_count = 0
        self.use_colors = Colors.enabled()

    def style(self, text: str, *codes: str) -> str:
        """Wrap ``text`` in the given escape codes when colour output is on."""
        if not self.use_colors or not codes:
            return text
        return "".join(codes) + text + Colors.RESET

    def _shows(self, level: MessageLevel) -> bool:
        if level is MessageLevel.ERROR:
            return True
        if self.quiet:
            return False
        return level is not MessageLevel.DEBUG or self.verbose

    def print(self, message: str, level: MessageLevel = MessageLevel.INFO, end: str = "\n"):
        """Print one status line at ``level``; warnings are counted for the summary."""
        if level is MessageLevel.WARNING:
            self.warning_count += 1
        if not self._shows(level):
            return
        colour, marker = STYLES[level]
        line = f"{self.style(marker, colour)} {message}" if marker else self.style(message, colour)
        stream = sys.stderr if level is MessageLevel.ERROR else sys.stdout
        print(line, end=end, file=stream)

    def print_banner(self):
        if self.quiet:
            return
        rule = self.style("═" * 62, Colors.BLUE)
        print(f"\n{rule}")
        print(f"  {self.style('Medsim', Colors.BOLD, Colors.CYAN)}")
        print(f"  {self.style('Natural path-specific and interventional mediation effects', Colors.DIM)}")
        print(f"{rule}\n")

    def print_header(self, title: str):
        if self.quiet:
            return
        print(f"\n{self.style(title.upper(), Colors.BOLD, Colors.BLUE)}")
        print(self.style("─" * RULE_WIDTH, Colors.BLUE))

    def print_fields(self, fields: Iterable[Tuple[str, str]], width: Optional[int] = None):
        """Print dotted ``label.... value`` lines, one per pair."""
        if self.quiet:
            return
        fields = list(fields)
        width = width or max((len(label) for label, _ in fields), default=0)
        for label, value in fields:
            print(f"  {self.style(f'{label:.<{width}}', Colors.DIM)} {value}")

    def print_problems(self, errors: List[str], warnings: List[str]):
        """Print every configuration problem, errors first."""
        for error in errors:
            self.print(error, MessageLevel.ERROR)
        for warning in warnings:
            self.print(warning, MessageLevel.WARNING)

    def print_effects(self, report: EffectReport, title: str = "Effects"):
        if self.quiet:
            return
        self.print_header(title)
        print(format_table(report))

    def print_comparison(self, reports: Mapping[str, EffectReport]):
        if self.quiet:
            return
        self.print_header("Comparison")
        print(format_comparison(reports))

    def print_summary(self, timings: Mapping[str, float], outputs: Optional[Dict[str, str]] = None):
        """Print stage timings and the files written.

        Args:
            timings: Seconds per pipeline stage
            outputs: Output description to path
        """
        if self.quiet:
            return
        self.print_header("Summary")
        self.print_fields(
            ((stage, self.style(f"{seconds:>8.2f}s", Colors.CYAN)) for stage, seconds in timings.items()),
            LABEL_WIDTH,
        )
        self.print_fields((outputs or {}).items(), LABEL_WIDTH)
        print()
        if self.warning_count:
            self.print(f"Finished with {self.warning_count} warning(s)", MessageLevel.WARNING)
        else:
            self.print("Run completed successfully!", MessageLevel.SUCCESS)


class CLILogHandler(logging.Handler):
    """Routes library log records through a CLIView."""

    LEVELS = {
        logging.DEBUG: MessageLevel.DEBUG,
        logging.INFO: MessageLevel.INFO,
        logging.WARNING: MessageLevel.WARNING,
        logging.ERROR: MessageLevel.ERROR,
        logging.CRITICAL: MessageLevel.ERROR,
    }

    def __init__(self, cli: CLIView):
        super().__init__()
        self.cli = cli

    def emit(self, record: logging.LogRecord):
        try:
            level = self.LEVELS.get(record.levelno, MessageLevel.INFO)
            self.cli.print(self.format(record), level)
        except Exception:
            self.handleError(record)


def configure_logging(cli: CLIView) -> CLILogHandler:
    """Attach a CLILogHandler to the package logger; INFO and above unless verbose."""
    handler = CLILogHandler(cli)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger("src")
    for existing in list(root.handlers):
        if isinstance(existing, CLILogHandler):
            root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if cli.verbose else logging.INFO)
    return handler
