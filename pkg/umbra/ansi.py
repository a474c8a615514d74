import logging
import os
import sys

# Escape sequences used for console output. Kept as a plain dict so callers
# can compose them inline, e.g. f"{ansi['bold']}{text}{ansi['reset']}".
ansi = {
    "reset": "\033[0m",
    "bold": "\033[1m",
    "dim": "\033[2m",
    "reverse": "\033[7m",

    "fg_red": "\033[31m",
    "fg_green": "\033[32m",
    "fg_yellow": "\033[33m",
    "fg_blue": "\033[34m",
    "fg_cyan": "\033[36m",
    "fg_bright_white": "\033[97m",

    "bg_red": "\033[41m",
    "bg_cyan": "\033[46m",

    "clear_line": "\033[2K",
}

LEVEL_FORMATS = {
    logging.DEBUG: ansi["dim"],
    logging.INFO: ansi["fg_green"],
    logging.WARNING: ansi["fg_yellow"],
    logging.ERROR: ansi["fg_red"] + ansi["bold"],
    logging.CRITICAL: ansi["bg_red"] + ansi["fg_bright_white"] + ansi["bold"],
}


def color_enabled(stream=None) -> bool:
    """True when ``stream`` is an interactive terminal and NO_COLOR is unset."""
    stream = stream or sys.stderr
    if os.environ.get("NO_COLOR"):
        return False
    return hasattr(stream, "isatty") and stream.isatty()


def paint(text: str, *styles: str) -> str:
    """Wrap ``text`` in the named palette entries, e.g. ``paint("ok", "fg_green")``."""
    prefix = "".join(ansi[s] for s in styles)
    return f"{prefix}{text}{ansi['reset']}" if prefix else text


class AnsiFormatter(logging.Formatter):
    """
    Log formatter that colours the level name with the palette above.

    Args:
        fmt (str): A ``logging`` format string.
        color (bool): When False the output is plain text.
    """

    def __init__(self, fmt: str = "%(levelname)-7s %(name)s: %(message)s", color: bool = True):
        super().__init__(fmt)
        self.color = color

    def format(self, record: logging.LogRecord) -> str:
        if not self.color:
            return super().format(record)
        original = record.levelname
        record.levelname = f"{LEVEL_FORMATS.get(record.levelno, '')}{original:<7}{ansi['reset']}"
        try:
            return super().format(record)
        finally:
            record.levelname = original


def setup_logging(verbosity: int = 0, color: bool | None = None, stream=None) -> logging.Logger:
    """
    Configure the ``umbra`` logger for command-line use.

    Args:
        verbosity (int): 0 = WARNING, 1 = INFO, 2 or more = DEBUG.
        color (bool | None): Force colour on/off; None detects a TTY.
        stream: Output stream, stderr by default.

    Returns:
        logging.Logger: The configured package logger.
    """
    stream = stream or sys.stderr
    if color is None:
        color = color_enabled(stream)
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG

    logger = logging.getLogger("umbra")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(stream)
    handler.setFormatter(AnsiFormatter(color=color))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger
