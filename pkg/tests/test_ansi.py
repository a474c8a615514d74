import io
import logging

from umbra.ansi import AnsiFormatter, ansi, color_enabled, paint, setup_logging


def _record(level=logging.WARNING, msg="dark sample skipped"):
    return logging.LogRecord("umbra.dataio", level, __file__, 1, msg, None, None)


def test_paint():
    assert paint("ok") == "ok"
    assert paint("ok", "fg_green") == f"{ansi['fg_green']}ok{ansi['reset']}"


def test_formatter_colours_only_the_level_name():
    record = _record()
    coloured = AnsiFormatter().format(record)
    assert coloured.startswith(ansi["fg_yellow"])
    assert coloured.endswith("umbra.dataio: dark sample skipped")
    assert record.levelname == "WARNING"
    assert AnsiFormatter(color=False).format(record) == "WARNING umbra.dataio: dark sample skipped"


def test_color_detection(monkeypatch):
    assert not color_enabled(io.StringIO())
    monkeypatch.setenv("NO_COLOR", "1")

    class Tty(io.StringIO):
        def isatty(self):
            return True

    assert not color_enabled(Tty())


def test_setup_logging_levels_and_handlers():
    stream = io.StringIO()
    logger = setup_logging(0, stream=stream)
    assert logger.level == logging.WARNING
    setup_logging(1, stream=stream)
    logger = setup_logging(2, stream=stream)
    assert logger.level == logging.DEBUG
    assert len(logger.handlers) == 1
    logging.getLogger("umbra.attack").debug("restart 1")
    assert stream.getvalue() == "DEBUG   umbra.attack: restart 1\n"
