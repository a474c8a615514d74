# ============================================================
# config.py
#
# Flat key = value configuration files and the per-run record.
#
#   # comment
#   seed = 7
#   k = 0.43
#   swarm.swarm_size = 40
#   transform.brightness = -0.2, 0.2
#
# Dotted keys address nested settings; comma-separated values are tuples.
# Precedence: command-line flag > config file > UMBRA_SEED (seed only) >
# built-in default.
# ============================================================

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

logger = logging.getLogger(__name__)

SEED_ENV = "UMBRA_SEED"
RUN_CONFIG_NAME = "run_config.txt"

_INT = re.compile(r"^[+-]?\d+$")
_BOOLS = {"true": True, "yes": True, "on": True, "false": False, "no": False, "off": False}


def coerce(text: str):
    """Typed value of a config string: bool, None, int, float, tuple or str."""
    text = text.strip()
    if "," in text:
        return tuple(coerce(part) for part in text.split(",") if part.strip())
    lowered = text.lower()
    if lowered in _BOOLS:
        return _BOOLS[lowered]
    if lowered == "none":
        return None
    if _INT.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """
    Parse key = value lines into a flat dict of typed values.

    Raises:
        ConfigError: On a line without ``=`` or with an empty key.
    """
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        values[key] = coerce(value)
    return values


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    logger.debug("loaded %d settings from %s", len(values), path)
    return values


def section(values: dict, prefix: str) -> dict:
    """Entries ``prefix.name`` of a flat dict, keyed by ``name``."""
    head = prefix + "."
    return {k[len(head):]: v for k, v in values.items() if k.startswith(head)}


def resolve_seed(flag=None, file_value=None, env=None) -> int:
    """Pick the run seed: flag, then config file, then UMBRA_SEED, then 0."""
    env = os.environ if env is None else env
    for origin, value in (("--seed", flag), ("config", file_value), (SEED_ENV, env.get(SEED_ENV))):
        if value is None or value == "":
            continue
        try:
            return int(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{origin}: seed must be an integer, got {value!r}") from exc
    return 0


@dataclass
class RunConfig:
    """
    Everything that produced one result directory.

    Attributes:
        command (str): Subcommand name.
        seed (int): Global seed.
        out (str): Output directory.
        params (dict): Resolved command parameters, flat and dotted.
    """
    command: str
    seed: int
    out: str
    params: dict = field(default_factory=dict)

    def as_flat(self) -> dict:
        flat = {"command": self.command, "seed": self.seed, "out": self.out}
        flat.update(self.params)
        return flat

    def dump(self) -> str:
        lines = [f"{key} = {format_value(value)}" for key, value in sorted(self.as_flat().items())]
        return "\n".join(lines) + "\n"

    def save(self, directory=None) -> Path:
        directory = Path(directory if directory is not None else self.out)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / RUN_CONFIG_NAME
        path.write_text(self.dump(), encoding="utf-8")
        return path

    @staticmethod
    def _from_dict(values: dict) -> "RunConfig":
        values = dict(values)
        try:
            command = str(values.pop("command"))
        except KeyError as exc:
            raise ConfigError("run config has no 'command'") from exc
        seed = resolve_seed(file_value=values.pop("seed", None), env={})
        out = str(values.pop("out", "."))
        return RunConfig(command, seed, out, values)

    @staticmethod
    def from_file(path) -> "RunConfig":
        return RunConfig._from_dict(load_config(path))
