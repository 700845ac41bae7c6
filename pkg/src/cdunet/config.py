"""Plain-text ``key = value`` configuration files."""

import os
import shutil
from importlib import resources

from loguru import logger

from .constants import CONFIG_DIR, CONFIG_FILE
from .errors import ConfigurationError


def parse_config(text, source="<string>"):
    """Parse ``key = value`` lines into a dictionary of strings.

    Blank lines and ``#`` comments are ignored; a repeated key keeps its last value.
    """
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}:{number}: missing key")
        values[key] = value
    return values


def read_default_config():
    """Return the packaged default configuration."""
    from . import defaults

    text = resources.files(defaults).joinpath("cdunet.conf").read_text()
    return parse_config(text, source="defaults/cdunet.conf")


def load_config(path=None):
    """Load configuration layered over the packaged defaults.

    Args:
        path: Explicit config file. When omitted, ``CONFIG_FILE`` is used if it exists.
    """
    values = read_default_config()
    if path is None:
        if not os.path.exists(CONFIG_FILE):
            return values
        path = CONFIG_FILE
    elif not os.path.exists(path):
        raise ConfigurationError(f"Config file not found: {path}")

    with open(path, "r") as f:
        values.update(parse_config(f.read(), source=str(path)))
    logger.debug(f"Loaded configuration from {path}")
    return values


def initialize_config():
    """Copy the packaged defaults into the configuration directory if absent."""
    from . import defaults

    if CONFIG_DIR and CONFIG_DIR != ".":
        os.makedirs(CONFIG_DIR, exist_ok=True)

    if os.path.isdir(CONFIG_FILE):
        raise ConfigurationError(f"{CONFIG_FILE} is a directory")

    if os.path.exists(CONFIG_FILE):
        logger.info(f"Found existing {CONFIG_FILE}")
        return CONFIG_FILE

    source = resources.files(defaults).joinpath("cdunet.conf")
    with resources.as_file(source) as src_path:
        shutil.copy(src_path, CONFIG_FILE)
    logger.info(f"Created {CONFIG_FILE} from defaults")
    return CONFIG_FILE
