# beamcast/log.py

import logging
import os
import sys
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
ROOT_LOGGER = "beamcast"

_configured = False


def configure_logging(level: Optional[str] = None) -> None:
    """Attaches a single stderr handler to the ``beamcast`` logger.

    The level comes from the argument, else ``BEAMCAST_LOG_LEVEL``, else INFO.
    Calling it again only changes the level.
    """
    global _configured
    root = logging.getLogger(ROOT_LOGGER)
    name = (level or os.getenv("BEAMCAST_LOG_LEVEL") or "INFO").upper()
    root.setLevel(getattr(logging, name, logging.INFO))
    if not _configured:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        root.propagate = False
        _configured = True


def get_logger(name: str) -> logging.Logger:
    if not name.startswith(ROOT_LOGGER):
        name = f"{ROOT_LOGGER}.{name}"
    return logging.getLogger(name)
