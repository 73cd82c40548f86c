# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_nonlin_mdp

import os
import sys
from pathlib import Path

from loguru import logger

__all__ = ["logger", "configure_verbosity"]

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
    "<level>{message}</level>"
)

_console_level = os.environ.get("NONLIN_MDP_LOG_LEVEL", "INFO").upper()
_console_sink_id: int

logger.remove()

# Sink 1: Stderr (Human-readable). Stdout stays free for CLI payloads.
_console_sink_id = logger.add(sys.stderr, level=_console_level, format=CONSOLE_FORMAT)

log_path = Path(os.environ.get("NONLIN_MDP_LOG_DIR", "logs"))
if not log_path.exists():
    log_path.mkdir(parents=True, exist_ok=True)

# Sink 2: File (JSON, Rotation, Retention). Solver traces are DEBUG and stay out of it.
logger.add(
    str(log_path / "app.log"),
    rotation="500 MB",
    retention="10 days",
    serialize=True,
    enqueue=True,
    level="INFO",
)


def configure_verbosity(level: str) -> None:
    """
    Swap the console sink for one at `level` (e.g. "DEBUG" to watch iteration traces).
    The file sink is left untouched.
    """
    global _console_sink_id
    logger.remove(_console_sink_id)
    _console_sink_id = logger.add(sys.stderr, level=level.upper(), format=CONSOLE_FORMAT)
