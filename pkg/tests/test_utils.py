# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_nonlin_mdp

import shutil
from importlib import reload
from pathlib import Path

import pytest
from pytest import CaptureFixture

import coreason_nonlin_mdp.utils.logger as logger_module
from coreason_nonlin_mdp.utils.logger import configure_verbosity, logger


def test_logger_initialization() -> None:
    """Test that the logger is initialized correctly and creates the log directory."""
    # Remove all handlers to release file locks on Windows
    logger.remove()

    log_path = Path("logs")
    if log_path.exists():
        shutil.rmtree(log_path)

    # Reload module to trigger execution of module-level code
    reload(logger_module)

    assert log_path.exists()
    assert log_path.is_dir()


def test_log_directory_from_environment(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    target = tmp_path / "custom-logs"
    monkeypatch.setenv("NONLIN_MDP_LOG_DIR", str(target))
    logger.remove()
    reload(logger_module)
    assert target.is_dir()

    monkeypatch.delenv("NONLIN_MDP_LOG_DIR")
    logger.remove()
    reload(logger_module)


def test_configure_verbosity(capsys: CaptureFixture[str]) -> None:
    configure_verbosity("DEBUG")
    try:
        logger.debug("sweep 7 residual 1e-3")
        assert "sweep 7 residual 1e-3" in capsys.readouterr().err
    finally:
        configure_verbosity("INFO")
    logger.debug("hidden detail")
    assert "hidden detail" not in capsys.readouterr().err


def test_logger_exports() -> None:
    assert logger is not None
    assert "configure_verbosity" in logger_module.__all__
