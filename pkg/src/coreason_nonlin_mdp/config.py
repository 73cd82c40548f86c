# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_nonlin_mdp

from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field


class SolverSettings(BaseModel):
    """Numeric defaults shared by the solver, oracle and CLI."""

    model_config = ConfigDict(frozen=True)

    tol: float = Field(default=1e-8, gt=0.0, description="Stopping tolerance for value iteration")
    max_iters: int = Field(default=100_000, ge=1, description="Iteration cap for every sweep loop")
    gap_tol: float = Field(default=1e-9, ge=0.0, description="Margin for strict improvements and argmax ties")
    lt_tol: float = Field(default=1e-12, gt=0.0, description="Tolerance for the L~ nested sums")
    lt_cap: int = Field(default=1_000_000, ge=1, description="Step cap for the L~ nested sums")
    truncation_schedule: Tuple[int, ...] = Field(default=tuple(2**k for k in range(17)))
    truncation_tol: float = Field(default=1e-12, gt=0.0, description="Solver tolerance inside truncation runs")
    stabilization_tol: float = Field(default=1e-8, gt=0.0, description="Per-state stabilisation in omega units")
    monotonicity_tol: float = Field(default=1e-10, ge=0.0, description="Allowed increase along the K schedule")
    oracle_node_limit: int = Field(default=1_000_000, ge=1, description="History-tree enumeration budget")
    oracle_prune: float = Field(default=1e-15, ge=0.0, description="Path probability below which trees are pruned")
    workers: int = Field(default=1, ge=1, description="Threads for the per-state sweep")


DEFAULT_SETTINGS = SolverSettings()
