# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_nonlin_mdp

from typing import Optional, Tuple

import numpy as np

from coreason_nonlin_mdp.core import FiniteModel, UtilityMode
from coreason_nonlin_mdp.exceptions import ParamError


def random_model(
    n_states: int,
    n_actions: int,
    seed: Optional[int] = None,
    utility_range: Tuple[float, float] = (-1.0, 1.0),
    density: float = 1.0,
    admissible_frac: float = 1.0,
    weight_spread: float = 0.0,
    neg_inf_frac: float = 0.0,
) -> FiniteModel:
    """
    A seeded random FiniteModel for tests, benchmarks and the `random` preset.

    Transition rows keep each target with probability `density` (at least one target always
    survives) and are normalised. Every state keeps at least one admissible action.
    With weight_spread > 0, omega(x) = 1 + weight_spread * U[0, 1) and utilities scale with omega.
    With neg_inf_frac > 0 that share of admissible pairs gets u = -inf (unbounded_below mode),
    always leaving one finite action per state.
    """
    if n_states < 1 or n_actions < 1:
        raise ParamError(f"need at least one state and one action, got S={n_states}, A={n_actions}")
    if not 0.0 < density <= 1.0 or not 0.0 < admissible_frac <= 1.0:
        raise ParamError("density and admissible_frac must lie in (0, 1]")
    lo, hi = utility_range
    if hi < lo:
        raise ParamError(f"empty utility range {utility_range}")
    rng = np.random.default_rng(seed)

    q = rng.random((n_states, n_actions, n_states))
    keep = rng.random(q.shape) < density
    anchor = rng.integers(0, n_states, size=(n_states, n_actions))
    keep[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], anchor] = True
    q = np.where(keep, q + 1e-3, 0.0)
    q /= q.sum(axis=2, keepdims=True)

    admissible = []
    for _ in range(n_states):
        acts = [a for a in range(n_actions) if rng.random() < admissible_frac]
        admissible.append(acts or [int(rng.integers(0, n_actions))])

    weight = 1.0 + weight_spread * rng.random(n_states)
    utility = rng.uniform(lo, hi, size=(n_states, n_actions)) * weight[:, None]

    mode = UtilityMode.BOUNDED
    if neg_inf_frac > 0.0:
        mode = UtilityMode.UNBOUNDED_BELOW
        for x, acts in enumerate(admissible):
            safe = acts[int(rng.integers(0, len(acts)))]
            for a in acts:
                if a != safe and rng.random() < neg_inf_frac:
                    utility[x, a] = -np.inf

    return FiniteModel(
        states=list(range(n_states)),
        actions=list(range(n_actions)),
        admissible=admissible,
        transition=q,
        utility=utility,
        weight=weight,
        mode=mode,
    )
