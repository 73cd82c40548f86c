# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_nonlin_mdp

"""
Finite MDP data model, weighted-norm arithmetic over the extended reals, and the
checker for the utility bounds and weight drift the solver relies on.
"""

import json
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Annotated, Any, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, PlainValidator, field_validator, model_validator

from coreason_nonlin_mdp.exceptions import BoundError, ParamError, StochasticityError, WeightError
from coreason_nonlin_mdp.utils.logger import logger

NEG_INF = float("-inf")
ROW_SUM_TOL = 1e-12
BOUND_FLOOR = 1e-9

FloatArray = NDArray[np.float64]
Label = Union[float, str, None]


class UtilityMode(str, Enum):
    BOUNDED = "bounded"
    UNBOUNDED_BELOW = "unbounded_below"


def _frozen_array(values: Any) -> FloatArray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


ArrayField = Annotated[FloatArray, PlainValidator(_frozen_array)]


class FiniteModel(BaseModel):
    """
    A discretized MDP. Tables are dense; entries for inadmissible (x, a) pairs are ignored.

    transition has shape (S, A, S), utility (S, A), weight (S,).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    states: List[Label] = Field(..., min_length=1, description="State labels or grid coordinates (metadata only)")
    actions: List[Label] = Field(..., min_length=1, description="Global action universe")
    admissible: List[List[int]] = Field(..., description="Admissible action indices per state")
    transition: ArrayField = Field(..., description="q[x][a][y]")
    utility: ArrayField = Field(..., description="u[x][a], -inf allowed in unbounded_below mode")
    weight: ArrayField = Field(..., description="omega[x] >= 1")
    mode: UtilityMode = Field(default=UtilityMode.BOUNDED)

    @model_validator(mode="after")
    def _check_shapes(self) -> "FiniteModel":
        s, a = len(self.states), len(self.actions)
        if self.transition.shape != (s, a, s):
            raise ParamError(f"transition must have shape {(s, a, s)}, got {self.transition.shape}")
        if self.utility.shape != (s, a):
            raise ParamError(f"utility must have shape {(s, a)}, got {self.utility.shape}")
        if self.weight.shape != (s,):
            raise ParamError(f"weight must have shape {(s,)}, got {self.weight.shape}")
        if len(self.admissible) != s:
            raise ParamError(f"admissible must list actions for all {s} states")
        for x, acts in enumerate(self.admissible):
            if not acts:
                raise ParamError(f"state {x} has no admissible action")
            if any(not 0 <= i < a for i in acts):
                raise ParamError(f"state {x} lists an action index outside [0, {a})")
        return self

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @cached_property
    def mask(self) -> NDArray[np.bool_]:
        """Boolean (S, A) table of admissible pairs."""
        m = np.zeros((self.n_states, self.n_actions), dtype=bool)
        for x, acts in enumerate(self.admissible):
            m[x, acts] = True
        return m

    def with_utility(self, utility: ArrayLike, mode: Optional[UtilityMode] = None) -> "FiniteModel":
        """Copy of this model with a replaced utility table."""
        return FiniteModel(
            states=self.states,
            actions=self.actions,
            admissible=self.admissible,
            transition=self.transition,
            utility=utility,
            weight=self.weight,
            mode=mode or self.mode,
        )


class ModelConstants(BaseModel):
    model_config = ConfigDict(frozen=True)

    b: float = Field(..., gt=0.0, description="Lower utility bound multiplier (inf when unbounded below)")
    c: float = Field(..., gt=0.0, description="Upper utility bound multiplier")
    z: float = Field(..., gt=0.0, description="max{b, c}")
    alpha: float = Field(..., gt=0.0, description="Weight drift constant")
    alpha_pair: Tuple[int, int] = Field(..., description="(x, a) attaining alpha")
    mode: UtilityMode


class ValueTable(BaseModel):
    """Per-state extended-real values."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: ArrayField
    allows_neg_inf: bool = False

    @model_validator(mode="after")
    def _check_finite(self) -> "ValueTable":
        if np.isnan(self.values).any() or np.isposinf(self.values).any():
            raise BoundError("value tables admit neither NaN nor +inf")
        if not self.allows_neg_inf and np.isneginf(self.values).any():
            raise BoundError("bounded value table contains -inf")
        return self

    @classmethod
    def zeros(cls, model: FiniteModel) -> "ValueTable":
        return cls(values=np.zeros(model.n_states))

    def __len__(self) -> int:
        return int(self.values.shape[0])


class StationaryPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    choice: Tuple[int, ...] = Field(..., min_length=1, description="Action index chosen at each state")

    def check(self, model: FiniteModel) -> "StationaryPolicy":
        """Raise ParamError unless every choice is admissible in `model`."""
        if len(self.choice) != model.n_states:
            raise ParamError(f"policy covers {len(self.choice)} states, model has {model.n_states}")
        for x, a in enumerate(self.choice):
            if a not in model.admissible[x]:
                raise ParamError(f"action {a} is not admissible at state {x}")
        return self

    @classmethod
    def first_admissible(cls, model: FiniteModel) -> "StationaryPolicy":
        return cls(choice=tuple(min(acts) for acts in model.admissible))


ValueLike = Union[ValueTable, ArrayLike]


def as_values(v: ValueLike) -> FloatArray:
    """Plain float array view of a ValueTable or array-like."""
    if isinstance(v, ValueTable):
        return v.values
    return np.asarray(v, dtype=np.float64)


def extended_expectation(q: FloatArray, w: FloatArray) -> FloatArray:
    """
    Sum over the last axis of q * w where w may hold -inf.
    Zero-probability successors contribute nothing, so 0 * (-inf) never turns into NaN.
    """
    if np.isfinite(w).all():
        return np.asarray(q @ w, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        terms = np.where(q > 0.0, q * w, 0.0)
    return np.asarray(terms.sum(axis=-1), dtype=np.float64)


def weighted_norm(v: ValueLike, model: FiniteModel) -> float:
    """max_x |v(x)| / omega(x)."""
    arr = as_values(v)
    if not np.isfinite(arr).all():
        raise BoundError("weighted norm is only defined for finite value tables")
    return float(np.max(np.abs(arr) / model.weight))


def weighted_diff(v1: ValueLike, v2: ValueLike, model: FiniteModel) -> float:
    return weighted_norm(as_values(v1) - as_values(v2), model)


def validate_model(model: FiniteModel, mode: Optional[UtilityMode] = None) -> ModelConstants:
    """
    Check row-stochasticity, omega >= 1 and the utility bounds, then return b, c, z and alpha.

    :param model: The model to check.
    :param mode: Overrides model.mode when given.
    :raises StochasticityError: A row of q is negative somewhere or sums away from 1.
    :raises WeightError: omega(x) < 1 somewhere.
    :raises BoundError: -inf utilities in bounded mode, or +inf/NaN utilities.
    """
    mode = mode or model.mode
    mask = model.mask
    q = model.transition

    if (q[mask] < 0.0).any():
        raise StochasticityError("transition table has negative probabilities")
    row_sums = q.sum(axis=2)
    off = np.abs(row_sums - 1.0)
    off[~mask] = 0.0
    if off.max() > ROW_SUM_TOL:
        x, a = np.unravel_index(int(np.argmax(off)), off.shape)
        msg = f"transition row (x={x}, a={a}) sums to {row_sums[x, a]:.17g}"
        logger.error(msg)
        raise StochasticityError(msg)

    if not np.isfinite(model.weight).all() or (model.weight < 1.0).any():
        x = int(np.argmin(model.weight))
        msg = f"weight at state {x} is {model.weight[x]}, must be a finite real >= 1"
        logger.error(msg)
        raise WeightError(msg)

    u = model.utility[mask]
    if np.isnan(u).any() or np.isposinf(u).any():
        raise BoundError("utility table has NaN or +inf entries")
    if mode == UtilityMode.BOUNDED and np.isneginf(u).any():
        msg = "utility table has -inf entries in bounded mode"
        logger.error(msg)
        raise BoundError(msg)

    ratio = np.where(mask, model.utility / model.weight[:, None], np.nan)
    upper = float(np.nanmax(ratio))
    c = upper if upper > 0.0 else BOUND_FLOOR
    if mode == UtilityMode.BOUNDED:
        lower = float(np.nanmax(-ratio))
        b = lower if lower > 0.0 else BOUND_FLOOR
    else:
        b = float("inf")

    drift = np.where(mask, (q @ model.weight) / model.weight[:, None], -np.inf)
    flat = int(np.argmax(drift))
    x_star, a_star = np.unravel_index(flat, drift.shape)
    alpha = float(drift[x_star, a_star])

    constants = ModelConstants(
        b=b,
        c=c,
        z=max(b, c),
        alpha=alpha,
        alpha_pair=(int(x_star), int(a_star)),
        mode=mode,
    )
    logger.debug(f"validate_model: S={model.n_states} A={model.n_actions} -> {constants}")
    return constants


class ModelDocument(BaseModel):
    """On-disk JSON layout of a FiniteModel."""

    states: List[Label]
    actions: List[Label]
    admissible: List[List[int]]
    transition: List[List[List[float]]]
    utility: List[List[Union[float, str]]]
    weight: List[float]
    mode: UtilityMode = UtilityMode.BOUNDED

    @field_validator("utility")
    @classmethod
    def _only_neg_inf_strings(cls, rows: List[List[Union[float, str]]]) -> List[List[Union[float, str]]]:
        for row in rows:
            for entry in row:
                if isinstance(entry, str) and entry != "-inf":
                    raise ValueError(f"utility entries must be numbers or the string '-inf', got {entry!r}")
        return rows


def model_from_document(doc: ModelDocument) -> FiniteModel:
    utility = [[NEG_INF if isinstance(e, str) else e for e in row] for row in doc.utility]
    return FiniteModel(
        states=doc.states,
        actions=doc.actions,
        admissible=doc.admissible,
        transition=doc.transition,
        utility=utility,
        weight=doc.weight,
        mode=doc.mode,
    )


def model_to_document(model: FiniteModel) -> ModelDocument:
    utility: List[List[Union[float, str]]] = [
        ["-inf" if np.isneginf(e) else float(e) for e in row] for row in model.utility
    ]
    return ModelDocument(
        states=model.states,
        actions=model.actions,
        admissible=model.admissible,
        transition=model.transition.tolist(),
        utility=utility,
        weight=model.weight.tolist(),
        mode=model.mode,
    )


def load_model(path: Union[str, Path]) -> FiniteModel:
    """Read a model JSON file. Pydantic errors surface as ValueError."""
    content = json.loads(Path(path).read_text(encoding="utf-8"))
    return model_from_document(ModelDocument.model_validate(content))


def dump_model(model: FiniteModel, path: Union[str, Path]) -> None:
    Path(path).write_text(model_to_document(model).model_dump_json(indent=2), encoding="utf-8")


def permute_states(model: FiniteModel, order: Sequence[int]) -> FiniteModel:
    """Relabel states so that new state i is old state order[i]."""
    perm = np.asarray(order, dtype=int)
    if sorted(perm.tolist()) != list(range(model.n_states)):
        raise ParamError("order must be a permutation of the state indices")
    return FiniteModel(
        states=[model.states[i] for i in perm],
        actions=model.actions,
        admissible=[model.admissible[i] for i in perm],
        transition=model.transition[perm][:, :, perm],
        utility=model.utility[perm],
        weight=model.weight[perm],
        mode=model.mode,
    )
