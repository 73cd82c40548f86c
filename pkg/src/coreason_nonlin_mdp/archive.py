# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_nonlin_mdp

import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Set, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError

from coreason_nonlin_mdp.core import validate_model
from coreason_nonlin_mdp.discount import DiscountFunction, DiscountSpec, discount_from_spec
from coreason_nonlin_mdp.exceptions import PresetError
from coreason_nonlin_mdp.models import (
    BuiltModel,
    ShockDistribution,
    build_chain_counterexample,
    build_growth1,
    build_growth2,
    build_inventory,
    build_stopping,
)
from coreason_nonlin_mdp.simulation import random_model
from coreason_nonlin_mdp.utils.logger import logger


class Builder(str, Enum):
    GROWTH1 = "growth1"
    GROWTH2 = "growth2"
    INVENTORY = "inventory"
    STOPPING = "stopping"
    HOUSE_SELLING = "house_selling"
    CHAIN = "chain"
    RANDOM = "random"


class Preset(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(..., description="Name used on the command line, e.g. 'growth-1'")
    builder: Builder
    description: str = ""
    algorithm: Optional[str] = Field(default=None, description="Algorithm run when the CLI names none")
    params: Dict[str, Any] = Field(default_factory=dict)
    discount: Optional[DiscountSpec] = None


class PresetCatalog(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: str = "0.0.0"
    presets: List[Preset]


Artifact = Union[PresetCatalog, List[Preset], Preset]


class HouseSellingInputs(BaseModel):
    m: float
    M: float
    offers: ShockDistribution
    c: float


class ResolvedPreset(BaseModel):
    """A preset with overrides applied and its model built."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    preset: Preset
    params: Dict[str, Any]
    built: BuiltModel
    discount: Optional[DiscountFunction] = None
    house_selling: Optional[HouseSellingInputs] = None


def _shocks(params: Dict[str, Any], prefix: str) -> ShockDistribution:
    return ShockDistribution(support=params[f"{prefix}_support"], probs=params[f"{prefix}_probs"])


def _build(builder: Builder, p: Dict[str, Any]) -> BuiltModel:
    if builder == Builder.GROWTH1:
        return build_growth1(float(p["x_max"]), int(p["grid_n"]), _shocks(p, "shock"), float(p["eps"]))
    if builder == Builder.GROWTH2:
        return build_growth2(
            float(p["x_max"]),
            int(p["grid_n"]),
            float(p["rho"]),
            float(p["theta"]),
            float(p["sigma"]),
            float(p["r"]),
            float(p["eps"]),
            _shocks(p, "shock"),
        )
    if builder == Builder.INVENTORY:
        return build_inventory(
            float(p["stock_max"]),
            int(p["grid_n"]),
            _shocks(p, "demand"),
            float(p["p"]),
            p["order_costs"],
            float(p["a_hat"]),
            p.get("c_hat"),
        )
    if builder == Builder.STOPPING:
        return build_stopping(p["x_values"], p["q0"], p["q_rows"], p["reward"], p["cost"], p.get("weight"))
    if builder == Builder.HOUSE_SELLING:
        offers = _shocks(p, "offer")
        n = len(offers.support)
        return build_stopping(
            offers.support,
            offers.probs,
            np.tile(offers.probs, (n, 1)),
            offers.support,
            [-float(p["c"])] * n,
        )
    if builder == Builder.CHAIN:
        return build_chain_counterexample(int(p["n_states"]), float(p["beta"]))
    model = random_model(
        int(p["n_states"]),
        int(p["n_actions"]),
        seed=p.get("seed"),
        utility_range=(float(p.get("utility_low", -1.0)), float(p.get("utility_high", 1.0))),
        density=float(p.get("density", 1.0)),
        weight_spread=float(p.get("weight_spread", 0.0)),
        neg_inf_frac=float(p.get("neg_inf_frac", 0.0)),
    )
    return BuiltModel(model=model, constants=validate_model(model))


class PresetArchive:
    def __init__(self) -> None:
        self._presets: Dict[str, Preset] = {}
        self._version: str = "0.0.0"

    def load_defaults(self) -> None:
        """
        Loads the presets packaged with the library from src/coreason_nonlin_mdp/defaults.
        """
        defaults_path = Path(__file__).parent / "defaults"
        if defaults_path.exists():
            logger.debug(f"Loading presets from {defaults_path}")
            self.load_from_directory(defaults_path)
        else:
            logger.warning(f"Defaults directory not found at {defaults_path}")

    def load_from_directory(self, directory_path: Union[str, Path]) -> None:
        """
        Loads presets from all JSON files in the directory, recursively. A file holds a
        catalog, a list of presets or a single preset.

        :raises PresetError: Unparseable file or duplicate preset id.
        """
        path = Path(directory_path)
        if not path.exists():
            logger.error(f"Directory not found: {path}")
            raise FileNotFoundError(f"Directory not found: {path}")

        loaded: Dict[str, Preset] = {}
        seen: Set[str] = set()
        adapter: TypeAdapter[Artifact] = TypeAdapter(Artifact)

        for file_path in sorted(path.rglob("*.json")):
            try:
                parsed = adapter.validate_python(json.loads(file_path.read_text(encoding="utf-8")))
            except (ValidationError, json.JSONDecodeError) as e:
                logger.error(f"Failed to load {file_path}: {e}")
                raise PresetError(f"Failed to parse {file_path}: {e}") from e

            if isinstance(parsed, PresetCatalog):
                new = parsed.presets
                self._version = parsed.version
            elif isinstance(parsed, list):
                new = parsed
            else:
                new = [parsed]

            for preset in new:
                if preset.id in seen:
                    msg = f"Duplicate preset id detected: {preset.id} in {file_path}"
                    logger.error(msg)
                    raise PresetError(msg)
                seen.add(preset.id)
                loaded[preset.id] = preset
            logger.debug(f"Loaded {len(new)} presets from {file_path}")

        self._presets = loaded
        logger.debug(f"PresetArchive holds {len(self._presets)} presets")

    def names(self) -> List[str]:
        return sorted(self._presets)

    def get(self, name: str) -> Preset:
        try:
            return self._presets[name]
        except KeyError as e:
            raise PresetError(f"unknown preset {name!r}; available: {', '.join(self.names())}") from e

    def resolve(
        self,
        name: str,
        overrides: Optional[Dict[str, Any]] = None,
        seed: Optional[int] = None,
    ) -> ResolvedPreset:
        """
        Apply overrides and build the preset's model. Keys matching a builder parameter go to
        the builder, keys matching a discount parameter go to the discount.

        :raises PresetError: Unknown preset or override key.
        """
        preset = self.get(name)
        params = dict(preset.params)
        disc_params = dict(preset.discount.params) if preset.discount else {}
        for key, value in (overrides or {}).items():
            if key in params:
                params[key] = value
            elif key in disc_params:
                disc_params[key] = value
            else:
                known = sorted(set(params) | set(disc_params))
                raise PresetError(f"preset {name!r} has no parameter {key!r}; known: {', '.join(known)}")
        if seed is not None and preset.builder == Builder.RANDOM:
            params["seed"] = seed

        try:
            built = _build(preset.builder, params)
        except KeyError as e:
            raise PresetError(f"preset {name!r} is missing parameter {e}") from e
        discount = built.discount
        if preset.discount is not None:
            discount = discount_from_spec(DiscountSpec(kind=preset.discount.kind, params=disc_params))

        house = None
        if preset.builder == Builder.HOUSE_SELLING:
            house = HouseSellingInputs(
                m=float(params["m"]), M=float(params["M"]), offers=_shocks(params, "offer"), c=float(params["c"])
            )
        logger.info(f"Built preset {name!r} ({preset.builder.value}) with {built.model.n_states} states")
        return ResolvedPreset(preset=preset, params=params, built=built, discount=discount, house_selling=house)

    @property
    def version(self) -> str:
        return self._version
