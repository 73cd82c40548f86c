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
Markov decision processes with recursive non-linear discounting
"""

__version__ = "0.1.0"
__author__ = "Gowtham A Rao"
__email__ = "gowtham.rao@coreason.ai"

from .archive import PresetArchive
from .core import FiniteModel, StationaryPolicy, ValueTable, validate_model
from .discount import (
    DiscountFunction,
    catalog,
    check_discount,
    make_linear,
    make_log_blend,
    make_sign_effect,
)
from .solver import howard_solve, truncation_solve, value_iterate

__all__ = [
    "PresetArchive",
    "FiniteModel",
    "StationaryPolicy",
    "ValueTable",
    "validate_model",
    "DiscountFunction",
    "catalog",
    "check_discount",
    "make_linear",
    "make_log_blend",
    "make_sign_effect",
    "value_iterate",
    "howard_solve",
    "truncation_solve",
]
