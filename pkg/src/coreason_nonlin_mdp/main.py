# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_nonlin_mdp

import argparse
import json
import os
import sys
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from coreason_nonlin_mdp.archive import PresetArchive, ResolvedPreset
from coreason_nonlin_mdp.config import SolverSettings
from coreason_nonlin_mdp.core import (
    FiniteModel,
    FloatArray,
    ModelConstants,
    StationaryPolicy,
    UtilityMode,
    ValueTable,
    load_model,
    validate_model,
)
from coreason_nonlin_mdp.discount import (
    DiscountFunction,
    DiscountKind,
    DiscountReport,
    DiscountSpec,
    check_discount,
    check_drift_condition,
    gamma_tilde_iterates,
    parse_discount,
)
from coreason_nonlin_mdp.exceptions import IterationCapError, NonlinMDPError, ParamError
from coreason_nonlin_mdp.models import solve_house_selling
from coreason_nonlin_mdp.oracle import classical_discounted_VI
from coreason_nonlin_mdp.solver import (
    SolveReport,
    SolveStatus,
    evaluate_finite_horizon,
    evaluate_stationary,
    howard_solve,
    policy_iteration_sets,
    truncation_solve,
    value_iterate,
)
from coreason_nonlin_mdp.utils.logger import configure_verbosity, logger

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_ITERATION_CAP = 2
FLOAT_FORMAT = "%.17g"
OUT_ENV = "NONLIN_MDP_OUT"


class Algorithm(str, Enum):
    SOLVE = "solve"
    EVALUATE = "evaluate"
    FINITE_HORIZON = "finite-horizon"
    HOWARD = "howard"
    POLICY_SETS = "policy-sets"
    TRUNCATE = "truncate"
    HOUSE_SELLING = "house-selling"
    CHECK = "check"
    COMPARE = "compare"


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    model_path: Optional[Path] = None
    preset: Optional[str] = None
    overrides: Dict[str, Any] = Field(default_factory=dict)
    discount: Optional[str] = Field(default=None, description="Discount JSON path, inline JSON or short form")
    algorithm: Optional[Algorithm] = Field(default=None, description="Falls back to the preset's, then 'solve'")
    policy_path: Optional[Path] = None
    horizon: Optional[int] = Field(default=None, ge=1)
    tol: float = Field(default=1e-8, gt=0.0)
    max_iters: int = Field(default=100_000, ge=1)
    out: Path = Path("out")
    seed: Optional[int] = None
    parallel: int = Field(default=1, ge=1)
    force: bool = False

    @model_validator(mode="after")
    def _check_sources(self) -> "RunConfig":
        if (self.model_path is None) == (self.preset is None):
            raise ValueError("exactly one of model_path and preset is required")
        if self.overrides and self.preset is None:
            raise ValueError("overrides apply to presets only")
        if self.algorithm in (Algorithm.EVALUATE, Algorithm.FINITE_HORIZON) and self.policy_path is None:
            raise ValueError(f"algorithm {self.algorithm.value} needs a policy file")
        if self.algorithm == Algorithm.FINITE_HORIZON and self.horizon is None:
            raise ValueError("algorithm finite-horizon needs a horizon")
        return self


class LTildeSummary(BaseModel):
    z: float
    alpha: float
    L_tilde: float
    residual: float
    k_stop: int
    stop_reason: str


class RunManifest(BaseModel):
    config: RunConfig
    algorithm: Optional[Algorithm] = None
    status: str = "pending"
    exit_code: int = EXIT_OK
    n_states: Optional[int] = None
    n_actions: Optional[int] = None
    mode: Optional[UtilityMode] = None
    constants: Optional[ModelConstants] = None
    discounts: List[DiscountSpec] = Field(default_factory=list)
    discount_reports: List[DiscountReport] = Field(default_factory=list)
    drift_condition: Optional[bool] = None
    l_tilde: Optional[LTildeSummary] = None
    iterations: Optional[int] = None
    final_residual: Optional[float] = None
    details: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[Dict[str, str]] = None


class ComparisonResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    table: pd.DataFrame
    pairwise: Dict[str, float]
    oracle_diff: Dict[str, float]
    statuses: Dict[str, str]


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------


def parse_overrides(pairs: List[str]) -> Dict[str, Any]:
    """key=value pairs; values parse as JSON when they can, otherwise stay strings."""
    overrides: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key.strip():
            raise ParamError(f"override {pair!r} is not of the form key=value")
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    return overrides


def load_policies(path: Path) -> List[StationaryPolicy]:
    """
    A policy file holds one decision rule (a list of action indices, or {"choice": [...]})
    or a per-stage sequence of them.
    """
    content = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(content, dict):
        content = content.get("stages", content.get("choice"))
    if not isinstance(content, list) or not content:
        raise ParamError(f"{path} holds no decision rule")
    if all(isinstance(a, int) for a in content):
        return [StationaryPolicy(choice=tuple(content))]
    return [StationaryPolicy(choice=tuple(rule)) for rule in content]


def _load_source(
    config: RunConfig,
) -> Tuple[FiniteModel, List[DiscountFunction], Optional[ResolvedPreset]]:
    resolved = None
    if config.preset is not None:
        archive = PresetArchive()
        archive.load_defaults()
        resolved = archive.resolve(config.preset, config.overrides, seed=config.seed)
        model = resolved.built.model
    else:
        assert config.model_path is not None
        model = load_model(config.model_path)

    if config.discount is not None:
        discounts = parse_discount(config.discount)
    elif resolved is not None and resolved.discount is not None:
        discounts = [resolved.discount]
    else:
        raise ParamError("no discount function given; pass --discount")
    return model, discounts, resolved


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------


def _labels(items: List[Any]) -> List[str]:
    return ["" if s is None else str(s) for s in items]


def write_value(model: FiniteModel, value: ValueTable, out: Path) -> None:
    frame = pd.DataFrame(
        {"state_index": range(model.n_states), "state_label": _labels(model.states), "value": value.values}
    )
    frame.to_csv(out / "value.csv", index=False, float_format=FLOAT_FORMAT)


def write_policy(model: FiniteModel, policy: StationaryPolicy, out: Path) -> None:
    labels = _labels(model.actions)
    frame = pd.DataFrame(
        {
            "state_index": range(model.n_states),
            "state_label": _labels(model.states),
            "action_index": policy.choice,
            "action_label": [labels[a] for a in policy.choice],
        }
    )
    frame.to_csv(out / "policy.csv", index=False)


def write_trace(rows: List[Dict[str, Any]], out: Path, columns: List[str]) -> None:
    pd.DataFrame(rows, columns=columns).to_csv(out / "trace.csv", index=False, float_format=FLOAT_FORMAT)


def _write_report(model: FiniteModel, report: SolveReport, out: Path) -> None:
    write_value(model, report.value, out)
    write_policy(model, report.policy, out)
    write_trace(
        [r.model_dump() for r in report.trace],
        out,
        ["iter", "succ_diff_weighted", "apriori_bound", "residual"],
    )


# ---------------------------------------------------------------------------
# Algorithms
# ---------------------------------------------------------------------------


def compare_discounts(
    model: FiniteModel,
    discounts: List[DiscountFunction],
    tol: Optional[float] = None,
    settings: Optional[SolverSettings] = None,
) -> ComparisonResult:
    """
    One value_iterate per discount on the same model. Reports the max weighted difference
    for every pair and, for linear discounts, the gap to classical discounted value iteration.
    Runs that fail leave a NaN column and a flagged status.
    """
    if len(discounts) < 2:
        raise ParamError("comparison needs at least two discount functions")
    settings = settings or SolverSettings()
    tol = settings.tol if tol is None else tol
    table = pd.DataFrame({"state_index": range(model.n_states), "state_label": _labels(model.states)})
    values: Dict[str, FloatArray] = {}
    statuses: Dict[str, str] = {}
    oracle_diff: Dict[str, float] = {}
    names = []
    for i, d in enumerate(discounts):
        name = f"{i}:{d.name}"
        names.append(name)
        try:
            report = value_iterate(model, d, tol=tol, settings=settings)
            values[name] = report.value.values
            statuses[name] = report.status.value
        except NonlinMDPError as e:
            logger.error(f"compare: {d.name} failed with {type(e).__name__}: {e}")
            values[name] = np.full(model.n_states, np.nan)
            statuses[name] = f"failed: {type(e).__name__}"
            continue
        if d.kind == DiscountKind.LINEAR:
            classical, _ = classical_discounted_VI(model, float(d.params["beta"]), tol=min(tol, 1e-10))
            gap = np.abs(values[name] - classical.values) / model.weight
            table[f"oracle_diff[{name}]"] = gap
            oracle_diff[name] = float(gap.max())
    for name in names:
        table[f"value[{name}]"] = values[name]

    pairwise: Dict[str, float] = {}
    for a, b in combinations(names, 2):
        gap = np.abs(values[a] - values[b]) / model.weight
        key = f"{a}|{b}"
        table[f"diff[{key}]"] = gap
        pairwise[key] = float(gap.max())
    return ComparisonResult(table=table, pairwise=pairwise, oracle_diff=oracle_diff, statuses=statuses)


def _l_tilde_summary(d: DiscountFunction, constants: ModelConstants, settings: SolverSettings) -> LTildeSummary:
    lt = gamma_tilde_iterates(d, constants.alpha, constants.z, tol=settings.lt_tol, cap=settings.lt_cap)
    return LTildeSummary(
        z=lt.z,
        alpha=lt.alpha,
        L_tilde=lt.L_tilde,
        residual=lt.residual,
        k_stop=lt.k_stop,
        stop_reason=lt.stop_reason,
    )


def _status_code(status: SolveStatus) -> int:
    return EXIT_OK if status == SolveStatus.CONVERGED else EXIT_ITERATION_CAP


def _execute(
    algorithm: Algorithm,
    config: RunConfig,
    model: FiniteModel,
    discounts: List[DiscountFunction],
    resolved: Optional[ResolvedPreset],
    settings: SolverSettings,
    manifest: RunManifest,
) -> int:
    d = discounts[0]
    out = config.out
    if len(discounts) > 1 and algorithm != Algorithm.COMPARE:
        logger.warning(f"{len(discounts)} discount functions given; {algorithm.value} uses {d.name}")

    if algorithm == Algorithm.CHECK:
        if manifest.drift_condition is False:
            manifest.status = "drift_condition_failed"
            return EXIT_VALIDATION
        manifest.status = "checked"
        return EXIT_OK

    if algorithm == Algorithm.COMPARE:
        result = compare_discounts(model, discounts, tol=config.tol, settings=settings)
        result.table.to_csv(out / "comparison.csv", index=False, float_format=FLOAT_FORMAT)
        manifest.details = {
            "pairwise_max_weighted_diff": result.pairwise,
            "oracle_max_weighted_diff": result.oracle_diff,
            "statuses": result.statuses,
        }
        failed = [n for n, s in result.statuses.items() if s.startswith("failed")]
        capped = [n for n, s in result.statuses.items() if s == SolveStatus.ITERATION_CAP.value]
        manifest.status = "partial" if failed else ("iteration_cap" if capped else "converged")
        if failed:
            return EXIT_VALIDATION
        return EXIT_ITERATION_CAP if capped else EXIT_OK

    if algorithm in (Algorithm.SOLVE, Algorithm.POLICY_SETS):
        report = value_iterate(model, d, tol=config.tol, cap=config.max_iters, settings=settings)
        _write_report(model, report, out)
        manifest.status = report.status.value
        manifest.iterations = report.iterations
        manifest.final_residual = report.final_residual
        if algorithm == Algorithm.POLICY_SETS and report.converged:
            sets = policy_iteration_sets(model, d, solved=report, settings=settings)
            manifest.details = {
                "limit_sets": sets.limit,
                "recurring_sets": sets.recurring,
                "included": sets.included,
                "tail_from": sets.tail_from,
            }
        return _status_code(report.status)

    if algorithm == Algorithm.HOWARD:
        f0 = load_policies(config.policy_path)[0] if config.policy_path else None
        result = howard_solve(model, d, f0=f0, tol=config.tol, cap=config.max_iters, settings=settings)
        _write_report(model, result.report, out)
        manifest.status = result.report.status.value
        manifest.iterations = result.report.iterations
        manifest.details = {"improved_states": result.improved_states}
        return EXIT_OK

    if algorithm == Algorithm.EVALUATE:
        assert config.policy_path is not None
        policy = load_policies(config.policy_path)[0].check(model)
        value = evaluate_stationary(model, d, policy, tol=config.tol, cap=config.max_iters, settings=settings)
        write_value(model, value, out)
        write_policy(model, policy, out)
        manifest.status = SolveStatus.CONVERGED.value
        return EXIT_OK

    if algorithm == Algorithm.FINITE_HORIZON:
        assert config.policy_path is not None and config.horizon is not None
        rules = [rule.check(model) for rule in load_policies(config.policy_path)]
        if len(rules) == 1:
            rules = rules * config.horizon
        value = evaluate_finite_horizon(model, d, rules, config.horizon, settings=settings)
        write_value(model, value, out)
        write_policy(model, rules[0], out)
        manifest.status = "evaluated"
        manifest.details = {"horizon": config.horizon}
        return EXIT_OK

    if algorithm == Algorithm.TRUNCATE:
        trunc = truncation_solve(model, d, cap=config.max_iters, settings=settings)
        write_value(model, trunc.v_inf, out)
        write_policy(model, trunc.policy, out)
        rows = []
        for i, (K, v, status) in enumerate(zip(trunc.schedule, trunc.values, trunc.statuses, strict=True)):
            drop = float(np.max((trunc.values[i - 1].values - v.values) / model.weight)) if i else float("nan")
            rows.append({"K": K, "status": status.value, "max_decrease_weighted": drop})
        write_trace(rows, out, ["K", "status", "max_decrease_weighted"])
        manifest.status = (
            SolveStatus.CONVERGED.value
            if all(s == SolveStatus.CONVERGED for s in trunc.statuses)
            else SolveStatus.ITERATION_CAP.value
        )
        manifest.details = {"stabilized": trunc.stabilized, "monotone": trunc.monotone}
        return _status_code(SolveStatus(manifest.status))

    # house selling
    if resolved is None or resolved.house_selling is None:
        raise ParamError("house-selling runs need the house-selling preset")
    hs = resolved.house_selling
    analysis = solve_house_selling(hs.m, hs.M, hs.offers, hs.c, d, tol=config.tol, settings=settings)
    _write_report(resolved.built.model, analysis.report, out)
    manifest.status = analysis.report.status.value
    manifest.iterations = analysis.report.iterations
    manifest.final_residual = analysis.report.final_residual
    manifest.details = analysis.model_dump(mode="json", exclude={"value", "report"})
    return _status_code(analysis.report.status)


def run(config: RunConfig) -> int:
    """
    Load, validate, solve and write value.csv, policy.csv, trace.csv and manifest.json to
    config.out. Returns 0 on convergence, 2 on an iteration cap, 1 on validation errors or
    a failing discount property (unless forced).
    """
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config=config)
    settings = SolverSettings(tol=config.tol, max_iters=config.max_iters, workers=config.parallel)
    code = EXIT_OK
    try:
        model, discounts, resolved = _load_source(config)
        algorithm = config.algorithm or Algorithm(
            resolved.preset.algorithm if resolved and resolved.preset.algorithm else Algorithm.SOLVE
        )
        manifest.algorithm = algorithm
        manifest.n_states, manifest.n_actions, manifest.mode = model.n_states, model.n_actions, model.mode
        manifest.discounts = [d.to_spec() for d in discounts]
        manifest.discount_reports = [check_discount(d) for d in discounts]
        constants = validate_model(model)
        manifest.constants = constants

        failing = {r.discount: r.failures() for r in manifest.discount_reports if not r.all_passed}
        if failing:
            logger.warning(f"discount property failures: {failing}")
            if not config.force:
                manifest.status = "discount_property_failed"
                manifest.exit_code = EXIT_VALIDATION
                return EXIT_VALIDATION

        if model.mode == UtilityMode.BOUNDED:
            try:
                check_drift_condition(discounts[0], constants.alpha)
                manifest.drift_condition = True
                manifest.l_tilde = _l_tilde_summary(discounts[0], constants, settings)
            except ParamError:
                manifest.drift_condition = False
                if algorithm != Algorithm.CHECK:
                    raise

        code = _execute(algorithm, config, model, discounts, resolved, settings, manifest)
    except IterationCapError as e:
        logger.error(f"{type(e).__name__}: {e}")
        manifest.status = "iteration_cap"
        manifest.error = {"type": type(e).__name__, "message": str(e)}
        if isinstance(e.best, ValueTable) and manifest.n_states == len(e.best):
            write_value(model, e.best, out)
        code = EXIT_ITERATION_CAP
    except (NonlinMDPError, ValidationError, ValueError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        manifest.status = "error"
        manifest.error = {"type": type(e).__name__, "message": str(e)}
        code = EXIT_VALIDATION
    finally:
        if manifest.exit_code == EXIT_OK:
            manifest.exit_code = code
        (out / "manifest.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"run finished with status {manifest.status} (exit {manifest.exit_code})")
    return manifest.exit_code


def main() -> None:
    parser = argparse.ArgumentParser(description="Recursive discounted utility MDP solver")

    source_group = parser.add_mutually_exclusive_group(required=True)
    source_group.add_argument("--model", help="Path to a model JSON file")
    source_group.add_argument("--preset", help="Name of a packaged preset (growth-1, house-selling, chain, ...)")

    config_group = parser.add_argument_group("Configuration")
    config_group.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a preset or discount parameter (repeatable, JSON values)",
    )
    config_group.add_argument("--discount", help="Discount JSON file, inline JSON, or short form 'linear:beta=0.9'")
    config_group.add_argument("--algorithm", choices=[a.value for a in Algorithm], default=None)
    config_group.add_argument("--policy", help="Policy JSON file for evaluate, finite-horizon and howard")
    config_group.add_argument("--horizon", type=int, default=None, help="Stages for finite-horizon evaluation")
    config_group.add_argument("--tol", type=float, default=1e-8, help="Stopping tolerance (default: 1e-8)")
    config_group.add_argument("--max-iters", type=int, default=100_000, help="Iteration cap (default: 100000)")
    config_group.add_argument("--out", default="out", help=f"Output directory (overridden by ${OUT_ENV})")
    config_group.add_argument("--seed", type=int, default=None, help="Seed for the random preset")
    config_group.add_argument("--parallel", type=int, default=1, help="Threads for the per-state sweep")
    config_group.add_argument("--force", action="store_true", help="Run even if a discount property fails")
    config_group.add_argument("--verbose", action="store_true", help="Log per-iteration progress")

    args = parser.parse_args()
    if args.verbose:
        configure_verbosity("DEBUG")

    try:
        config = RunConfig(
            model_path=args.model,
            preset=args.preset,
            overrides=parse_overrides(args.overrides),
            discount=args.discount,
            algorithm=args.algorithm,
            policy_path=args.policy,
            horizon=args.horizon,
            tol=args.tol,
            max_iters=args.max_iters,
            out=os.environ.get(OUT_ENV) or args.out,
            seed=args.seed,
            parallel=args.parallel,
            force=args.force,
        )
    except (ValidationError, ParamError) as e:
        logger.error(f"Invalid configuration: {e}")
        sys.exit(EXIT_VALIDATION)

    sys.exit(run(config))


if __name__ == "__main__":
    main()  # pragma: no cover
