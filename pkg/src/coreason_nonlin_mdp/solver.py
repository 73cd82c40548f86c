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
Dynamic-programming operators S, T and T_f for recursive discounted utility, and the
algorithms built on them: value iteration with certified bounds, stationary-policy
evaluation, finite-horizon evaluation, maximiser sets, Howard improvement and the
truncation scheme for utilities unbounded below.
"""

from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from coreason_nonlin_mdp.config import DEFAULT_SETTINGS, SolverSettings
from coreason_nonlin_mdp.core import (
    FiniteModel,
    FloatArray,
    ModelConstants,
    StationaryPolicy,
    UtilityMode,
    ValueLike,
    ValueTable,
    as_values,
    extended_expectation,
    validate_model,
    weighted_diff,
    weighted_norm,
)
from coreason_nonlin_mdp.discount import (
    DiscountFunction,
    GammaIterates,
    check_drift_condition,
    gamma_tilde,
    gamma_tilde_iterates,
)
from coreason_nonlin_mdp.exceptions import (
    CycleError,
    IterationCapError,
    MonotonicityViolation,
    NotConvergedError,
    ParamError,
)
from coreason_nonlin_mdp.utils.logger import logger


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    ITERATION_CAP = "iteration_cap"


class TraceRecord(BaseModel):
    iter: int = Field(..., ge=0)
    succ_diff_weighted: float
    apriori_bound: Optional[float] = Field(default=None, description="gamma~^(n)(L~(z)); absent for Howard")
    residual: float = Field(..., description="Weighted Bellman residual of the iterate")


class SolveReport(BaseModel):
    value: ValueTable
    policy: StationaryPolicy
    iterations: int
    trace: List[TraceRecord] = Field(default_factory=list)
    status: SolveStatus
    constants: Optional[ModelConstants] = None
    l_tilde: Optional[GammaIterates] = None

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED

    @property
    def final_residual(self) -> float:
        return self.trace[-1].residual if self.trace else float("nan")


class MaximiserSets(BaseModel):
    per_iteration: List[List[List[int]]] = Field(..., description="A*_n(x) for n = 1..n_max")
    limit: List[List[int]] = Field(..., description="A*(x) from the converged value")
    recurring: List[List[int]] = Field(..., description="Actions present in every A*_n for n >= tail_from")
    included: List[bool]
    tail_from: int

    @property
    def all_included(self) -> bool:
        return all(self.included)


class HowardResult(BaseModel):
    report: SolveReport
    policies: List[StationaryPolicy]
    values: List[ValueTable]
    improved_states: List[List[int]] = Field(..., description="States whose action changed after each evaluation")


class TruncationReport(BaseModel):
    schedule: List[int]
    values: List[ValueTable]
    v_inf: ValueTable
    stabilized: List[bool]
    policy: StationaryPolicy
    monotone: bool
    statuses: List[SolveStatus]


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def apply_S(
    model: FiniteModel,
    d: DiscountFunction,
    v: ValueLike,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> FloatArray:
    """
    Sv(x, a) = u(x, a) + sum_y delta(v(y)) q(y | x, a).

    Returns an (S, A) array; inadmissible pairs hold NaN and -inf propagates.
    """
    dv = d.delta(as_values(v))
    n = model.n_states
    if settings.workers > 1 and n > 1:
        chunks = np.array_split(np.arange(n), min(settings.workers, n))
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda idx: extended_expectation(model.transition[idx], dv), chunks))
        cont = np.concatenate(parts, axis=0)
    else:
        cont = extended_expectation(model.transition, dv)
    sv = model.utility + cont
    return np.where(model.mask, sv, np.nan)


def _argmax_sets(sv: FloatArray, model: FiniteModel, tie_tol: float) -> Tuple[FloatArray, List[List[int]]]:
    best = np.nanmax(sv, axis=1)
    sets = []
    for x, acts in enumerate(model.admissible):
        row = sv[x]
        if np.isneginf(best[x]):
            sets.append(sorted(acts))
        else:
            sets.append(sorted(a for a in acts if row[a] >= best[x] - tie_tol))
    return best, sets


def _greedy(sets: List[List[int]]) -> StationaryPolicy:
    return StationaryPolicy(choice=tuple(s[0] for s in sets))


def bellman_T(
    model: FiniteModel,
    d: DiscountFunction,
    v: ValueLike,
    tie_tol: float = 0.0,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> Tuple[ValueTable, List[List[int]]]:
    """Tv(x) = max_a Sv(x, a), with every maximiser per state (ties within tie_tol kept)."""
    sv = apply_S(model, d, v, settings)
    best, sets = _argmax_sets(sv, model, tie_tol)
    return ValueTable(values=best, allows_neg_inf=bool(np.isneginf(best).any())), sets


def policy_T(
    model: FiniteModel,
    d: DiscountFunction,
    f: StationaryPolicy,
    v: ValueLike,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> ValueTable:
    """T_f v(x) = Sv(x, f(x))."""
    f.check(model)
    sv = apply_S(model, d, v, settings)
    out = sv[np.arange(model.n_states), np.asarray(f.choice)]
    return ValueTable(values=out, allows_neg_inf=bool(np.isneginf(out).any()))


def pointwise_residual(
    model: FiniteModel,
    d: DiscountFunction,
    v: ValueLike,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> FloatArray:
    """|Tv(x) - v(x)| / omega(x) for each state."""
    tv, _ = bellman_T(model, d, v, settings=settings)
    diff = tv.values - as_values(v)
    return np.asarray(np.abs(diff) / model.weight, dtype=np.float64)


def bellman_residual(
    model: FiniteModel,
    d: DiscountFunction,
    v: ValueLike,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> float:
    tv, _ = bellman_T(model, d, v, settings=settings)
    return weighted_diff(tv, v, model)


# ---------------------------------------------------------------------------
# Value iteration and policy evaluation
# ---------------------------------------------------------------------------


def _check_cap(name: str, cap: int) -> None:
    if cap < 1:
        raise ParamError(f"{name} must be at least 1, got {cap}")


def _bounded_constants(model: FiniteModel, d: DiscountFunction) -> ModelConstants:
    if model.mode != UtilityMode.BOUNDED:
        raise ParamError("this algorithm needs a bounded model; use truncation_solve for unbounded utilities")
    constants = validate_model(model, UtilityMode.BOUNDED)
    check_drift_condition(d, constants.alpha)
    return constants


def value_iterate(
    model: FiniteModel,
    d: DiscountFunction,
    tol: Optional[float] = None,
    cap: Optional[int] = None,
    v0: Optional[ValueLike] = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> SolveReport:
    """
    Iterate v_{n+1} = T v_n from v_0 = 0 (or v0).

    Stops once the a-priori tail gamma~^(n)(L~(z) + |v0|) is below tol, or once both the
    successive weighted difference and the Bellman residual are. Hitting the cap returns the
    last iterate with status ITERATION_CAP.
    """
    tol = settings.tol if tol is None else tol
    cap = settings.max_iters if cap is None else cap
    _check_cap("cap", cap)
    constants = _bounded_constants(model, d)
    lt = gamma_tilde_iterates(d, constants.alpha, constants.z, tol=settings.lt_tol, cap=settings.lt_cap)
    g = gamma_tilde(d, constants.alpha)

    v = np.zeros(model.n_states) if v0 is None else as_values(v0).copy()
    apriori = lt.L_tilde + weighted_norm(v, model)
    logger.info(f"value_iterate: S={model.n_states} A={model.n_actions} delta={d.name} L~={lt.L_tilde:.6g}")

    tv, _ = bellman_T(model, d, v, settings=settings)
    trace: List[TraceRecord] = []
    status = SolveStatus.ITERATION_CAP
    sets: List[List[int]] = [[acts[0]] for acts in model.admissible]
    for n in range(1, cap + 1):
        v_new = tv.values
        tv, sets = bellman_T(model, d, v_new, settings=settings)
        apriori = g(apriori)
        succ = weighted_diff(v_new, v, model)
        resid = weighted_diff(tv, v_new, model)
        trace.append(TraceRecord(iter=n, succ_diff_weighted=succ, apriori_bound=apriori, residual=resid))
        logger.debug(f"iter {n}: succ={succ:.3e} apriori={apriori:.3e} residual={resid:.3e}")
        v = v_new
        if apriori < tol or (succ < tol and resid < tol):
            status = SolveStatus.CONVERGED
            break

    if status == SolveStatus.ITERATION_CAP:
        logger.warning(f"value_iterate hit the cap of {cap} iterations (residual {trace[-1].residual:.3e})")
    else:
        logger.info(f"value_iterate converged in {len(trace)} iterations (residual {trace[-1].residual:.3e})")
    return SolveReport(
        value=ValueTable(values=v),
        policy=_greedy(sets),
        iterations=len(trace),
        trace=trace,
        status=status,
        constants=constants,
        l_tilde=lt,
    )


def _iterate_policy(
    model: FiniteModel,
    d: DiscountFunction,
    f: StationaryPolicy,
    tol: float,
    cap: int,
    apriori: float,
    alpha: float,
    settings: SolverSettings,
) -> FloatArray:
    g = gamma_tilde(d, alpha)
    idx = (np.arange(model.n_states), np.asarray(f.choice))
    v = np.zeros(model.n_states)
    tv = apply_S(model, d, v, settings)[idx]
    for n in range(1, cap + 1):
        v_new = tv
        tv = apply_S(model, d, v_new, settings)[idx]
        apriori = g(apriori)
        succ = weighted_diff(v_new, v, model)
        resid = weighted_diff(tv, v_new, model)
        v = v_new
        if apriori < tol or (succ < tol and resid < tol):
            logger.debug(f"policy evaluation settled after {n} sweeps")
            return v
    raise IterationCapError(
        f"policy evaluation did not settle in {cap} sweeps", best=ValueTable(values=v), iterations=cap
    )


def evaluate_stationary(
    model: FiniteModel,
    d: DiscountFunction,
    f: StationaryPolicy,
    tol: Optional[float] = None,
    cap: Optional[int] = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> ValueTable:
    """
    U(., f) as the fixed point of T_f reached from v_0 = 0.

    :raises IterationCapError: The sweep did not settle within `cap`.
    """
    tol = settings.tol if tol is None else tol
    cap = settings.max_iters if cap is None else cap
    _check_cap("cap", cap)
    f.check(model)
    constants = _bounded_constants(model, d)
    lt = gamma_tilde_iterates(d, constants.alpha, constants.z, tol=settings.lt_tol, cap=settings.lt_cap)
    return ValueTable(values=_iterate_policy(model, d, f, tol, cap, lt.L_tilde, constants.alpha, settings))


def evaluate_finite_horizon(
    model: FiniteModel,
    d: DiscountFunction,
    policy_seq: Sequence[StationaryPolicy],
    n: int,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> ValueTable:
    """U_n = T_{pi_1} ... T_{pi_n} 0, composed backwards from the last stage."""
    if n < 1:
        raise ParamError(f"horizon must be at least 1, got {n}")
    if len(policy_seq) < n:
        raise ParamError(f"need {n} decision rules, got {len(policy_seq)}")
    w: ValueLike = np.zeros(model.n_states)
    for k in range(n - 1, -1, -1):
        w = policy_T(model, d, policy_seq[k], w, settings)
    assert isinstance(w, ValueTable)
    return w


# ---------------------------------------------------------------------------
# Policy iteration
# ---------------------------------------------------------------------------


def policy_iteration_sets(
    model: FiniteModel,
    d: DiscountFunction,
    n_max: int = 200,
    gap_tol: Optional[float] = None,
    solved: Optional[SolveReport] = None,
    tail_from: Optional[int] = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> MaximiserSets:
    """
    Maximiser sets A*_n(x) of u + sum delta(V_{n-1}) q with V_n = T^(n) 0, the limit sets A*(x)
    from the converged value, and whether every action recurring from `tail_from` on lies in A*(x).

    :raises NotConvergedError: No converged value function is available.
    """
    gap_tol = settings.gap_tol if gap_tol is None else gap_tol
    _check_cap("n_max", n_max)
    tail_from = max(1, n_max // 2) if tail_from is None else tail_from
    if not 1 <= tail_from <= n_max:
        raise ParamError(f"tail_from must lie in [1, {n_max}], got {tail_from}")
    if solved is None:
        solved = value_iterate(model, d, settings=settings)
    if not solved.converged:
        raise NotConvergedError("policy_iteration_sets needs a converged value function")

    per_iteration: List[List[List[int]]] = []
    v: FloatArray = np.zeros(model.n_states)
    for _ in range(n_max):
        best, sets = _argmax_sets(apply_S(model, d, v, settings), model, gap_tol)
        per_iteration.append(sets)
        v = best

    _, limit = _argmax_sets(apply_S(model, d, solved.value, settings), model, gap_tol)
    recurring: List[List[int]] = []
    included: List[bool] = []
    for x in range(model.n_states):
        common = set(per_iteration[tail_from - 1][x])
        for sets in per_iteration[tail_from:]:
            common &= set(sets[x])
        recurring.append(sorted(common))
        included.append(common <= set(limit[x]))

    if not all(included):
        outside = [x for x, ok in enumerate(included) if not ok]
        logger.warning(f"recurring maximisers outside A*(x) at states {outside}")
    return MaximiserSets(
        per_iteration=per_iteration,
        limit=limit,
        recurring=recurring,
        included=included,
        tail_from=tail_from,
    )


def howard_solve(
    model: FiniteModel,
    d: DiscountFunction,
    f0: Optional[StationaryPolicy] = None,
    tol: Optional[float] = None,
    cap: Optional[int] = None,
    gap_tol: Optional[float] = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> HowardResult:
    """
    Howard improvement. Evaluate U_{f_k}; at states where some action beats U_{f_k}(x) by more
    than gap_tol switch to the lowest-index such action; keep f_k(x) elsewhere.
    Stops when no state can improve, at which point U_{f_k} = v*.

    :raises CycleError: A policy comes back without any improvement.
    :raises IterationCapError: More than `cap` outer iterations.
    """
    gap_tol = settings.gap_tol if gap_tol is None else gap_tol
    cap = settings.max_iters if cap is None else cap
    _check_cap("cap", cap)
    # evaluations need to be sharper than the improvement margin
    eval_tol = min(settings.tol if tol is None else tol, gap_tol * 1e-3) if gap_tol > 0.0 else settings.lt_tol
    f = (f0 or StationaryPolicy.first_admissible(model)).check(model)
    constants = _bounded_constants(model, d)
    lt = gamma_tilde_iterates(d, constants.alpha, constants.z, tol=settings.lt_tol, cap=settings.lt_cap)
    logger.info(f"howard_solve: S={model.n_states} A={model.n_actions} delta={d.name}")

    policies: List[StationaryPolicy] = []
    values: List[ValueTable] = []
    improved_states: List[List[int]] = []
    trace: List[TraceRecord] = []
    seen = {f.choice}
    prev: Optional[FloatArray] = None
    for k in range(cap):
        u_f = _iterate_policy(model, d, f, eval_tol, settings.max_iters, lt.L_tilde, constants.alpha, settings)
        sv = apply_S(model, d, u_f, settings)
        best = np.nanmax(sv, axis=1)
        beats = model.mask & (np.where(model.mask, sv, -np.inf) > (u_f + gap_tol)[:, None])
        improving = np.where(beats.any(axis=1))[0]
        policies.append(f)
        values.append(ValueTable(values=u_f))
        succ = 0.0 if prev is None else weighted_diff(u_f, prev, model)
        trace.append(TraceRecord(iter=k, succ_diff_weighted=succ, residual=weighted_diff(best, u_f, model)))
        prev = u_f

        if improving.size == 0:
            logger.info(f"howard_solve: no improvement left after {k + 1} evaluations")
            return HowardResult(
                report=SolveReport(
                    value=ValueTable(values=u_f),
                    policy=f,
                    iterations=k + 1,
                    trace=trace,
                    status=SolveStatus.CONVERGED,
                    constants=constants,
                    l_tilde=lt,
                ),
                policies=policies,
                values=values,
                improved_states=improved_states,
            )

        choice = list(f.choice)
        for x in improving:
            choice[int(x)] = int(np.argmax(beats[x]))
        improved_states.append([int(x) for x in improving])
        f = StationaryPolicy(choice=tuple(choice))
        if f.choice in seen:
            msg = f"howard_solve revisited policy {f.choice}; gap_tol={gap_tol:g} is below the evaluation noise"
            logger.error(msg)
            raise CycleError(msg)
        seen.add(f.choice)
        logger.debug(f"howard iteration {k}: improved {improving.size} states")

    raise IterationCapError(f"howard_solve did not terminate in {cap} improvements", best=values[-1], iterations=cap)


# ---------------------------------------------------------------------------
# Truncation for utilities unbounded below
# ---------------------------------------------------------------------------


def truncation_solve(
    model: FiniteModel,
    d: DiscountFunction,
    K_schedule: Optional[Sequence[int]] = None,
    tol: Optional[float] = None,
    cap: Optional[int] = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> TruncationReport:
    """
    Solve the clamped models u^K = max{u, 1 - K} along an increasing K schedule and take the
    last as the estimate of the limit. Values must be non-increasing in K.

    :raises ParamError: Schedule not strictly increasing.
    :raises MonotonicityViolation: Some state's value rose by more than the monotonicity tolerance.
    """
    schedule = list(settings.truncation_schedule if K_schedule is None else K_schedule)
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:], strict=False)):
        raise ParamError(f"K schedule must be non-empty and strictly increasing, got {schedule}")
    tol = settings.truncation_tol if tol is None else tol
    validate_model(model)
    logger.info(f"truncation_solve: {len(schedule)} truncation levels up to K={schedule[-1]}, delta={d.name}")

    values: List[ValueTable] = []
    statuses: List[SolveStatus] = []
    for K in schedule:
        clamped = model.with_utility(np.maximum(model.utility, 1.0 - K), UtilityMode.BOUNDED)
        report = value_iterate(clamped, d, tol=tol, cap=cap, settings=settings)
        if values:
            rise = (report.value.values - values[-1].values) / model.weight
            if rise.max() > settings.monotonicity_tol:
                x = int(np.argmax(rise))
                prev_K = schedule[len(values) - 1]
                msg = f"value at state {x} rose by {rise[x]:.3e} (omega units) from K={prev_K} to K={K}"
                logger.error(msg)
                raise MonotonicityViolation(msg)
        values.append(report.value)
        statuses.append(report.status)

    v_inf = values[-1]
    if len(values) > 1:
        drift = np.abs(values[-1].values - values[-2].values) / model.weight
        stabilized = [bool(s) for s in drift <= settings.stabilization_tol]
    else:
        stabilized = [False] * model.n_states
    _, sets = _argmax_sets(apply_S(model, d, v_inf, settings), model, 0.0)
    return TruncationReport(
        schedule=schedule,
        values=values,
        v_inf=v_inf,
        stabilized=stabilized,
        policy=_greedy(sets),
        monotone=True,
        statuses=statuses,
    )
