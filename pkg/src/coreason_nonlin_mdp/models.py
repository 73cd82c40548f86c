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
Builders that discretize the growth, inventory and optimal-stopping applications into
FiniteModel instances, the house-selling analysis, and the shift-chain model whose Bellman
equation has many unbounded solutions.
"""

from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

from coreason_nonlin_mdp.config import DEFAULT_SETTINGS, SolverSettings
from coreason_nonlin_mdp.core import (
    FiniteModel,
    FloatArray,
    ModelConstants,
    ValueTable,
    validate_model,
)
from coreason_nonlin_mdp.discount import (
    DiscountFunction,
    make_linear,
    make_log_blend,
)
from coreason_nonlin_mdp.exceptions import BoundError, GridError, MeanShockError, ParamError
from coreason_nonlin_mdp.solver import SolveReport, value_iterate
from coreason_nonlin_mdp.utils.logger import logger

PROB_TOL = 1e-12
SPREAD_TOL = 1e-10
TIE_TOL = 1e-9
INFINITY_LABEL = "inf"


class ShockDistribution(BaseModel):
    """A finite discrete distribution on nonnegative reals (shocks, demands, offers)."""

    model_config = ConfigDict(frozen=True)

    support: List[float] = Field(..., min_length=1)
    probs: List[float] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _check(self) -> "ShockDistribution":
        if len(self.support) != len(self.probs):
            raise ParamError("support and probs must have the same length")
        if any(s < 0.0 for s in self.support):
            raise ParamError("support points must be nonnegative")
        if any(p < 0.0 for p in self.probs):
            raise ParamError("probabilities must be nonnegative")
        total = float(np.sum(self.probs))
        if abs(total - 1.0) > PROB_TOL:
            raise ParamError(f"probabilities sum to {total:.17g}, not 1")
        return self

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    @classmethod
    def uniform(cls, points: Sequence[float]) -> "ShockDistribution":
        return cls(support=list(points), probs=[1.0 / len(points)] * len(points))

    @classmethod
    def point_mass(cls, point: float) -> "ShockDistribution":
        return cls(support=[point], probs=[1.0])


class BuiltModel(BaseModel):
    """A builder's output: the model, its paired discount function and measured constants."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    model: FiniteModel
    discount: Optional[DiscountFunction] = None
    constants: ModelConstants
    notes: Dict[str, float] = Field(default_factory=dict)


class ChainModel(BuiltModel):
    beta: float

    def family(self, r: float) -> ValueTable:
        """v_r(x) = r / beta^x on states 1..n: a fixed point of T away from the last two states."""
        x = np.arange(1, self.model.n_states + 1, dtype=np.float64)
        return ValueTable(values=r / self.beta**x)

    @property
    def interior(self) -> List[int]:
        """State indices where the shift is not distorted by the terminal self-loop."""
        return list(range(self.model.n_states - 2))


class StoppingModel(BuiltModel):
    q0: List[float]

    @property
    def absorbing(self) -> int:
        return self.model.n_states - 1


class StoppingAnalysis(BaseModel):
    """Threshold structure of an i.i.d.-offer stopping problem."""

    continuation_constant: float = Field(..., description="C* = sum_y delta(v*(y)) q(y)")
    continuation_by_state: List[float]
    continuation_spread: float
    threshold: float = Field(..., description="Stop iff the offer is at least this value")
    stopping_region: List[float]
    stop_states: List[int]
    accept_probability: float
    stops_surely: bool = Field(..., description="Acceptance probability per step is positive")
    expected_stop_time: Optional[float] = None
    initial_value: float = Field(..., description="Expected optimal value before the first offer arrives")
    value: ValueTable
    report: SolveReport


def project_to_grid(values: ArrayLike, grid: ArrayLike) -> NDArray[np.intp]:
    """
    Nearest grid index for each value. Ties (up to rounding noise) go to the lower grid
    point; values outside the grid land on the boundary points.
    """
    y = np.asarray(values, dtype=np.float64)
    g = np.asarray(grid, dtype=np.float64)
    hi = np.clip(np.searchsorted(g, y, side="left"), 0, len(g) - 1)
    lo = np.clip(hi - 1, 0, len(g) - 1)
    take_lo = (y - g[lo]) - (g[hi] - y) <= TIE_TOL * (g[hi] - g[lo])
    return np.where(take_lo, lo, hi)


def _uniform_grid(x_max: float, grid_n: int) -> FloatArray:
    if grid_n < 2:
        raise GridError(f"grid needs at least 2 points, got {grid_n}")
    if not np.isfinite(x_max) or x_max <= 0.0:
        raise GridError(f"grid upper end must be a positive real, got {x_max}")
    return np.linspace(0.0, x_max, grid_n)


def _check_unit(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ParamError(f"{name} must lie in (0, 1), got {value}")


def _consumption_transition(
    grid: FloatArray,
    shocks: ShockDistribution,
    theta: Optional[float] = None,
    rho: float = 1.0,
) -> FloatArray:
    """
    (S, S, S) kernel for consuming a_j out of x_i and carrying y = x_i - a_j forward as
    y * xi, or y^theta * xi + (1 - rho) * y when theta is given.
    """
    n = len(grid)
    q = np.zeros((n, n, n))
    support = np.asarray(shocks.support)
    probs = np.asarray(shocks.probs)
    for i in range(n):
        for j in range(i + 1):
            y = grid[i] - grid[j]
            nxt = y * support if theta is None else y**theta * support + (1.0 - rho) * y
            np.add.at(q[i, j], project_to_grid(nxt, grid), probs)
    return q


def _consumption_model(grid: FloatArray, q: FloatArray, utility: FloatArray, weight: FloatArray) -> FiniteModel:
    n = len(grid)
    u = np.zeros((n, n))
    for i in range(n):
        u[i, : i + 1] = utility[: i + 1]
    return FiniteModel(
        states=[float(x) for x in grid],
        actions=[float(a) for a in grid],
        admissible=[list(range(i + 1)) for i in range(n)],
        transition=q,
        utility=u,
        weight=weight,
    )


def build_growth1(x_max: float, grid_n: int, shocks: ShockDistribution, eps: float = 0.5) -> BuiltModel:
    """
    Consumption with multiplicative shocks: consume a <= x, carry (x - a) * xi forward.

    u(a) = sqrt(a), omega(x) = sqrt(x + 1), delta = log_blend(eps). The continuum drift
    constant is 1 when the mean shock is at most 1; the measured one is reported alongside.

    :raises MeanShockError: Mean shock above 1.
    :raises GridError: Degenerate grid.
    """
    grid = _uniform_grid(x_max, grid_n)
    if shocks.mean > 1.0 + PROB_TOL:
        raise MeanShockError(f"mean shock {shocks.mean:.6g} exceeds 1")
    discount = make_log_blend(eps, "one")
    model = _consumption_model(
        grid,
        _consumption_transition(grid, shocks),
        np.sqrt(grid),
        np.sqrt(grid + 1.0),
    )
    constants = validate_model(model)
    slack = max(0.0, constants.alpha - 1.0)
    if slack > 0.0:
        logger.warning(f"growth-1 grid projection raised alpha to {constants.alpha:.6g}")
    logger.info(f"build_growth1: {grid_n} grid points on [0, {x_max}], measured alpha={constants.alpha:.6g}")
    return BuiltModel(
        model=model,
        discount=discount,
        constants=constants,
        notes={"alpha_measured": constants.alpha, "alpha_analytic": 1.0, "projection_slack": slack},
    )


def growth2_alpha(mean_shock: float, rho: float, theta: float, sigma: float, r: float) -> float:
    """(1 + (s / rho)^(1 / (1 - theta)) / r)^sigma."""
    return float((1.0 + (mean_shock / rho) ** (1.0 / (1.0 - theta)) / r) ** sigma)


def build_growth2(
    x_max: float,
    grid_n: int,
    rho: float,
    theta: float,
    sigma: float,
    r: float,
    eps: float,
    shocks: ShockDistribution,
) -> BuiltModel:
    """
    Growth with depreciation: carry y = x - a forward as y^theta * xi + (1 - rho) * y.

    u(a) = a^sigma, omega(x) = (x + r)^sigma, delta = log_blend(eps, two).

    :raises ParamError: Parameters outside their ranges, or alpha * (1 - eps) >= 1.
    """
    for name, value in (("rho", rho), ("theta", theta), ("sigma", sigma)):
        _check_unit(name, value)
    if r < 1.0:
        raise ParamError(f"r must be at least 1, got {r}")
    alpha = growth2_alpha(shocks.mean, rho, theta, sigma, r)
    if alpha * (1.0 - eps) >= 1.0:
        msg = f"alpha={alpha:.12g} needs eps > {1.0 - 1.0 / alpha:.6g}, got eps={eps}"
        logger.error(msg)
        raise ParamError(msg)
    grid = _uniform_grid(x_max, grid_n)
    discount = make_log_blend(eps, "two")
    model = _consumption_model(
        grid,
        _consumption_transition(grid, shocks, theta=theta, rho=rho),
        grid**sigma,
        (grid + r) ** sigma,
    )
    constants = validate_model(model)
    logger.info(f"build_growth2: analytic alpha={alpha:.12g}, measured alpha={constants.alpha:.12g}")
    return BuiltModel(
        model=model,
        discount=discount,
        constants=constants,
        notes={
            "alpha_measured": constants.alpha,
            "alpha_analytic": alpha,
            "projection_slack": max(0.0, constants.alpha - alpha),
        },
    )


def build_inventory(
    stock_max: float,
    grid_n: int,
    demand: ShockDistribution,
    p: float,
    order_costs: Sequence[float],
    a_hat: float,
    c_hat: Optional[float] = None,
) -> BuiltModel:
    """
    Periodic-review inventory: sell min{x, demand} at price p, order a at cost C(a).

    Orders sit on len(order_costs) equally spaced points of [0, a_hat]; order_costs[k] is
    the cost of the k-th. u(x, a) = p E min{x, demand} - C(a), omega = 1.

    :raises ParamError: C(0) != 0, a cost above c_hat, negative price or order range.
    """
    grid = _uniform_grid(stock_max, grid_n)
    costs = np.asarray(order_costs, dtype=np.float64)
    if costs.size == 0 or costs[0] != 0.0:
        raise ParamError("the zero order must cost nothing")
    if p < 0.0 or a_hat < 0.0:
        raise ParamError(f"price and order range must be nonnegative, got p={p}, a_hat={a_hat}")
    c_hat = float(costs.max()) if c_hat is None else c_hat
    if costs.max() > c_hat:
        raise ParamError(f"order cost {costs.max()} exceeds the cap {c_hat}")
    orders = np.linspace(0.0, a_hat, costs.size)
    support = np.asarray(demand.support)
    probs = np.asarray(demand.probs)

    n, k = grid_n, costs.size
    sales = np.minimum(grid[:, None], support[None, :])
    expected_sales = sales @ probs
    utility = p * expected_sales[:, None] - costs[None, :]
    q = np.zeros((n, k, n))
    for i in range(n):
        left = grid[i] - sales[i]
        for j in range(k):
            np.add.at(q[i, j], project_to_grid(left + orders[j], grid), probs)

    model = FiniteModel(
        states=[float(x) for x in grid],
        actions=[float(a) for a in orders],
        admissible=[list(range(k)) for _ in range(n)],
        transition=q,
        utility=utility,
        weight=np.ones(n),
    )
    constants = validate_model(model)
    return BuiltModel(
        model=model,
        constants=constants,
        notes={"u_lower": -c_hat, "u_upper": p * demand.mean},
    )


def build_stopping(
    x_values: Sequence[float],
    q0: Sequence[float],
    q_rows: ArrayLike,
    reward_R: Sequence[float],
    cost_C: Sequence[float],
    weight: Optional[Sequence[float]] = None,
) -> StoppingModel:
    """
    Optimal stopping as an MDP: action 0 continues (pays C(x), moves by q), action 1 stops
    (collects R(x), jumps to the absorbing state). The absorbing state is appended last.

    Without an explicit weight, omega is the constant max{1, |R|, |C|} on the original states.

    :raises BoundError: |R| or |C| exceeds omega somewhere.
    """
    n = len(x_values)
    rows = np.asarray(q_rows, dtype=np.float64)
    R = np.asarray(reward_R, dtype=np.float64)
    C = np.asarray(cost_C, dtype=np.float64)
    if rows.shape != (n, n) or R.shape != (n,) or C.shape != (n,) or len(q0) != n:
        raise ParamError(f"stopping data must describe {n} states consistently")
    if abs(float(np.sum(q0)) - 1.0) > PROB_TOL or min(q0) < 0.0:
        raise ParamError("initial distribution q0 must be a probability vector")
    if weight is None:
        w = np.full(n, max(1.0, float(np.abs(R).max()), float(np.abs(C).max())))
    else:
        w = np.asarray(weight, dtype=np.float64)
        if (np.abs(R) > w).any() or (np.abs(C) > w).any():
            msg = "stopping rewards and costs must be bounded by omega in absolute value"
            logger.error(msg)
            raise BoundError(msg)

    s = n + 1
    q = np.zeros((s, 2, s))
    q[:n, 0, :n] = rows
    q[:n, 1, n] = 1.0
    q[n, :, n] = 1.0
    u = np.zeros((s, 2))
    u[:n, 0] = C
    u[:n, 1] = R
    model = FiniteModel(
        states=[float(x) for x in x_values] + [INFINITY_LABEL],
        actions=["continue", "stop"],
        admissible=[[0, 1] for _ in range(s)],
        transition=q,
        utility=u,
        weight=np.append(w, 1.0),
    )
    constants = validate_model(model)
    return StoppingModel(model=model, constants=constants, q0=list(q0))


def solve_house_selling(
    m: float,
    M: float,
    offers: ShockDistribution,
    c: float,
    d: DiscountFunction,
    tol: Optional[float] = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> StoppingAnalysis:
    """
    Sell a house to i.i.d. offers on [m, M], paying c per rejected offer.

    The continuation value C* does not depend on the current offer, so the optimal rule
    accepts the first offer at or above -c + C*.
    """
    if not 0.0 < m < M:
        raise ParamError(f"need 0 < m < M, got m={m}, M={M}")
    if any(not m <= x <= M for x in offers.support):
        raise ParamError(f"offers must lie in [{m}, {M}]")
    x = np.asarray(offers.support, dtype=np.float64)
    n = len(x)
    built = build_stopping(
        x_values=x,
        q0=offers.probs,
        q_rows=np.tile(offers.probs, (n, 1)),
        reward_R=x,
        cost_C=np.full(n, -c),
    )
    report = value_iterate(built.model, d, tol=tol, settings=settings)
    v = report.value.values
    cont = built.model.transition[:n, 0, :] @ d.delta(v)
    spread = float(cont.max() - cont.min())
    if spread > SPREAD_TOL:
        logger.warning(f"continuation constant varies by {spread:.3e} across offers")
    c_star = float(cont.mean())
    threshold = -c + c_star
    accepted = [i for i in range(n) if x[i] >= threshold]
    accept_p = float(np.sum(np.asarray(offers.probs)[accepted])) if accepted else 0.0
    logger.info(f"house selling with {d.name}: C*={c_star:.10g}, threshold={threshold:.10g}")
    return StoppingAnalysis(
        continuation_constant=c_star,
        continuation_by_state=[float(v_) for v_ in cont],
        continuation_spread=spread,
        threshold=threshold,
        stopping_region=[float(x[i]) for i in accepted],
        stop_states=accepted,
        accept_probability=accept_p,
        stops_surely=accept_p > 0.0,
        expected_stop_time=1.0 / accept_p if accept_p > 0.0 else None,
        initial_value=float(np.dot(built.q0, v[:n])),
        value=report.value,
        report=report,
    )


def build_chain_counterexample(n_states: int, beta: float) -> ChainModel:
    """
    Zero utility and a deterministic shift x -> x + 1 (the last state loops on itself).

    v = 0 is the only bounded fixed point, yet every v_r(x) = r / beta^x solves the
    Bellman equation at the interior states.
    """
    if n_states < 3:
        raise ParamError(f"the chain needs at least 3 states, got {n_states}")
    q = np.zeros((n_states, 1, n_states))
    for x in range(n_states):
        q[x, 0, min(x + 1, n_states - 1)] = 1.0
    model = FiniteModel(
        states=[float(x) for x in range(1, n_states + 1)],
        actions=["shift"],
        admissible=[[0] for _ in range(n_states)],
        transition=q,
        utility=np.zeros((n_states, 1)),
        weight=np.ones(n_states),
    )
    return ChainModel(
        model=model,
        discount=make_linear(beta),
        constants=validate_model(model),
        beta=beta,
    )
