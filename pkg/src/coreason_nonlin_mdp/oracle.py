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
Brute-force evaluators that share no code path with the solver sweeps: history-tree
evaluation of U_n, pathwise r_n / R_n, and classical linear-discount value iteration.
"""

from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from coreason_nonlin_mdp.config import DEFAULT_SETTINGS, SolverSettings
from coreason_nonlin_mdp.core import FiniteModel, StationaryPolicy, ValueTable
from coreason_nonlin_mdp.discount import DiscountFunction
from coreason_nonlin_mdp.exceptions import BoundError, IterationCapError, ParamError, TreeTooLargeError
from coreason_nonlin_mdp.utils.logger import logger

# (x1, a1, x2, a2, ..., xk): a history ending in the state where the next action is chosen
History = Tuple[int, ...]


class HistoryPolicy(BaseModel):
    """A history-dependent decision rule, stored as an explicit table over reachable histories."""

    model_config = ConfigDict(frozen=True)

    decisions: Dict[History, int] = Field(default_factory=dict)

    def action(self, history: History) -> int:
        try:
            return self.decisions[history]
        except KeyError as e:
            raise ParamError(f"history policy has no decision for history {history}") from e

    @classmethod
    def from_rule(
        cls,
        model: FiniteModel,
        rule: Callable[[History], int],
        n: int,
        x0: int,
    ) -> "HistoryPolicy":
        """Tabulate `rule` over every history reachable from x0 within n stages."""
        decisions: Dict[History, int] = {}
        frontier: List[History] = [(x0,)]
        for stage in range(1, n + 1):
            nxt: List[History] = []
            for h in frontier:
                a = rule(h)
                if a not in model.admissible[h[-1]]:
                    raise ParamError(f"rule picks inadmissible action {a} after history {h}")
                decisions[h] = a
                if stage < n:
                    successors = np.nonzero(model.transition[h[-1], a] > 0.0)[0]
                    nxt.extend(h + (a, int(y)) for y in successors)
            frontier = nxt
        return cls(decisions=decisions)

    @classmethod
    def from_markov(
        cls,
        model: FiniteModel,
        policy_seq: Sequence[StationaryPolicy],
        n: int,
        x0: int,
    ) -> "HistoryPolicy":
        """Stage k uses policy_seq[k - 1] at the current state."""
        if len(policy_seq) < n:
            raise ParamError(f"need {n} decision rules, got {len(policy_seq)}")
        return cls.from_rule(model, lambda h: policy_seq[(len(h) - 1) // 2].choice[h[-1]], n, x0)


class HistoryEvaluation(BaseModel):
    value: float
    nodes: int
    pruned_mass: float = Field(default=0.0, description="Path probability dropped below the pruning threshold")


class _Node(BaseModel):
    history: History
    parent: int
    q: float = Field(..., description="Transition probability from the parent")
    prob: float = Field(..., description="Path probability")
    action: int


def _materialize(
    model: FiniteModel,
    hp: HistoryPolicy,
    n: int,
    x0: int,
    settings: SolverSettings,
) -> Tuple[List[List[_Node]], float]:
    """Breadth-first history tree, one list of nodes per stage."""
    if n < 1:
        raise ParamError(f"horizon must be at least 1, got {n}")
    if not 0 <= x0 < model.n_states:
        raise ParamError(f"initial state {x0} outside the model")
    worst_case = sum(model.n_states**k for k in range(n))
    if worst_case > settings.oracle_node_limit:
        raise TreeTooLargeError(
            f"history tree may hold {worst_case} nodes, above the limit of {settings.oracle_node_limit}"
        )

    root = _Node(history=(x0,), parent=-1, q=1.0, prob=1.0, action=hp.action((x0,)))
    levels = [[root]]
    pruned = 0.0
    for _ in range(1, n):
        nxt: List[_Node] = []
        for i, node in enumerate(levels[-1]):
            row = model.transition[node.history[-1], node.action]
            for y in np.nonzero(row > 0.0)[0]:
                q = float(row[y])
                prob = node.prob * q
                if prob < settings.oracle_prune:
                    pruned += prob
                    continue
                h = node.history + (node.action, int(y))
                nxt.append(_Node(history=h, parent=i, q=q, prob=prob, action=hp.action(h)))
        levels.append(nxt)
    return levels, pruned


def _accumulate(total: float, weight: float, value: float) -> float:
    """total + weight * value with -inf absorbing and 0 * (-inf) = 0."""
    if weight == 0.0:
        return total
    return total + weight * value


def enumerate_histories_Un(
    model: FiniteModel,
    d: DiscountFunction,
    hp: HistoryPolicy,
    n: int,
    x0: int,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> HistoryEvaluation:
    """
    U_n(x0, hp) by recursion over the explicit history tree: a leaf is worth u at stage n,
    an interior node u + sum_y delta(child) q.

    :raises TreeTooLargeError: The tree would exceed the node budget.
    """
    levels, pruned = _materialize(model, hp, n, x0, settings)
    values = [float(model.utility[node.history[-1], node.action]) for node in levels[-1]]
    for depth in range(len(levels) - 1, 0, -1):
        parents = levels[depth - 1]
        cont = [0.0] * len(parents)
        for node, value in zip(levels[depth], values, strict=True):
            cont[node.parent] = _accumulate(cont[node.parent], node.q, d.delta(value))
        values = [float(model.utility[p.history[-1], p.action]) + c for p, c in zip(parents, cont, strict=True)]
    nodes = sum(len(level) for level in levels)
    if pruned > 0.0:
        logger.debug(f"enumerate_histories_Un pruned probability mass {pruned:.3e}")
    return HistoryEvaluation(value=values[0], nodes=nodes, pruned_mass=pruned)


def pathwise_Rn(
    model: FiniteModel,
    d: DiscountFunction,
    hp: HistoryPolicy,
    n: int,
    x0: int,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> HistoryEvaluation:
    """
    R_n(x0, hp) = E[r_n], with r_1 = u(x1, a1) and r_{k+1} = u(x1, a1) + delta(r_k(x2, a2, ...))
    evaluated path by path before a single expectation is taken.
    """
    levels, pruned = _materialize(model, hp, n, x0, settings)
    total = 0.0
    for leaf in levels[-1]:
        chain = [leaf]
        for depth in range(len(levels) - 1, 0, -1):
            chain.append(levels[depth - 1][chain[-1].parent])
        # chain runs from the last stage back to the root
        r = float(model.utility[leaf.history[-1], leaf.action])
        for node in chain[1:]:
            r = float(model.utility[node.history[-1], node.action]) + d.delta(r)
        total = _accumulate(total, leaf.prob, r)
    nodes = sum(len(level) for level in levels)
    return HistoryEvaluation(value=total, nodes=nodes, pruned_mass=pruned)


def classical_discounted_VI(
    model: FiniteModel,
    beta: float,
    tol: float = 1e-10,
    cap: int = 1_000_000,
) -> Tuple[ValueTable, StationaryPolicy]:
    """
    Expected total discounted reward with factor beta by plain value iteration in the
    unweighted sup norm. Stops once beta^n |u| / (1 - beta) or beta |v_n - v_{n-1}| / (1 - beta)
    falls below tol.
    """
    if not 0.0 < beta < 1.0:
        raise ParamError(f"beta must lie in (0, 1), got {beta}")
    mask = model.mask
    u = np.where(mask, model.utility, 0.0)
    if not np.isfinite(u).all():
        raise BoundError("classical value iteration needs finite utilities")
    scale = float(np.abs(u).max()) / (1.0 - beta)
    p = model.transition
    v = np.zeros(model.n_states)
    for n in range(1, cap + 1):
        q_sa = np.where(mask, u + beta * (p @ v), -np.inf)
        v_new = q_sa.max(axis=1)
        delta = float(np.abs(v_new - v).max())
        v = v_new
        if beta**n * scale < tol or beta * delta / (1.0 - beta) < tol:
            q_sa = np.where(mask, u + beta * (p @ v), -np.inf)
            policy = StationaryPolicy(choice=tuple(int(a) for a in q_sa.argmax(axis=1)))
            return ValueTable(values=v), policy
    raise IterationCapError(f"classical value iteration did not settle in {cap} sweeps", best=ValueTable(values=v))


def all_stationary_policies(model: FiniteModel, limit: int = 100_000) -> List[StationaryPolicy]:
    """Every deterministic stationary policy, for exhaustive comparisons on small models."""
    count = int(np.prod([len(acts) for acts in model.admissible]))
    if count > limit:
        raise TreeTooLargeError(f"{count} stationary policies exceed the enumeration limit {limit}")
    grids = np.meshgrid(*[np.asarray(acts) for acts in model.admissible], indexing="ij")
    flat = np.stack([g.ravel() for g in grids], axis=1)
    return [StationaryPolicy(choice=tuple(int(a) for a in row)) for row in flat]
