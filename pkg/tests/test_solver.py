# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_nonlin_mdp

import math
from typing import Tuple

import numpy as np
import pytest

from coreason_nonlin_mdp.config import SolverSettings
from coreason_nonlin_mdp.core import (
    FiniteModel,
    StationaryPolicy,
    UtilityMode,
    permute_states,
    validate_model,
    weighted_diff,
)
from coreason_nonlin_mdp.discount import (
    DiscountFunction,
    catalog,
    gamma_tilde,
    gamma_tilde_iterates,
    gamma_tilde_power,
    make_linear,
    make_log_blend,
    make_sign_effect,
)
from coreason_nonlin_mdp.exceptions import ParamError
from coreason_nonlin_mdp.oracle import classical_discounted_VI
from coreason_nonlin_mdp.simulation import random_model
from coreason_nonlin_mdp.solver import (
    SolveStatus,
    apply_S,
    bellman_residual,
    bellman_T,
    evaluate_finite_horizon,
    evaluate_stationary,
    pointwise_residual,
    policy_T,
    value_iterate,
)


def _policy_tables(model: FiniteModel, f: StationaryPolicy) -> Tuple[np.ndarray, np.ndarray]:
    idx = (np.arange(model.n_states), np.asarray(f.choice))
    return model.transition[idx], model.utility[idx]


@pytest.mark.parametrize("beta", [0.5, 0.9])  # type: ignore
@pytest.mark.parametrize("seed", range(10))  # type: ignore
def test_linear_discount_matches_classical(seed: int, beta: float) -> None:
    rng = np.random.default_rng(seed)
    model = random_model(int(rng.integers(2, 21)), int(rng.integers(1, 6)), seed=seed)
    report = value_iterate(model, make_linear(beta), tol=1e-11)
    classical, _ = classical_discounted_VI(model, beta, tol=1e-12)
    assert report.converged
    assert weighted_diff(report.value, classical, model) <= 1e-8


@pytest.mark.parametrize("d", catalog(), ids=lambda d: d.name)  # type: ignore
def test_value_iterate_reaches_fixed_point(d: DiscountFunction) -> None:
    for seed in range(5):
        model = random_model(8, 3, seed=seed, utility_range=(0.5, 1.5))
        report = value_iterate(model, d)
        assert report.status == SolveStatus.CONVERGED
        assert bellman_residual(model, d, report.value) <= 1e-7
        assert report.final_residual < 1e-8 or report.trace[-1].apriori_bound < 1e-8
        assert report.l_tilde is not None
        assert report.constants is not None


def test_greedy_policy_is_optimal() -> None:
    model = random_model(7, 3, seed=21)
    d = make_sign_effect(0.5, 0.9)
    report = value_iterate(model, d, tol=1e-11)
    u_f = evaluate_stationary(model, d, report.policy, tol=1e-12)
    assert weighted_diff(u_f, report.value, model) <= 1e-8


def test_start_point_does_not_matter() -> None:
    model = random_model(6, 2, seed=3)
    d = make_sign_effect(0.5, 0.9)
    a = value_iterate(model, d, tol=1e-10)
    v0 = np.random.default_rng(0).uniform(-20.0, 20.0, 6)
    b = value_iterate(model, d, tol=1e-10, v0=v0)
    assert weighted_diff(a.value, b.value, model) <= 1e-8


def test_bellman_operator_is_monotone() -> None:
    rng = np.random.default_rng(1)
    model = random_model(7, 3, seed=11)
    for d in catalog():
        v1 = rng.uniform(-5.0, 5.0, 7)
        v2 = v1 + rng.uniform(0.0, 3.0, 7)
        t1, _ = bellman_T(model, d, v1)
        t2, _ = bellman_T(model, d, v2)
        assert (t1.values <= t2.values + 1e-12).all()


def test_weighted_contraction() -> None:
    rng = np.random.default_rng(2)
    for seed in range(5):
        model = random_model(6, 3, seed=seed, weight_spread=2.0)
        alpha = validate_model(model).alpha
        for d in catalog():
            g = gamma_tilde(d, alpha)
            v1 = rng.uniform(-10.0, 10.0, 6) * model.weight
            v2 = rng.uniform(-10.0, 10.0, 6) * model.weight
            lhs = weighted_diff(bellman_T(model, d, v1)[0], bellman_T(model, d, v2)[0], model)
            assert lhs <= g(weighted_diff(v1, v2, model)) + 1e-9


def test_apriori_bound_dominates_error() -> None:
    model = random_model(6, 3, seed=4)
    d = make_linear(0.9)
    star = value_iterate(model, d, tol=1e-12)
    capped = value_iterate(model, d, cap=20)
    assert capped.status == SolveStatus.ITERATION_CAP
    assert not capped.converged
    assert capped.iterations == 20
    assert all(r.apriori_bound is not None for r in capped.trace)
    bounds = [float(r.apriori_bound or 0.0) for r in capped.trace]
    assert all(b2 < b1 for b1, b2 in zip(bounds, bounds[1:], strict=False))
    assert weighted_diff(capped.value, star.value, model) <= bounds[-1] + 1e-9


def test_unbounded_model_rejected() -> None:
    model = random_model(5, 2, seed=0, neg_inf_frac=0.5)
    assert model.mode == UtilityMode.UNBOUNDED_BELOW
    with pytest.raises(ParamError):
        value_iterate(model, make_linear(0.9))


def test_caps_must_be_positive() -> None:
    model = random_model(4, 2, seed=1)
    d = make_linear(0.9)
    with pytest.raises(ParamError, match="cap must be at least 1"):
        value_iterate(model, d, cap=0)
    with pytest.raises(ParamError):
        evaluate_stationary(model, d, StationaryPolicy.first_admissible(model), cap=0)
    assert value_iterate(model, d, cap=1).iterations == 1


def test_drift_condition_enforced() -> None:
    # moving from omega = 1 to omega = 2 gives alpha = 2
    model = FiniteModel(
        states=[0, 1],
        actions=["stay", "move"],
        admissible=[[0, 1], [0]],
        transition=[[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]]],
        utility=[[0.0, 1.0], [1.0, 0.0]],
        weight=[1.0, 2.0],
    )
    with pytest.raises(ParamError):
        value_iterate(model, make_log_blend(0.5))
    # alpha * beta = 0.8 < 1 is fine
    assert value_iterate(model, make_linear(0.4)).converged


def test_evaluate_stationary_linear_closed_form() -> None:
    model = random_model(6, 3, seed=5)
    f = StationaryPolicy(choice=tuple(acts[-1] for acts in model.admissible))
    beta = 0.8
    value = evaluate_stationary(model, make_linear(beta), f, tol=1e-12)
    p, u = _policy_tables(model, f)
    exact = np.linalg.solve(np.eye(6) - beta * p, u)
    np.testing.assert_allclose(value.values, exact, atol=1e-9)


def test_evaluate_finite_horizon() -> None:
    model = random_model(5, 2, seed=6)
    d = make_sign_effect(0.5, 0.9)
    f = StationaryPolicy.first_admissible(model)
    p, u = _policy_tables(model, f)

    np.testing.assert_allclose(evaluate_finite_horizon(model, d, [f], 1).values, u)
    two = evaluate_finite_horizon(model, d, [f, f], 2)
    np.testing.assert_allclose(two.values, u + p @ d.delta(u))

    long_run = evaluate_finite_horizon(model, make_linear(0.5), [f] * 80, 80)
    limit = evaluate_stationary(model, make_linear(0.5), f, tol=1e-12)
    assert weighted_diff(long_run, limit, model) <= 1e-9

    with pytest.raises(ParamError):
        evaluate_finite_horizon(model, d, [f], 0)
    with pytest.raises(ParamError):
        evaluate_finite_horizon(model, d, [f], 3)


@pytest.mark.parametrize("d", catalog(), ids=lambda d: d.name)  # type: ignore
def test_finite_horizon_tail_bound(d: DiscountFunction) -> None:
    rng = np.random.default_rng(17)
    for seed in range(3):
        model = random_model(6, 3, seed=seed)
        constants = validate_model(model, UtilityMode.BOUNDED)
        lt = gamma_tilde_iterates(d, constants.alpha, constants.z)
        for n, m in ((1, 1), (2, 5), (4, 3), (8, 10)):
            rules = [
                StationaryPolicy(choice=tuple(int(rng.choice(acts)) for acts in model.admissible))
                for _ in range(n + m)
            ]
            head = evaluate_finite_horizon(model, d, rules, n)
            longer = evaluate_finite_horizon(model, d, rules, n + m)
            bound = gamma_tilde_power(d, constants.alpha, lt.L_tilde, n)
            assert weighted_diff(longer, head, model) <= bound + 1e-12


def test_policy_operator_and_ties() -> None:
    # one state, two indistinguishable actions
    model = FiniteModel(
        states=[0],
        actions=["left", "right"],
        admissible=[[0, 1]],
        transition=[[[1.0], [1.0]]],
        utility=[[1.0, 1.0]],
        weight=[1.0],
    )
    d = make_linear(0.5)
    tv, sets = bellman_T(model, d, [0.0])
    assert sets == [[0, 1]]
    assert tv.values[0] == pytest.approx(1.0)
    assert policy_T(model, d, StationaryPolicy(choice=(1,)), [2.0]).values[0] == pytest.approx(2.0)
    report = value_iterate(model, d, tol=1e-12)
    assert report.policy.choice == (0,)
    assert report.value.values[0] == pytest.approx(2.0)


def test_operators_propagate_neg_inf() -> None:
    model = FiniteModel(
        states=[0, 1],
        actions=[0],
        admissible=[[0], [0]],
        transition=[[[1.0, 0.0]], [[0.0, 1.0]]],
        utility=[[-math.inf], [1.0]],
        weight=[1.0, 1.0],
        mode=UtilityMode.UNBOUNDED_BELOW,
    )
    d = make_linear(0.5)
    tv, _ = bellman_T(model, d, [0.0, 0.0])
    assert tv.values[0] == -math.inf
    assert tv.values[1] == pytest.approx(1.0)
    tv2, _ = bellman_T(model, d, tv)
    assert tv2.values[0] == -math.inf
    assert tv2.values[1] == pytest.approx(1.5)


def test_pointwise_residual_max_is_bellman_residual() -> None:
    model = random_model(6, 3, seed=7, weight_spread=1.0)
    d = make_linear(0.7)
    v = np.random.default_rng(7).uniform(-1.0, 1.0, 6)
    assert pointwise_residual(model, d, v).max() == pytest.approx(bellman_residual(model, d, v))


def test_parallel_sweep_matches_serial() -> None:
    model = random_model(12, 4, seed=8)
    d = make_log_blend(0.5)
    v = np.random.default_rng(8).uniform(0.0, 3.0, 12)
    serial = apply_S(model, d, v)
    parallel = apply_S(model, d, v, SolverSettings(workers=3))
    np.testing.assert_allclose(parallel, serial, rtol=0.0, atol=1e-12)


def test_permuting_states_permutes_values() -> None:
    model = random_model(7, 3, seed=9)
    d = make_sign_effect(0.6, 0.8)
    order = np.random.default_rng(9).permutation(7)
    a = value_iterate(model, d, tol=1e-10)
    b = value_iterate(permute_states(model, order.tolist()), d, tol=1e-10)
    np.testing.assert_allclose(b.value.values, a.value.values[order], atol=1e-8)
