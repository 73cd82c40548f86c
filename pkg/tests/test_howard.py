# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_nonlin_mdp

import numpy as np
import pytest

from coreason_nonlin_mdp.core import FiniteModel, StationaryPolicy, weighted_diff
from coreason_nonlin_mdp.discount import DiscountFunction, catalog, make_linear, make_sign_effect
from coreason_nonlin_mdp.exceptions import IterationCapError, NotConvergedError, ParamError
from coreason_nonlin_mdp.simulation import random_model
from coreason_nonlin_mdp.solver import (
    SolveStatus,
    howard_solve,
    policy_iteration_sets,
    value_iterate,
)


@pytest.fixture  # type: ignore
def one_state_choice() -> FiniteModel:
    # a self-loop where the second action pays more
    return FiniteModel(
        states=["s"],
        actions=["low", "high"],
        admissible=[[0, 1]],
        transition=[[[1.0], [1.0]]],
        utility=[[0.0, 1.0]],
        weight=[1.0],
    )


@pytest.mark.parametrize("d", catalog(), ids=lambda d: d.name)  # type: ignore
def test_howard_agrees_with_value_iteration(d: DiscountFunction) -> None:
    for seed in range(4):
        model = random_model(8, 3, seed=seed, utility_range=(0.5, 1.5))
        howard = howard_solve(model, d)
        vi = value_iterate(model, d, tol=1e-11)
        assert howard.report.status == SolveStatus.CONVERGED
        assert weighted_diff(howard.report.value, vi.value, model) <= 1e-7


def test_howard_from_random_policies_agrees() -> None:
    d = make_sign_effect(0.5, 0.9)
    model = random_model(10, 4, seed=21, utility_range=(0.5, 1.5))
    vi = value_iterate(model, d, tol=1e-11)
    rng = np.random.default_rng(3)
    for _ in range(5):
        f0 = StationaryPolicy(choice=tuple(int(rng.choice(acts)) for acts in model.admissible))
        howard = howard_solve(model, d, f0=f0)
        assert weighted_diff(howard.report.value, vi.value, model) <= 1e-7


def test_howard_values_improve() -> None:
    d = make_sign_effect(0.5, 0.9)
    for seed in range(6):
        model = random_model(10, 4, seed=seed)
        result = howard_solve(model, d)
        assert len(result.values) == len(result.policies)
        assert len(result.improved_states) == len(result.values) - 1
        for k, improved in enumerate(result.improved_states):
            before, after = result.values[k].values, result.values[k + 1].values
            assert (after >= before - 1e-10).all()
            assert improved
            assert (after[improved] > before[improved]).all()


def test_howard_from_optimal_policy_stops_at_once() -> None:
    model = random_model(9, 3, seed=12)
    d = make_linear(0.9)
    first = howard_solve(model, d)
    again = howard_solve(model, d, f0=first.report.policy)
    assert again.report.iterations == 1
    assert again.improved_states == []
    assert again.report.policy == first.report.policy


def test_howard_small_model(one_state_choice: FiniteModel) -> None:
    result = howard_solve(one_state_choice, make_linear(0.5))
    assert result.report.policy.choice == (1,)
    assert result.report.value.values[0] == pytest.approx(2.0)
    assert result.improved_states == [[0]]
    assert result.report.trace[0].apriori_bound is None


def test_howard_switches_to_lowest_improving_action() -> None:
    ladder = FiniteModel(
        states=["s"],
        actions=["none", "some", "most"],
        admissible=[[0, 1, 2]],
        transition=[[[1.0], [1.0], [1.0]]],
        utility=[[0.0, 1.0, 2.0]],
        weight=[1.0],
    )
    result = howard_solve(ladder, make_linear(0.5), f0=StationaryPolicy(choice=(0,)))
    assert [p.choice for p in result.policies] == [(0,), (1,), (2,)]
    assert result.improved_states == [[0], [0]]
    assert result.report.value.values[0] == pytest.approx(4.0)


def test_howard_iteration_cap(one_state_choice: FiniteModel) -> None:
    with pytest.raises(IterationCapError) as exc:
        howard_solve(one_state_choice, make_linear(0.5), cap=1)
    assert exc.value.iterations == 1


def test_howard_rejects_bad_input(one_state_choice: FiniteModel) -> None:
    with pytest.raises(ParamError):
        howard_solve(random_model(4, 2, seed=0, neg_inf_frac=0.5), make_linear(0.9))
    with pytest.raises(ParamError):
        howard_solve(one_state_choice, make_linear(0.5), f0=StationaryPolicy(choice=(2,)))
    with pytest.raises(ParamError):
        howard_solve(one_state_choice, make_linear(0.5), cap=0)


def test_maximiser_sets_reject_bad_horizons(one_state_choice: FiniteModel) -> None:
    d = make_linear(0.5)
    with pytest.raises(ParamError):
        policy_iteration_sets(one_state_choice, d, n_max=0)
    with pytest.raises(ParamError):
        policy_iteration_sets(one_state_choice, d, n_max=10, tail_from=11)
    with pytest.raises(ParamError):
        policy_iteration_sets(one_state_choice, d, n_max=10, tail_from=0)
    sets = policy_iteration_sets(one_state_choice, d, n_max=1)
    assert sets.tail_from == 1
    assert sets.recurring == [[1]]


@pytest.mark.parametrize("d", [make_linear(0.5), make_sign_effect(0.4, 0.6)], ids=lambda d: d.name)  # type: ignore
def test_recurring_maximisers_lie_in_limit_sets(d: DiscountFunction) -> None:
    for seed in range(5):
        model = random_model(6, 3, seed=seed)
        sets = policy_iteration_sets(model, d)
        assert sets.all_included
        assert len(sets.per_iteration) == 200
        assert sets.tail_from == 100
        for x in range(model.n_states):
            assert sets.recurring[x]
            assert set(sets.recurring[x]) <= set(sets.limit[x])


def test_maximiser_sets_keep_ties() -> None:
    model = FiniteModel(
        states=["s"],
        actions=["left", "right"],
        admissible=[[0, 1]],
        transition=[[[1.0], [1.0]]],
        utility=[[1.0, 1.0]],
        weight=[1.0],
    )
    sets = policy_iteration_sets(model, make_linear(0.5), n_max=20)
    assert sets.limit == [[0, 1]]
    assert all(step == [[0, 1]] for step in sets.per_iteration)
    assert sets.recurring == [[0, 1]]


def test_maximiser_sets_need_converged_value(one_state_choice: FiniteModel) -> None:
    d = make_linear(0.9)
    capped = value_iterate(one_state_choice, d, cap=2)
    assert not capped.converged
    with pytest.raises(NotConvergedError):
        policy_iteration_sets(one_state_choice, d, solved=capped)
    full = policy_iteration_sets(one_state_choice, d, solved=value_iterate(one_state_choice, d))
    assert full.limit == [[1]]
    np.testing.assert_array_equal(full.included, [True])
