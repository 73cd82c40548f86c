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
import math
from pathlib import Path

import numpy as np
import pytest

from coreason_nonlin_mdp.discount import (
    DiscountFunction,
    DiscountKind,
    NegativeBranch,
    SampleGrid,
    catalog,
    check_discount,
    check_drift_condition,
    discount_from_spec,
    make_linear,
    make_log_blend,
    make_sign_effect,
    make_sine_modulus,
    parse_discount,
)
from coreason_nonlin_mdp.exceptions import ParamError


@pytest.mark.parametrize("d", catalog(), ids=lambda d: d.name)  # type: ignore
def test_catalog_passes_every_property(d: DiscountFunction) -> None:
    report = check_discount(d)
    assert report.all_passed, report.failures()
    assert d.delta(0.0) == 0.0
    assert d.delta(-math.inf) == -math.inf


def test_catalog_values() -> None:
    assert make_linear(0.9).delta(10.0) == pytest.approx(9.0)

    sign = make_sign_effect(0.5, 0.9)
    assert sign.delta(-2.0) == pytest.approx(-1.0)
    assert sign.delta(2.0) == pytest.approx(1.8)
    assert sign.gamma(2.0) == pytest.approx(1.8)

    blend = make_log_blend(0.5)
    assert blend.delta(1.0) == pytest.approx(0.5 + 0.5 * math.log(2.0))
    # linear tail below zero with the asymptotic slope
    assert blend.delta(-2.0) == pytest.approx(-1.0)

    blend2 = make_log_blend(0.25, "two")
    assert blend2.delta(1.0) == pytest.approx(0.5 + 0.25 * math.log(2.0))


def test_delta_vectorised_with_neg_inf() -> None:
    out = make_linear(0.5).delta(np.array([-np.inf, -2.0, 0.0, 4.0]))
    np.testing.assert_allclose(out[1:], [-1.0, 0.0, 2.0])
    assert out[0] == -np.inf


def test_log_blend_has_no_linear_majorant() -> None:
    # delta(z) / z tends to 1 near zero, so no beta < 1 bounds delta by beta * z
    d = make_log_blend(0.5)
    z = np.array([1e-2, 1e-4, 1e-6])
    ratios = d.delta(z) / z
    assert ratios[-1] > 0.999
    assert (np.diff(ratios) > 0).all()


def test_odd_negative_branch_breaks_modulus() -> None:
    d = make_log_blend(0.5, negative_branch=NegativeBranch.ODD)
    report = check_discount(d)
    assert not report.by_name("modulus").passed
    assert report.by_name("delta_increasing").passed
    assert "modulus" in report.failures()


def test_sine_modulus_is_a_comparison_function_only() -> None:
    d = make_sine_modulus(0.5)
    report = check_discount(d)
    assert report.by_name("gamma_below_identity").passed
    assert report.by_name("delta_zero").passed
    # pi/2 and -pi/2 sit a distance pi apart where |sin| vanishes
    assert not report.by_name("modulus").passed


def test_identity_fails_gamma_below_identity() -> None:
    d = DiscountFunction(name="identity", delta_fn=lambda z: z, gamma_fn=lambda z: z)
    report = check_discount(d)
    assert not report.by_name("gamma_below_identity").passed
    assert report.by_name("modulus").passed
    assert not report.all_passed


def test_decreasing_delta_flagged() -> None:
    d = DiscountFunction(name="flip", delta_fn=lambda z: -0.5 * z, gamma_fn=lambda z: 0.5 * z)
    report = check_discount(d, SampleGrid(n_points=50, n_pairs=20))
    assert not report.by_name("delta_increasing").passed
    assert report.by_name("delta_zero").passed


def test_nonzero_at_origin_flagged() -> None:
    d = DiscountFunction(name="shifted", delta_fn=lambda z: 0.5 * z + 1.0, gamma_fn=lambda z: 0.5 * z)
    report = check_discount(d)
    check = report.by_name("delta_zero")
    assert not check.passed
    assert check.worst_violation == pytest.approx(1.0)


def test_parameter_ranges() -> None:
    with pytest.raises(ParamError):
        make_linear(1.0)
    with pytest.raises(ParamError):
        make_linear(0.0)
    with pytest.raises(ParamError):
        make_sign_effect(0.5, 1.2)
    with pytest.raises(ParamError):
        make_log_blend(1.0)
    with pytest.raises(ParamError):
        make_log_blend(0.5, "two")
    with pytest.raises(ParamError):
        make_log_blend(0.3, "three")
    with pytest.raises(ParamError):
        make_sine_modulus(0.7)


def test_parse_short_form() -> None:
    ds = parse_discount("linear:beta=0.9; sign_effect:d1=0.5,d2=0.9")
    assert [d.kind for d in ds] == [DiscountKind.LINEAR, DiscountKind.SIGN_EFFECT]
    assert ds[0].params["beta"] == pytest.approx(0.9)

    odd = parse_discount("log_blend:eps=0.5,negative_branch=odd")[0]
    assert odd.params["negative_branch"] == "odd"


def test_parse_inline_json_and_file(tmp_path: Path) -> None:
    inline = parse_discount('{"kind": "log_blend2", "params": {"eps": 0.3}}')
    assert inline[0].kind == DiscountKind.LOG_BLEND2

    path = tmp_path / "discounts.json"
    path.write_text(
        json.dumps([{"kind": "linear", "params": {"beta": 0.5}}, {"kind": "log_blend", "params": {"eps": 0.5}}]),
        encoding="utf-8",
    )
    from_file = parse_discount(str(path))
    assert len(from_file) == 2
    assert from_file[1].delta(1.0) == pytest.approx(0.5 + 0.5 * math.log(2.0))


def test_parse_errors() -> None:
    with pytest.raises(ParamError):
        parse_discount("hyperbolic:k=1")
    with pytest.raises(ParamError):
        parse_discount("linear:gamma=0.9")
    with pytest.raises(ParamError):
        parse_discount(" ; ")


def test_spec_reproduces_function() -> None:
    for d in catalog():
        rebuilt = discount_from_spec(d.to_spec())
        z = np.linspace(-5.0, 5.0, 11)
        np.testing.assert_array_equal(rebuilt.delta(z), d.delta(z))
        assert rebuilt.name == d.name


def test_custom_has_no_spec_builder() -> None:
    d = DiscountFunction(name="custom", delta_fn=lambda z: 0.5 * z, gamma_fn=lambda z: 0.5 * z)
    with pytest.raises(ParamError):
        discount_from_spec(d.to_spec())


def test_drift_condition() -> None:
    check_drift_condition(make_linear(0.9), 1.0)
    check_drift_condition(make_linear(0.9), 1.05)
    with pytest.raises(ParamError):
        check_drift_condition(make_linear(0.9), 1.2)
    # gamma(y) / y -> 1 near zero leaves no room for alpha > 1
    with pytest.raises(ParamError):
        check_drift_condition(make_log_blend(0.5), 1.01)
    check_drift_condition(make_log_blend(0.35, "two"), math.sqrt(2.0))
