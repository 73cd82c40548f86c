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
Discount functions delta with their comparison modulus gamma, a sampled checker for the
axioms the solver depends on, and the gamma-tilde iterates behind every error bound.
"""

import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union, overload

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from coreason_nonlin_mdp.core import FloatArray
from coreason_nonlin_mdp.exceptions import DivergenceError, ParamError
from coreason_nonlin_mdp.utils.logger import logger

PROPERTY_TOL = 1e-12

RealMap = Callable[[FloatArray], FloatArray]


class DiscountKind(str, Enum):
    LINEAR = "linear"
    SIGN_EFFECT = "sign_effect"
    LOG_BLEND = "log_blend"
    LOG_BLEND2 = "log_blend2"
    SINE_MODULUS = "sine_modulus"
    CUSTOM = "custom"


class NegativeBranch(str, Enum):
    LINEAR_TAIL = "linear_tail"
    ODD = "odd"


class DiscountFunction(BaseModel):
    """
    A discount function delta on the extended reals paired with its modulus gamma on [0, inf).

    delta_fn and gamma_fn only ever see finite arrays; delta(-inf) = -inf is handled here.
    Build one directly (kind=CUSTOM) to plug in a function outside the catalog.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str = Field(..., min_length=1)
    kind: DiscountKind = Field(default=DiscountKind.CUSTOM)
    params: Dict[str, Any] = Field(default_factory=dict)
    delta_fn: RealMap = Field(..., exclude=True)
    gamma_fn: RealMap = Field(..., exclude=True)

    @overload
    def delta(self, z: float) -> float: ...

    @overload
    def delta(self, z: FloatArray) -> FloatArray: ...

    def delta(self, z: Union[float, FloatArray]) -> Union[float, FloatArray]:
        arr = np.asarray(z, dtype=np.float64)
        flat = np.atleast_1d(arr)
        out = np.where(flat == np.inf, np.inf, -np.inf)
        finite = np.isfinite(flat)
        if finite.any():
            out[finite] = self.delta_fn(flat[finite])
        if arr.ndim == 0:
            return float(out[0])
        return out.reshape(arr.shape)

    @overload
    def gamma(self, z: float) -> float: ...

    @overload
    def gamma(self, z: FloatArray) -> FloatArray: ...

    def gamma(self, z: Union[float, FloatArray]) -> Union[float, FloatArray]:
        arr = np.asarray(z, dtype=np.float64)
        out = np.asarray(self.gamma_fn(np.atleast_1d(arr)), dtype=np.float64)
        if arr.ndim == 0:
            return float(out[0])
        return out.reshape(arr.shape)

    def to_spec(self) -> "DiscountSpec":
        return DiscountSpec(kind=self.kind, params=dict(self.params))


class DiscountSpec(BaseModel):
    """JSON form: {"kind": ..., "params": {...}}."""

    kind: DiscountKind
    params: Dict[str, Any] = Field(default_factory=dict)


def _check_open_unit(name: str, value: float, upper: float = 1.0) -> None:
    if not 0.0 < value < upper:
        raise ParamError(f"{name} must lie in (0, {upper}), got {value}")


def make_linear(beta: float) -> DiscountFunction:
    """Classical discounting: delta(z) = gamma(z) = beta * z."""
    _check_open_unit("beta", beta)

    def scale(z: FloatArray) -> FloatArray:
        return beta * z

    return DiscountFunction(
        name=f"linear(beta={beta:g})",
        kind=DiscountKind.LINEAR,
        params={"beta": beta},
        delta_fn=scale,
        gamma_fn=scale,
    )


def make_sign_effect(d1: float, d2: float) -> DiscountFunction:
    """Losses discounted by d1, gains by d2."""
    _check_open_unit("d1", d1)
    _check_open_unit("d2", d2)
    top = max(d1, d2)

    def delta(z: FloatArray) -> FloatArray:
        return np.where(z <= 0.0, d1 * z, d2 * z)

    def gamma(z: FloatArray) -> FloatArray:
        return top * z

    return DiscountFunction(
        name=f"sign_effect(d1={d1:g}, d2={d2:g})",
        kind=DiscountKind.SIGN_EFFECT,
        params={"d1": d1, "d2": d2},
        delta_fn=delta,
        gamma_fn=gamma,
    )


def make_log_blend(
    eps: float,
    variant: str = "one",
    negative_branch: NegativeBranch = NegativeBranch.LINEAR_TAIL,
) -> DiscountFunction:
    """
    delta(z) = (1 - k*eps) z + eps ln(1 + z) on z >= 0, with k = 1 (variant "one") or k = 2 ("two").
    gamma equals delta on [0, inf); gamma(z)/z is non-increasing.

    Below zero, LINEAR_TAIL continues with the asymptotic slope (1 - k*eps), which keeps
    |delta(z1) - delta(z2)| <= gamma(|z1 - z2|) across sign changes. ODD reflects the
    positive branch and is kept for comparison; the property checker reports where it breaks.
    """
    if variant not in ("one", "two"):
        raise ParamError(f"variant must be 'one' or 'two', got {variant!r}")
    _check_open_unit("eps", eps)
    k = 1.0 if variant == "one" else 2.0
    if variant == "two" and not eps < 0.5:
        raise ParamError(f"variant two needs eps < 1/2 to stay increasing, got {eps}")
    slope = 1.0 - k * eps

    def positive(z: FloatArray) -> FloatArray:
        return slope * z + eps * np.log1p(z)

    def delta(z: FloatArray) -> FloatArray:
        pos = positive(np.maximum(z, 0.0))
        if negative_branch == NegativeBranch.ODD:
            neg = -positive(np.maximum(-z, 0.0))
        else:
            neg = slope * np.minimum(z, 0.0)
        return np.where(z >= 0.0, pos, neg)

    kind = DiscountKind.LOG_BLEND if variant == "one" else DiscountKind.LOG_BLEND2
    return DiscountFunction(
        name=f"{kind.value}(eps={eps:g}, {negative_branch.value})",
        kind=kind,
        params={"eps": eps, "negative_branch": negative_branch.value},
        delta_fn=delta,
        gamma_fn=positive,
    )


def make_sine_modulus(eps: float) -> DiscountFunction:
    """
    gamma(z) = (1 - eps) z + eps |sin z|, with delta = gamma on [0, inf) and slope (1 - eps) below zero.
    A comparison-function example for the property checker; the cross-sign modulus
    inequality does not hold for this pairing, so it is not offered to the solvers.
    """
    _check_open_unit("eps", eps, upper=0.5 + 1e-15)

    def gamma(z: FloatArray) -> FloatArray:
        return (1.0 - eps) * z + eps * np.abs(np.sin(z))

    def delta(z: FloatArray) -> FloatArray:
        return np.where(z >= 0.0, gamma(np.maximum(z, 0.0)), (1.0 - eps) * z)

    return DiscountFunction(
        name=f"sine_modulus(eps={eps:g})",
        kind=DiscountKind.SINE_MODULUS,
        params={"eps": eps},
        delta_fn=delta,
        gamma_fn=gamma,
    )


def discount_from_spec(spec: Union[DiscountSpec, Dict[str, Any]]) -> DiscountFunction:
    """Instantiate a catalog function from its JSON form."""
    if isinstance(spec, dict):
        spec = DiscountSpec.model_validate(spec)
    p = spec.params
    try:
        if spec.kind == DiscountKind.LINEAR:
            return make_linear(float(p["beta"]))
        if spec.kind == DiscountKind.SIGN_EFFECT:
            return make_sign_effect(float(p["d1"]), float(p["d2"]))
        if spec.kind in (DiscountKind.LOG_BLEND, DiscountKind.LOG_BLEND2):
            variant = "one" if spec.kind == DiscountKind.LOG_BLEND else "two"
            branch = NegativeBranch(p.get("negative_branch", NegativeBranch.LINEAR_TAIL.value))
            return make_log_blend(float(p["eps"]), variant, branch)
        if spec.kind == DiscountKind.SINE_MODULUS:
            return make_sine_modulus(float(p["eps"]))
    except KeyError as e:
        raise ParamError(f"discount kind {spec.kind.value} is missing parameter {e}") from e
    raise ParamError(f"discount kind {spec.kind.value} cannot be built from a spec")


def parse_discount(text: str) -> List[DiscountFunction]:
    """
    Accepts a JSON file path, an inline JSON object/array, or the short form
    "kind:key=value,key=value" (e.g. "linear:beta=0.9"). Multiple short forms separate with ';'.
    """
    stripped = text.strip()
    if not stripped.startswith(("{", "[")):
        path = Path(stripped)
        if path.suffix == ".json" or path.is_file():
            stripped = path.read_text(encoding="utf-8").strip()
    if stripped.startswith(("{", "[")):
        content = json.loads(stripped)
        items = content if isinstance(content, list) else [content]
        return [discount_from_spec(item) for item in items]

    result = []
    for chunk in filter(None, (c.strip() for c in stripped.split(";"))):
        kind, _, rest = chunk.partition(":")
        params: Dict[str, Any] = {}
        for pair in filter(None, rest.split(",")):
            key, _, value = pair.partition("=")
            try:
                params[key.strip()] = float(value)
            except ValueError:
                params[key.strip()] = value.strip()
        try:
            result.append(discount_from_spec(DiscountSpec(kind=DiscountKind(kind.strip()), params=params)))
        except ValueError as e:
            raise ParamError(f"cannot parse discount {chunk!r}: {e}") from e
    if not result:
        raise ParamError(f"no discount function in {text!r}")
    return result


# ---------------------------------------------------------------------------
# Property checker
# ---------------------------------------------------------------------------


class SampleGrid(BaseModel):
    lo: float = -50.0
    hi: float = 50.0
    n_points: int = Field(default=400, ge=2)
    n_pairs: int = Field(default=200, ge=1)
    multipliers: Tuple[float, ...] = (1.0, 1.5, 2.0, 3.0, 10.0)
    seed: int = 0
    tol: float = PROPERTY_TOL

    def points(self) -> FloatArray:
        """Uniform grid plus zero and a geometric cluster on both sides of it."""
        near = np.geomspace(1e-3, 1.0, 16)
        pts = np.concatenate([np.linspace(self.lo, self.hi, self.n_points), [0.0], near, -near])
        return np.unique(pts)

    def pairs(self) -> Tuple[FloatArray, FloatArray]:
        rng = np.random.default_rng(self.seed)
        return rng.uniform(self.lo, self.hi, self.n_pairs), rng.uniform(self.lo, self.hi, self.n_pairs)


class PropertyCheck(BaseModel):
    name: str
    passed: bool
    worst_violation: float = Field(..., description="Largest excess over the tolerance (<= 0 when passed)")
    worst_sample: List[float] = Field(default_factory=list)


class DiscountReport(BaseModel):
    discount: str
    params: Dict[str, Any]
    grid: SampleGrid
    checks: List[PropertyCheck]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]

    def by_name(self, name: str) -> PropertyCheck:
        return next(c for c in self.checks if c.name == name)


def _worst(name: str, excess: FloatArray, samples: FloatArray, strict: bool = False) -> PropertyCheck:
    """excess > 0 (or >= 0 when strict) marks a violation; samples has one row per excess entry."""
    if excess.size == 0:
        return PropertyCheck(name=name, passed=True, worst_violation=0.0)
    i = int(np.argmax(excess))
    worst = float(excess[i])
    passed = worst < 0.0 if strict else worst <= 0.0
    return PropertyCheck(
        name=name,
        passed=passed,
        worst_violation=worst,
        worst_sample=[float(s) for s in np.atleast_1d(samples[i])],
    )


def check_discount(d: DiscountFunction, grid: Optional[SampleGrid] = None) -> DiscountReport:
    """
    Sampled check of the discount axioms. Never raises; failures are carried in the report.

    Checked: delta(0) = 0, delta(-inf) = -inf, delta non-decreasing, the modulus inequality,
    gamma(z) < z, gamma subadditive, gamma(d*y) <= d*gamma(y) for d >= 1, |delta(z)| <= gamma(|z|).
    """
    grid = grid or SampleGrid()
    tol = grid.tol
    pts = grid.points()
    pos = pts[pts > 0.0]
    za, zb = grid.pairs()

    checks: List[PropertyCheck] = []

    d0 = d.delta(0.0)
    checks.append(PropertyCheck(name="delta_zero", passed=d0 == 0.0, worst_violation=abs(d0), worst_sample=[0.0]))

    dinf = d.delta(-math.inf)
    checks.append(
        PropertyCheck(
            name="delta_neg_inf",
            passed=dinf == -math.inf,
            worst_violation=0.0 if dinf == -math.inf else math.inf,
            worst_sample=[-math.inf],
        )
    )

    dv = d.delta(pts)
    drops = dv[:-1] - dv[1:]
    checks.append(_worst("delta_increasing", drops, np.stack([pts[:-1], pts[1:]], axis=1)))

    # random pairs, adjacent grid points and mirrored points
    z1 = np.concatenate([za, pts[:-1], pos])
    z2 = np.concatenate([zb, pts[1:], -pos])
    excess = np.abs(d.delta(z1) - d.delta(z2)) - d.gamma(np.abs(z1 - z2)) - tol
    checks.append(_worst("modulus", excess, np.stack([z1, z2], axis=1)))

    checks.append(_worst("gamma_below_identity", d.gamma(pos) - pos, pos, strict=True))

    ya, yb = np.abs(za), np.abs(zb)
    excess = d.gamma(ya + yb) - d.gamma(ya) - d.gamma(yb) - tol
    checks.append(_worst("subadditive", excess, np.stack([ya, yb], axis=1)))

    mult = np.asarray(grid.multipliers, dtype=np.float64)
    dd, yy = np.meshgrid(mult, pos, indexing="ij")
    excess = (d.gamma(dd * yy) - dd * d.gamma(yy) - tol).ravel()
    checks.append(_worst("homogeneity", excess, np.stack([dd.ravel(), yy.ravel()], axis=1)))

    excess = np.abs(dv) - d.gamma(np.abs(pts)) - tol
    checks.append(_worst("delta_dominated", excess, pts))

    report = DiscountReport(discount=d.name, params=d.params, grid=grid, checks=checks)
    if not report.all_passed:
        logger.warning(f"Discount {d.name} fails sampled properties: {report.failures()}")
    return report


# ---------------------------------------------------------------------------
# gamma-tilde machinery
# ---------------------------------------------------------------------------


def gamma_tilde(d: DiscountFunction, alpha: float) -> Callable[[float], float]:
    """gamma when alpha <= 1, alpha * gamma otherwise."""
    scale = 1.0 if alpha <= 1.0 else alpha

    def apply(y: float) -> float:
        return scale * d.gamma(y)

    return apply


def check_drift_condition(d: DiscountFunction, alpha: float, samples: Optional[ArrayLike] = None) -> None:
    """
    For alpha > 1 the solver needs alpha * gamma(y) < y. Sampled on a geometric grid.

    :raises ParamError: With the first violating sample.
    """
    if alpha <= 1.0:
        return
    ys = np.geomspace(1e-3, 1e6, 200) if samples is None else np.asarray(samples, dtype=np.float64)
    bad = alpha * d.gamma(ys) >= ys
    if bad.any():
        y = float(ys[int(np.argmax(bad))])
        msg = f"alpha * gamma(y) < y fails for {d.name} at y={y:g} with alpha={alpha:.6g}"
        logger.error(msg)
        raise ParamError(msg)


class GammaIterates(BaseModel):
    """
    The nested sums gamma~_1(z) = z, gamma~_{k+1}(z) = z + gamma~(gamma~_k(z)) and their limit.

    powers[j] is the j-fold composition gamma~^(j)(z); it majorises the k-th increment.
    residual is certified: the limit is bounded by sequence[-1] + residual.
    """

    z: float = Field(..., gt=0.0)
    alpha: float
    sequence: List[float]
    powers: List[float]
    L_tilde: float
    residual: float = Field(..., ge=0.0)
    k_stop: int
    tol: float
    stop_reason: str

    @property
    def increments(self) -> List[float]:
        return [b - a for a, b in zip(self.sequence, self.sequence[1:], strict=False)]


def _supersolution_gap(phi: Callable[[float], float], last: float, candidates: List[float]) -> Optional[float]:
    """Smallest candidate gap g with phi(last + g) <= last + g, if any."""
    for gap in sorted(g for g in candidates if g >= 0.0 and math.isfinite(g)):
        y = last + gap
        if phi(y) <= y:
            return gap
    return None


def gamma_tilde_iterates(
    d: DiscountFunction,
    alpha: float,
    z: float,
    tol: float = 1e-12,
    cap: int = 1_000_000,
) -> GammaIterates:
    """
    Run the gamma-tilde recursion from z until the increment majorant gamma~^(k-1)(z) drops
    below tol, or a certified residual below tol is found, whichever comes first.

    :raises ParamError: z or tol not positive, or the alpha > 1 drift condition fails.
    :raises DivergenceError: No stop within `cap` steps.
    """
    if not z > 0.0 or not tol > 0.0:
        raise ParamError(f"z and tol must be positive, got z={z}, tol={tol}")
    check_drift_condition(d, alpha)
    g = gamma_tilde(d, alpha)

    def phi(y: float) -> float:
        return z + g(y)

    sequence = [z]
    powers = [z]
    residual: Optional[float] = None
    reason = ""
    while True:
        last = sequence[-1]
        if powers[-1] < tol:
            reason = "increment_majorant"
            ladder = [tol * 2.0**j for j in range(64)]
            residual = _supersolution_gap(phi, last, [0.0] + ladder)
            if residual is None:
                raise DivergenceError(f"no finite bound found for L~({z}) with {d.name}")
            break
        nxt = phi(last)
        if nxt <= last:
            # phi(last) <= last already certifies last as an upper bound
            residual, reason = 0.0, "stalled"
            break
        sequence.append(nxt)
        powers.append(g(powers[-1]))
        if len(sequence) >= 3:
            inc = sequence[-1] - sequence[-2]
            prev = sequence[-2] - sequence[-3]
            if inc < prev:
                r = inc / prev
                gap = _supersolution_gap(phi, nxt, [2.0 * inc * r / (1.0 - r) + 4.0 * np.spacing(nxt)])
                if gap is not None and gap < tol:
                    residual, reason = gap, "supersolution"
                    break
        if len(sequence) > cap:
            msg = f"gamma~ iterates for {d.name} (alpha={alpha:.6g}, z={z:g}) did not settle in {cap} steps"
            logger.error(msg)
            raise DivergenceError(msg)

    assert residual is not None
    logger.debug(f"L~({z:g}) for {d.name}: {len(sequence)} steps, residual {residual:.3g} ({reason})")
    return GammaIterates(
        z=z,
        alpha=alpha,
        sequence=sequence,
        powers=powers,
        L_tilde=sequence[-1] + residual,
        residual=residual,
        k_stop=len(sequence),
        tol=tol,
        stop_reason=reason,
    )


def gamma_tilde_power(d: DiscountFunction, alpha: float, z: float, n: int) -> float:
    """n-fold composition of gamma~ at z; the identity when n = 0."""
    if n < 0:
        raise ParamError(f"n must be non-negative, got {n}")
    g = gamma_tilde(d, alpha)
    value = z
    for _ in range(n):
        value = g(value)
    return value


def catalog(eps: float = 0.5, beta: float = 0.9) -> List[DiscountFunction]:
    """One member of each solver-grade family, for sweeps and property runs."""
    return [
        make_linear(beta),
        make_sign_effect(0.5, beta),
        make_log_blend(eps, "one"),
        make_log_blend(min(eps, 0.35), "two"),
    ]
