"""Cost tables with separable dominating-function sandwiches, the derived
weight profiles, and the summability checks gating each limit theorem.

Every cost model carries four dominating vectors (cX-, cX+, cY-, cY+) with
cX-(x) + cY-(y) <= c(x,y) <= cX+(x) + cY+(y) pointwise, optionally a second
such collection, and growth descriptors used by the analytic convergence
checks.  Weight profiles are the induced C = 1 + |c+| + |c-| and
e = exp((c+ - c-)/lambda) vectors together with k(delta) = C * e**delta.

Analytic verdicts model a weight as  index**degree * exp(gamma * index**theta)
along the enumeration order; this matches the shipped families on integer
grids where atom coordinates grow linearly with the index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    InvalidFamilyParams,
    MissingCoordinates,
    SeparabilityViolated,
)
from .measures import (
    DiscreteMeasure,
    IndexedSpace,
    TailFamily,
    WeightFunction,
)

SANDWICH_TOL = 1e-9


class Family(Enum):
    BOUNDED = "bounded"
    METRIC_POWER = "metric_power"
    SEMI_BOUNDED_METRIC_POWER = "semi_bounded_metric_power"
    SEPARABILITY_METRIC = "separability_metric"
    NORM_POWER = "norm_power"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Growth:
    """Asymptotic shape index**degree * exp(gamma * index**theta)."""

    degree: float = 0.0
    gamma: float = 0.0
    theta: float = 0.0

    def times(self, other: "Growth") -> "Growth":
        if self.gamma and other.gamma and self.theta != other.theta:
            # keep the dominating exponential term
            big, small = (self, other) if self.theta > other.theta else (other, self)
            return Growth(self.degree + other.degree, big.gamma, big.theta)
        theta = self.theta if self.gamma else other.theta
        return Growth(self.degree + other.degree, self.gamma + other.gamma, theta)

    def power(self, k: float) -> "Growth":
        return Growth(self.degree * k, self.gamma * k, self.theta)


CONST_GROWTH = Growth()


@dataclass(frozen=True)
class DominatingCollection:
    cX_minus: np.ndarray
    cX_plus: np.ndarray
    cY_minus: np.ndarray
    cY_plus: np.ndarray

    def x_variation(self) -> float:
        return float(np.max(self.cX_plus - self.cX_minus))

    def y_variation(self) -> float:
        return float(np.max(self.cY_plus - self.cY_minus))


@dataclass(frozen=True)
class CostModel:
    space_X: IndexedSpace
    space_Y: IndexedSpace
    cost: np.ndarray
    dom_primary: DominatingCollection
    dom_secondary: DominatingCollection | None
    family_tag: Family
    # asymptotic shapes of the dominating data, keyed by weight name
    growth: dict = field(default_factory=dict)
    # whether sup_x (cX+ - cX-)(x) stays finite on the full countable space
    bounded_x_variation: bool = True
    bounded_y_variation: bool = True

    def __post_init__(self):
        nx, ny = self.space_X.size, self.space_Y.size
        if self.cost.shape != (nx, ny):
            raise InvalidFamilyParams("cost table shape does not match spaces")
        for dom in (self.dom_primary, self.dom_secondary):
            if dom is None:
                continue
            if np.any(dom.cX_minus > dom.cX_plus + SANDWICH_TOL) or np.any(
                dom.cY_minus > dom.cY_plus + SANDWICH_TOL
            ):
                raise InvalidFamilyParams("dominating functions violate c- <= c+")
            lo = dom.cX_minus[:, None] + dom.cY_minus[None, :]
            hi = dom.cX_plus[:, None] + dom.cY_plus[None, :]
            if np.any(lo > self.cost + SANDWICH_TOL) or np.any(self.cost > hi + SANDWICH_TOL):
                raise InvalidFamilyParams("dominating functions do not sandwich the cost")

    @property
    def is_symmetric(self) -> bool:
        return (
            self.space_X.same_as(self.space_Y)
            and self.cost.shape[0] == self.cost.shape[1]
            and np.allclose(self.cost, self.cost.T, atol=1e-12)
        )


@dataclass(frozen=True)
class WeightProfile:
    """C/e/k weight functions from one (or two) dominating collections."""

    C_X: WeightFunction
    C_Y: WeightFunction
    e_X: WeightFunction
    e_Y: WeightFunction
    lam: float
    growth: dict
    bounded_x_variation: bool
    bounded_y_variation: bool
    # secondary (tilde) collection weights; equal the primary when the family
    # doesn't distinguish them
    Ct_X: WeightFunction | None = None
    Ct_Y: WeightFunction | None = None
    et_X: WeightFunction | None = None
    et_Y: WeightFunction | None = None

    def k_X(self, delta: float) -> WeightFunction:
        return WeightFunction(self.C_X.space, self.C_X.values * self.e_X.values**delta)

    def k_Y(self, delta: float) -> WeightFunction:
        return WeightFunction(self.C_Y.space, self.C_Y.values * self.e_Y.values**delta)


def _profile_from(model: CostModel, lam: float) -> WeightProfile:
    def weights(space, lo, hi):
        C = 1.0 + np.abs(hi) + np.abs(lo)
        # e may saturate to inf for strongly growing costs; the analytic
        # convergence verdicts rely on the growth descriptors, not on these
        # values, and an infinite partial sum is the honest numeric answer
        with np.errstate(over="ignore"):
            e = np.exp((hi - lo) / lam)
        return WeightFunction(space, C), WeightFunction(space, e)

    p = model.dom_primary
    C_X, e_X = weights(model.space_X, p.cX_minus, p.cX_plus)
    C_Y, e_Y = weights(model.space_Y, p.cY_minus, p.cY_plus)
    sec = model.dom_secondary or p
    Ct_X, et_X = weights(model.space_X, sec.cX_minus, sec.cX_plus)
    Ct_Y, et_Y = weights(model.space_Y, sec.cY_minus, sec.cY_plus)
    return WeightProfile(
        C_X=C_X,
        C_Y=C_Y,
        e_X=e_X,
        e_Y=e_Y,
        lam=lam,
        growth=model.growth,
        bounded_x_variation=model.bounded_x_variation,
        bounded_y_variation=model.bounded_y_variation,
        Ct_X=Ct_X,
        Ct_Y=Ct_Y,
        et_X=et_X,
        et_Y=et_Y,
    )


# ---------------------------------------------------------------------------
# family construction


def _coords(space: IndexedSpace) -> np.ndarray:
    if space.coords is None:
        raise MissingCoordinates("metric cost families need atom coordinates")
    return space.coords


def _dist_to_anchor(space: IndexedSpace, anchor, ord=None) -> np.ndarray:
    c = _coords(space)
    z = np.atleast_1d(np.asarray(anchor, dtype=float))
    if z.shape[0] != c.shape[1]:
        raise InvalidFamilyParams("anchor dimension does not match coordinates")
    return np.linalg.norm(c - z[None, :], ord=ord, axis=1)


def _pairwise_dist(sx: IndexedSpace, sy: IndexedSpace, ord=None) -> np.ndarray:
    cx, cy = _coords(sx), _coords(sy)
    if cx.shape[1] != cy.shape[1]:
        raise InvalidFamilyParams("coordinate dimensions differ between spaces")
    diff = cx[:, None, :] - cy[None, :, :]
    return np.linalg.norm(diff, ord=ord, axis=2)


def build_cost(family_spec: dict, space_X: IndexedSpace, space_Y: IndexedSpace, lam: float):
    """Construct a cost model plus its weight profile for one of the shipped
    families.  Returns ``(CostModel, WeightProfile)``."""
    if lam <= 0:
        raise InvalidFamilyParams("regularization parameter must be positive")
    spec = dict(family_spec)
    family = spec.pop("family", None)
    builders = {
        "bounded": _build_bounded,
        "metric_power": _build_metric_power,
        "separability": _build_separability,
        "norm_power": _build_metric_power,  # same construction, norm metric
        "custom": _build_custom,
    }
    if family not in builders:
        raise InvalidFamilyParams(f"unknown cost family {family!r}")
    model = builders[family](spec, space_X, space_Y, lam)
    return model, _profile_from(model, lam)


def _build_bounded(spec, sx, sy, lam):
    if "cost" in spec:
        cost = np.asarray(spec["cost"], dtype=float)
    elif spec.get("kind") == "discrete_metric":
        cost = 1.0 - np.equal.outer(np.asarray(sx.labels), np.asarray(sy.labels)).astype(float)
    elif "p" in spec:
        cost = _pairwise_dist(sx, sy, ord=spec.get("norm_ord")) ** float(spec["p"])
    else:
        raise InvalidFamilyParams("bounded family needs 'cost', 'kind' or 'p'")
    if np.any(cost < 0):
        raise InvalidFamilyParams("bounded family expects a nonnegative cost")
    C = float(cost.max())
    dom = DominatingCollection(
        cX_minus=np.zeros(sx.size),
        cX_plus=np.full(sx.size, C / 2.0),
        cY_minus=np.zeros(sy.size),
        cY_plus=np.full(sy.size, C / 2.0),
    )
    growth = {k: CONST_GROWTH for k in ("C_X", "C_Y", "e_X", "e_Y", "Ct_X", "Ct_Y", "et_X", "et_Y")}
    return CostModel(sx, sy, cost, dom, None, Family.BOUNDED, growth, True, True)


def _build_metric_power(spec, sx, sy, lam):
    p = spec.get("p")
    if p is None or p < 1:
        raise InvalidFamilyParams("metric power needs p >= 1")
    anchor = spec.get("anchor")
    if anchor is None:
        raise InvalidFamilyParams("metric power needs an anchor point")
    ord = spec.get("norm_ord")
    setting = spec.get("setting", "semi_bounded")
    dx = _dist_to_anchor(sx, anchor, ord)
    dy = _dist_to_anchor(sy, anchor, ord)
    cost = _pairwise_dist(sx, sy, ord) ** float(p)

    if setting == "bounded":
        C = float((dx.max() + dy.max()) ** p)
        dom = DominatingCollection(
            np.zeros(sx.size), np.full(sx.size, C / 2), np.zeros(sy.size), np.full(sy.size, C / 2)
        )
        growth = {k: CONST_GROWTH for k in ("C_X", "C_Y", "e_X", "e_Y", "Ct_X", "Ct_Y", "et_X", "et_Y")}
        return CostModel(sx, sy, cost, dom, None, Family.METRIC_POWER, growth, True, True)

    if setting == "semi_bounded":
        # X is the bounded side; Y may be unbounded
        R = float(dx.max())
        dom = DominatingCollection(
            cX_minus=np.zeros(sx.size),
            cX_plus=np.zeros(sx.size),
            cY_minus=np.maximum(dy - R, 0.0) ** p,
            cY_plus=(dy + R) ** p,
        )
        if p > 1:
            gy = Growth(0.0, 2.0 * p * R / lam, p - 1.0)
            y_bounded = False
        else:
            gy = CONST_GROWTH
            y_bounded = True
        growth = {
            "C_X": CONST_GROWTH,
            "e_X": CONST_GROWTH,
            "Ct_X": CONST_GROWTH,
            "et_X": CONST_GROWTH,
            "C_Y": Growth(float(p)),
            "e_Y": gy,
            "Ct_Y": Growth(float(p)),
            "et_Y": gy,
        }
        return CostModel(
            sx, sy, cost, dom, None, Family.SEMI_BOUNDED_METRIC_POWER, growth, True, y_bounded
        )

    if setting == "unbounded":
        if int(p) != p:
            raise InvalidFamilyParams("unbounded metric power needs integer p")
        p = int(p)
        eps = float(spec.get("epsilon", 0.5))
        gam = float(spec.get("gamma", 1.0))
        if eps <= 0 or gam <= 0:
            raise InvalidFamilyParams("epsilon and gamma must be positive")
        q = [0.0] * p
        K = [0.0] * p
        for i in range(1, p):
            q[i] = (p - 1 + eps) / (i - 1 + eps)
            K[i] = math.comb(p, i) ** ((p - 1 + eps) / (i - 1 + eps)) * (
                (lam * gam / (2 * (p - 1))) * ((p - i) / (i - 1 + eps))
            ) ** (-(p - i) / (p - 1 + eps))

        def holder_sum(d):
            return sum(K[i] * d ** q[i] for i in range(1, p))

        primary = DominatingCollection(
            cX_minus=(-1.0) ** p * dx**p - holder_sum(dx),
            cX_plus=dx**p + holder_sum(dx),
            cY_minus=dy**p - (lam * gam / 2) * dy ** (p - 1 + eps),
            cY_plus=dy**p + (lam * gam / 2) * dy ** (p - 1 + eps),
        )
        secondary = DominatingCollection(
            cX_minus=dx**p - (lam * gam / 2) * dx ** (p - 1 + eps),
            cX_plus=dx**p + (lam * gam / 2) * dx ** (p - 1 + eps),
            cY_minus=(-1.0) ** p * dy**p - holder_sum(dy),
            cY_plus=dy**p + holder_sum(dy),
        )
        deg_hi = max(float(p), (p - 1 + eps) / eps if p > 1 else float(p))
        theta_e = max(float(p) if p % 2 else 0.0, (p - 1 + eps) / eps if p > 1 else 0.0)
        growth = {
            "C_X": Growth(deg_hi),
            "C_Y": Growth(float(p)),
            "e_X": Growth(0.0, 2.0, theta_e) if theta_e else CONST_GROWTH,
            "e_Y": Growth(0.0, gam, p - 1 + eps),
            "Ct_X": Growth(float(p)),
            "Ct_Y": Growth(deg_hi),
            "et_X": Growth(0.0, gam, p - 1 + eps),
            "et_Y": Growth(0.0, 2.0, theta_e) if theta_e else CONST_GROWTH,
        }
        return CostModel(
            sx, sy, cost, primary, secondary, Family.METRIC_POWER, growth, False, False
        )

    raise InvalidFamilyParams(f"unknown metric power setting {setting!r}")


def _build_separability(spec, sx, sy, lam):
    anchor = spec.get("anchor")
    if anchor is None:
        raise InvalidFamilyParams("separability family needs an anchor point")
    ord = spec.get("norm_ord", 1)
    dx = _dist_to_anchor(sx, anchor, ord)
    dy = _dist_to_anchor(sy, anchor, ord)
    cost = _pairwise_dist(sx, sy, ord)
    # exact supremum of the triangle defect on the finite truncation
    kappa = float(np.max(dx[:, None] + dy[None, :] - cost))
    bound = spec.get("kappa_max")
    if bound is not None and kappa > bound:
        raise SeparabilityViolated(f"triangle defect {kappa:.6g} exceeds bound {bound}")
    dom = DominatingCollection(
        cX_minus=dx - kappa / 2.0,
        cX_plus=dx,
        cY_minus=dy - kappa / 2.0,
        cY_plus=dy,
    )
    growth = {
        "C_X": Growth(1.0),
        "C_Y": Growth(1.0),
        "e_X": CONST_GROWTH,
        "e_Y": CONST_GROWTH,
        "Ct_X": Growth(1.0),
        "Ct_Y": Growth(1.0),
        "et_X": CONST_GROWTH,
        "et_Y": CONST_GROWTH,
    }
    return CostModel(sx, sy, cost, dom, None, Family.SEPARABILITY_METRIC, growth, True, True)


def _build_custom(spec, sx, sy, lam):
    cost = np.asarray(spec["cost"], dtype=float)
    dom_spec = spec.get("dom")
    if dom_spec is None:
        # generic separable bounds from the table itself
        dom = DominatingCollection(
            cX_minus=cost.min(axis=1) - 0.0,
            cX_plus=cost.max(axis=1),
            cY_minus=np.zeros(sy.size),
            cY_plus=np.zeros(sy.size),
        )
    else:
        dom = DominatingCollection(
            cX_minus=np.asarray(dom_spec["cX_minus"], dtype=float),
            cX_plus=np.asarray(dom_spec["cX_plus"], dtype=float),
            cY_minus=np.asarray(dom_spec["cY_minus"], dtype=float),
            cY_plus=np.asarray(dom_spec["cY_plus"], dtype=float),
        )
    growth = {k: CONST_GROWTH for k in ("C_X", "C_Y", "e_X", "e_Y", "Ct_X", "Ct_Y", "et_X", "et_Y")}
    return CostModel(
        sx,
        sy,
        cost,
        dom,
        None,
        Family.CUSTOM,
        growth,
        dom.x_variation() < np.inf,
        dom.y_variation() < np.inf,
    )


def shift_nonnegative(m: CostModel, r: DiscreteMeasure, s: DiscreteMeasure):
    """Subtract the separable lower bound so the cost is nonnegative.

    Returns the shifted model and the offset with value(c) = value(c~) + offset.
    """
    dom = m.dom_primary
    offset = float(dom.cX_minus @ r.weights + dom.cY_minus @ s.weights)
    shifted_cost = m.cost - dom.cX_minus[:, None] - dom.cY_minus[None, :]
    shifted_dom = DominatingCollection(
        cX_minus=np.zeros(m.space_X.size),
        cX_plus=dom.cX_plus - dom.cX_minus,
        cY_minus=np.zeros(m.space_Y.size),
        cY_plus=dom.cY_plus - dom.cY_minus,
    )
    shifted = CostModel(
        m.space_X,
        m.space_Y,
        shifted_cost,
        shifted_dom,
        None,
        m.family_tag,
        m.growth,
        m.bounded_x_variation,
        m.bounded_y_variation,
    )
    return shifted, offset


# ---------------------------------------------------------------------------
# summability checks


@dataclass(frozen=True)
class CheckedSum:
    description: str
    partial_sum: float
    verdict: str  # "converges" | "diverges" | "inconclusive"
    detail: str = ""


@dataclass(frozen=True)
class ConditionReport:
    checked_sums: tuple
    verdict: str  # "Pass" | "Fail" | "Inconclusive"
    theorem_tag: str

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "theorem": self.theorem_tag,
            "sums": [
                {
                    "description": c.description,
                    "partial_sum": c.partial_sum,
                    "verdict": c.verdict,
                    "detail": c.detail,
                }
                for c in self.checked_sums
            ],
        }


def _tail_term(tail: TailFamily, power: float) -> Growth | None:
    """Growth of r_i**power as a (negative-gamma) shape, or None if unknown."""
    if tail.kind == "geometric":
        return Growth(0.0, -math.log(1.0 / tail.q) * power, 1.0)
    if tail.kind == "polynomial":
        return Growth(-tail.a * power, 0.0, 0.0)
    if tail.kind == "subweibull":
        return Growth(0.0, -tail.gamma * power, tail.theta)
    return None  # finite handled by the caller


def _series_verdict(weight: Growth, tail: TailFamily | None, power: float) -> tuple[str, str]:
    if tail is not None and tail.kind == "finite":
        return "converges", "finite support"
    if tail is None:
        return "inconclusive", "no analytic tail family"
    term = _tail_term(tail, power)
    total = weight.times(term)
    if total.gamma > 0:
        return "diverges", f"exponential growth exp({total.gamma:.3g} n^{total.theta:.3g})"
    if total.gamma < 0:
        return "converges", f"exponential decay exp({total.gamma:.3g} n^{total.theta:.3g})"
    if total.degree < -1:
        return "converges", f"polynomial decay n^{total.degree:.3g}"
    return "diverges", f"polynomial tail n^{total.degree:.3g} not summable"


def _checked(desc: str, weight_vec: np.ndarray, measure_vec: np.ndarray, power: float,
             weight_growth: Growth, tail: TailFamily | None) -> CheckedSum:
    partial = float(weight_vec @ measure_vec**power)
    verdict, detail = _series_verdict(weight_growth, tail, power)
    if verdict == "inconclusive":
        # ratio of the last partial-sum increments as a numeric diagnostic
        terms = weight_vec * measure_vec**power
        if terms.size >= 4 and terms[-2] > 0:
            detail = f"increment ratio {terms[-1] / terms[-2]:.4g}"
    return CheckedSum(desc, partial, verdict, detail)


def _aggregate(sums, theorem_tag) -> ConditionReport:
    verdicts = [c.verdict for c in sums]
    if "diverges" in verdicts:
        overall = "Fail"
    elif all(v == "converges" for v in verdicts):
        overall = "Pass"
    else:
        overall = "Inconclusive"
    return ConditionReport(tuple(sums), overall, theorem_tag)


def check_value_conditions(
    r: DiscreteMeasure,
    s: DiscreteMeasure,
    profile: WeightProfile,
    mode: str = "one_sample",
) -> ConditionReport:
    """Summability gates for the value limit theorem (one or two samples)."""
    g = profile.growth
    sums = [
        _checked("sum C_X sqrt(r)", profile.C_X.values, r.weights, 0.5, g["C_X"], r.tail),
        _checked("sum Ct_X^2 r", profile.Ct_X.values**2, r.weights, 1.0, g["Ct_X"].power(2), r.tail),
        _checked("sum et_X^2 r", profile.et_X.values**2, r.weights, 1.0, g["et_X"].power(2), r.tail),
    ]
    if mode == "one_sample":
        sums += [
            _checked("sum C_Y s", profile.C_Y.values, s.weights, 1.0, g["C_Y"], s.tail),
            _checked("sum Ct_Y s", profile.Ct_Y.values, s.weights, 1.0, g["Ct_Y"], s.tail),
            _checked("sum e_Y s", profile.e_Y.values, s.weights, 1.0, g["e_Y"], s.tail),
        ]
    elif mode == "two_sample":
        sums += [
            _checked("sum Ct_Y sqrt(s)", profile.Ct_Y.values, s.weights, 0.5, g["Ct_Y"], s.tail),
            _checked("sum C_Y^2 s", profile.C_Y.values**2, s.weights, 1.0, g["C_Y"].power(2), s.tail),
            _checked("sum e_Y^2 s", profile.e_Y.values**2, s.weights, 1.0, g["e_Y"].power(2), s.tail),
        ]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _aggregate(sums, "value_clt")


def check_plan_conditions(
    r: DiscreteMeasure, s: DiscreteMeasure, profile: WeightProfile
) -> ConditionReport:
    """Summability gates for the plan limit theorem (one sample from r)."""
    g = profile.growth
    sums = [
        _checked("sum C_X sqrt(r)", profile.C_X.values, r.weights, 0.5, g["C_X"], r.tail),
        _checked(
            "sum C_Y e_Y^4 s",
            profile.C_Y.values * profile.e_Y.values**4,
            s.weights,
            1.0,
            g["C_Y"].times(g["e_Y"].power(4)),
            s.tail,
        ),
    ]
    if not profile.bounded_x_variation:
        sums.append(
            CheckedSum(
                "sup |cX+ - cX-|",
                float("inf"),
                "diverges",
                "unbounded X-variation",
            )
        )
    return _aggregate(sums, "plan_clt")
