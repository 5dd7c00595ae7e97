"""Assembly of the explicit normal-approximation bounds.

Every bound is plain arithmetic on estimated ingredients. Constants live in
:data:`CONSTANTS` so they can be audited in one place.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import EstimateWithError, GaussianTarget

CONSTANTS: Mapping[str, float] = {
    "hl_general": 718.0,
    "convex_general": 2304.0,
    "convex_first_order": 15050.0,
    "hessian_moment": 444.0,
    "d2_gamma3": math.sqrt(2 * math.pi) / 8,
    "convex_rho3": 8 * math.sqrt(6) / 3,
    "smoothing_convex": 20 / math.sqrt(math.pi),
    "smoothing_halfspace": 24 / math.sqrt(math.pi),
}


def third_derivative_constant(m: int) -> float:
    return 6.0 * m ** 3


def m3_upper(m: int) -> float:
    return math.sqrt(6.0) * m ** 1.5


# distances bounded by one, for which a total >= 1 says nothing
_PROBABILITY_METRICS = {"dHl", "dconvex", "dK"}


@dataclass(frozen=True)
class BoundReport:
    """An assembled bound with the ingredients and constants that built it."""

    bound_id: str
    distance: str
    ingredients: Mapping[str, float]
    constants: Mapping[str, float]
    total: float
    ingredient_se: Mapping[str, float] = field(default_factory=dict)

    @property
    def vacuous(self) -> bool:
        return self.distance in _PROBABILITY_METRICS and self.total >= 1.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bound_id", "distance", "quantity", "value", "std_error"])
        for k, v in self.ingredients.items():
            w.writerow([self.bound_id, self.distance, k, repr(float(v)),
                        repr(float(self.ingredient_se.get(k, math.nan)))])
        for k, v in self.constants.items():
            w.writerow([self.bound_id, self.distance, "const_" + k, repr(float(v)), ""])
        w.writerow([self.bound_id, self.distance, "total", repr(float(self.total)), ""])
        w.writerow([self.bound_id, self.distance, "vacuous", str(int(self.vacuous)), ""])
        return buf.getvalue()

    def describe(self) -> str:
        lines = [f"{self.bound_id}: bound on {self.distance} = {self.total:.6g}"
                 + ("  (vacuous)" if self.vacuous else "")]
        for k, v in self.ingredients.items():
            se = self.ingredient_se.get(k)
            lines.append(f"  {k:>18} = {v:.6g}" + (f" +/- {se:.2g}" if se is not None else ""))
        for k, v in self.constants.items():
            lines.append(f"  const {k:>12} = {v:.6g}")
        return "\n".join(lines)


def _val(x) -> float:
    if isinstance(x, EstimateWithError):
        return float(x.value)
    return float(x)


def _se(x) -> float:
    return float(x.std_error) if isinstance(x, EstimateWithError) else math.nan


def _check_nonneg(**kw):
    for k, v in kw.items():
        if v < 0 or math.isnan(v):
            raise ValueError(f"ingredient {k} must be a nonnegative number, got {v}")


def _require_pd(target: GaussianTarget):
    if not target.positive_definite:
        raise ValueError("this bound needs a positive definite covariance")


@dataclass(frozen=True)
class Ingredients:
    """Values feeding the general bounds (estimates or plain numbers)."""

    discrepancy: object = 0.0
    gamma1: object = 0.0
    gamma2: object = 0.0
    gamma3: object = 0.0
    gamma4: object = 0.0
    gamma5: object = 0.0

    @classmethod
    def from_report(cls, report, discrepancy=0.0) -> "Ingredients":
        disc = report.cov_discrepancy if report.cov_discrepancy is not None else discrepancy
        return cls(disc, report.gamma1, report.gamma2, report.gamma3,
                   report.gamma4, report.gamma5)

    def values(self) -> dict[str, float]:
        out = {k: _val(getattr(self, k)) for k in
               ("discrepancy", "gamma1", "gamma2", "gamma3", "gamma4", "gamma5")}
        _check_nonneg(**out)
        return out

    def errors(self) -> dict[str, float]:
        return {k: _se(getattr(self, k)) for k in
                ("discrepancy", "gamma1", "gamma2", "gamma3", "gamma4", "gamma5")}


def bound_d3(ing: Ingredients, m: int) -> BoundReport:
    v = ing.values()
    total = (m / 2) * v["discrepancy"] + m * v["gamma1"] + (m / 2) * v["gamma2"] \
        + (m * m / 4) * v["gamma3"]
    keep = {k: v[k] for k in ("discrepancy", "gamma1", "gamma2", "gamma3")}
    return BoundReport("d3_general", "d3", keep, {}, total, ing.errors())


def bound_d2(ing: Ingredients, target: GaussianTarget, m: int) -> BoundReport:
    _require_pd(target)
    v = ing.values()
    inv, op = target.inv_op_norm, target.op_norm
    lead = inv * math.sqrt(op)
    c3 = CONSTANTS["d2_gamma3"]
    total = lead * v["discrepancy"] + 2 * lead * v["gamma1"] + lead * v["gamma2"] \
        + c3 * m * m * inv ** 1.5 * op * v["gamma3"]
    keep = {k: v[k] for k in ("discrepancy", "gamma1", "gamma2", "gamma3")}
    keep.update(inv_op_norm=inv, op_norm=op)
    return BoundReport("d2_general", "d2", keep, {"sqrt2pi_over_8": c3}, total, ing.errors())


def bound_dHl(ing: Ingredients, target: GaussianTarget, m: int, l: int) -> BoundReport:
    _require_pd(target)
    if l < 1:
        raise ValueError("number of half-spaces must be at least 1")
    v = ing.values()
    inv = target.inv_op_norm
    c = CONSTANTS["hl_general"]
    inner = max(v["discrepancy"], v["gamma1"], v["gamma2"], v["gamma4"],
                math.sqrt(l) * math.sqrt(v["gamma5"]) / inv ** 0.25)
    total = c * m ** (47 / 24) * l * inv * inner
    keep = {k: v[k] for k in ("discrepancy", "gamma1", "gamma2", "gamma4", "gamma5")}
    keep.update(inv_op_norm=inv, max_term=inner)
    return BoundReport("dhl_general", "dHl", keep, {"leading": c}, total, ing.errors())


def bound_dconvex(ing: Ingredients, target: GaussianTarget, m: int,
                  rho: Optional[float], lambda_A: float,
                  tail_integral: float = 0.0) -> BoundReport:
    """Convex-set bound; needs an almost sure bound ``rho`` on ``|D_x F_i|``."""
    _require_pd(target)
    if rho is None:
        raise ValueError("the convex-set bound needs rho with max_i |D_x F_i| <= rho "
                         "almost surely; unbounded differences are not covered")
    if not lambda_A > 0 or rho < 0 or tail_integral < 0:
        raise ValueError("need lambda_A > 0, rho >= 0 and tail_integral >= 0")
    v = ing.values()
    inv = target.inv_op_norm
    c = CONSTANTS["convex_general"]
    c_rho = CONSTANTS["convex_rho3"]
    terms = {
        "discrepancy": v["discrepancy"], "gamma1": v["gamma1"],
        "gamma2": v["gamma2"], "gamma4": v["gamma4"],
        "rho3_term": c_rho * m * m * math.sqrt(inv) * rho ** 3 * lambda_A,
        "rho4_term": m ** 1.5 * math.sqrt(rho ** 4 * lambda_A) / inv ** 0.25,
        "tail_term": tail_integral / (m * inv * lambda_A),
    }
    inner = max(terms.values())
    total = c * m ** 3 * inv * inner
    keep = dict(terms, inv_op_norm=inv, max_term=inner, rho=rho, lambda_A=lambda_A)
    return BoundReport("dconvex_general", "dconvex", keep,
                       {"leading": c, "rho3": c_rho}, total, ing.errors())


def bound_marked(gammas, target: GaussianTarget, m: int, variant: str,
                 discrepancy=0.0, l: int = 1, rho: Optional[float] = None,
                 lambda_A: Optional[float] = None, tail_integral: float = 0.0,
                 p: Optional[float] = None) -> BoundReport:
    """Bounds for marked processes in terms of the probability ingredients.

    ``gammas`` provides ``gamma1`` .. ``gamma4`` (either a ``BigGammas`` or
    any object with those attributes); ``variant`` is one of ``d3``, ``d2``,
    ``dHl``, ``dconvex``.
    """
    disc = _val(discrepancy)
    g = {k: _val(getattr(gammas, k)) if getattr(gammas, k, None) is not None else None
         for k in ("gamma1", "gamma2", "gamma3", "gamma4")}
    p = getattr(gammas, "p", p)
    errs = {k: _se(getattr(gammas, k)) for k in g if getattr(gammas, k, None) is not None}
    if variant == "d3":
        total = (m / 2) * disc + 1.5 * m ** 1.5 * g["gamma1"] + (m * m / 4) * g["gamma2"]
        return BoundReport("d3_marked", "d3",
                           {"discrepancy": disc, "Gamma1": g["gamma1"], "Gamma2": g["gamma2"]},
                           {}, total, errs)
    _require_pd(target)
    inv, op = target.inv_op_norm, target.op_norm
    if variant == "d2":
        c3 = CONSTANTS["d2_gamma3"]
        total = inv * math.sqrt(op) * disc + 3 * inv * op * math.sqrt(m) * g["gamma1"] \
            + c3 * inv ** 1.5 * op * m * m * g["gamma2"]
        return BoundReport("d2_marked", "d2",
                           {"discrepancy": disc, "Gamma1": g["gamma1"], "Gamma2": g["gamma2"],
                            "inv_op_norm": inv, "op_norm": op},
                           {"sqrt2pi_over_8": c3}, total, errs)
    if p is None or not p > 2:
        raise ValueError(f"the {variant} bound for marked processes requires p > 2")
    if variant == "dHl":
        if g["gamma4"] is None:
            raise ValueError("the dHl bound needs the fourth probability term")
        c = CONSTANTS["hl_general"]
        inner = max(disc, g["gamma1"], g["gamma3"],
                    math.sqrt(l) * math.sqrt(g["gamma4"]) / inv ** 0.25)
        total = c * m ** (65 / 24) * l * inv * inner
        return BoundReport("dhl_marked", "dHl",
                           {"discrepancy": disc, "Gamma1": g["gamma1"], "Gamma3": g["gamma3"],
                            "Gamma4": g["gamma4"], "inv_op_norm": inv, "max_term": inner},
                           {"leading": c}, total, errs)
    if variant == "dconvex":
        if rho is None or lambda_A is None:
            raise ValueError("the convex-set bound needs rho and lambda_A")
        c = CONSTANTS["convex_general"]
        c_rho = CONSTANTS["convex_rho3"]
        terms = {"discrepancy": disc, "Gamma1": g["gamma1"], "Gamma3": g["gamma3"],
                 "rho3_term": c_rho * math.sqrt(inv) * rho ** 3 * lambda_A,
                 "rho4_term": math.sqrt(rho ** 4 * lambda_A) / inv ** 0.25,
                 "tail_term": tail_integral / (m * inv * lambda_A)}
        inner = max(terms.values())
        total = c * m ** 5 * inv * inner
        return BoundReport("dconvex_marked", "dconvex", dict(terms, max_term=inner),
                           {"leading": c, "rho3": c_rho}, total, errs)
    raise ValueError(f"unknown variant {variant!r}")


def bound_dHl_first_order(discrepancy: float, f4: Sequence[float], f6: Sequence[float],
                          target: GaussianTarget, m: int, l: int) -> BoundReport:
    """Half-space bound for first-order integrals from ``int f_i^4`` and ``int f_i^6``."""
    _require_pd(target)
    inv = target.inv_op_norm
    a = math.sqrt(sum(f4))
    b = sum(f6) ** 0.25
    inner = max(discrepancy, a, b)
    c = CONSTANTS["hl_general"]
    total = c * m ** (59 / 24) * l ** 1.5 * max(inv, inv ** 0.75) * inner
    return BoundReport("dhl_first_order", "dHl",
                       {"discrepancy": discrepancy, "f4_term": a, "f6_term": b,
                        "inv_op_norm": inv, "max_term": inner}, {"leading": c}, total)


def bound_dconvex_first_order(discrepancy: float, rho: float, lambda_X: float,
                              target: GaussianTarget, m: int) -> BoundReport:
    _require_pd(target)
    inv = target.inv_op_norm
    inner = max(discrepancy, rho ** 3 * lambda_X, rho ** 2 * math.sqrt(lambda_X))
    c = CONSTANTS["convex_first_order"]
    total = c * m ** 5 * max(inv ** 0.75, inv ** 1.5) * inner
    return BoundReport("dconvex_first_order", "dconvex",
                       {"discrepancy": discrepancy, "rho": rho, "lambda_X": lambda_X,
                        "max_term": inner}, {"leading": c}, total)


def bound_d3_compound(abs_third_moments: Sequence[float], s: float, m: int) -> BoundReport:
    """Compound Poisson sum: ``(m^2/4) * sum_i E|X^(i)|^3 / sqrt(s)``."""
    tot = sum(abs_third_moments)
    total = (m * m / 4) * tot / math.sqrt(s)
    return BoundReport("d3_compound", "d3", {"abs_third_moment_sum": tot, "s": s}, {}, total)


def bound_d2_compound(abs_third_moments: Sequence[float], s: float,
                      target: GaussianTarget, m: int) -> BoundReport:
    _require_pd(target)
    tot = sum(abs_third_moments)
    c3 = CONSTANTS["d2_gamma3"]
    total = c3 * m * m * target.inv_op_norm ** 1.5 * target.op_norm * tot / math.sqrt(s)
    return BoundReport("d2_compound", "d2", {"abs_third_moment_sum": tot, "s": s},
                       {"sqrt2pi_over_8": c3}, total)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    n_points: int


def rate_slope(points: Sequence[tuple[float, float]], n_boot: int = 2000,
               seed: int = 0, level: float = 0.95) -> SlopeFit:
    """Least-squares slope of ``log value`` against ``log scale``.

    Needs at least three scales spanning a factor of ten or more. The
    confidence interval comes from a residual bootstrap.
    """
    pts = sorted((float(s), float(v)) for s, v in points)
    if len(pts) < 3:
        raise ValueError("need at least three scales")
    s = np.array([p[0] for p in pts])
    v = np.array([p[1] for p in pts])
    if np.any(s <= 0) or np.any(v <= 0):
        raise ValueError("scales and values must be positive")
    if s[-1] / s[0] < 10.0 * (1 - 1e-12):
        raise ValueError("scales must span at least one decade")
    x, y = np.log(s), np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    gen = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        yb = slope * x + intercept + gen.choice(resid, size=resid.size, replace=True)
        boots[b] = np.polyfit(x, yb, 1)[0]
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return SlopeFit(float(slope), float(intercept), float(lo), float(hi), len(pts))
