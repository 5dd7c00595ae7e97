"""Smoothed indicators, the multivariate Stein solution and related checks.

For a region ``A`` with indicator ``h`` and smoothing level ``t`` in (0, 1)
the smoothed test function is ``h_t(y) = E h(sqrt(t) N + sqrt(1-t) y)`` with
``N ~ N(0, sigma)``, and the Stein solution is

    f(y) = 1/2 int_t^1 (1 - s)^{-1} E[h(sqrt(s) N + sqrt(1-s) y) - h(N)] ds.

Differentiating under the integral moves derivatives onto the Gaussian
density, giving Hermite-type kernels in ``a = sigma^{-1} N``:

    d_i f    = 1/2 int ds / sqrt(s (1-s))       E[h(.) a_i]
    d_ij f   = 1/2 int ds / s                   E[h(.) (a_i a_j - S_ij)]
    d_ijk f  = 1/2 int sqrt(1-s) / s^{3/2} ds   E[h(.) H_ijk(a)]

with ``S = sigma^{-1}`` and ``H_ijk = a_i a_j a_k - a_i S_jk - a_j S_ik - a_k S_ij``.

The s-integral is mapped to ``1 - s = (1 - t) w^2`` and integrated by
Gauss-Legendre in ``w``; this removes the ``1/(1-s)`` endpoint behaviour.
Inner expectations use one table of standard normal draws shared by every
node and every ``y`` (common random numbers), so estimates at different
points are directly comparable and each draw gives an i.i.d. summand for the
standard error.
"""

from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special, stats

from .core import EstimateWithError, GaussianTarget, gaussian_target_from
from .distances import estimate_dconvex, estimate_dHl, null_calibration
from .sampler import RngStream, sample_gaussian
from .testfns import (AxisBox, Ball, HalfspaceIntersection, TestFunction,
                      bvn_cdf, compose_linear, gaussian_region_prob, halfspace,
                      is_everything)

DEFAULT_NODES = 64
DEFAULT_INNER = 20_000
_TAG_TABLE = 51
_TAG_Y = 52
_TAG_CATALOG = 53
_TAG_THETA = 54

NOT_A_SUPREMUM = ("catalogue maximum: a lower bound of the supremum, "
                  "so a pass is a necessary condition only")


def _check_t(t: float) -> None:
    if not 0.0 < t < 1.0:
        raise ValueError(f"smoothing parameter t must lie strictly in (0, 1), got {t}")


@dataclass(frozen=True)
class TensorEstimate:
    """A derivative tensor with elementwise standard errors."""

    value: np.ndarray
    std_error: np.ndarray
    flagged: bool = False


@dataclass(frozen=True)
class _Nodes:
    s: np.ndarray
    value: np.ndarray
    first: np.ndarray
    second: np.ndarray
    third: np.ndarray


def _nodes(t: float, q: int) -> _Nodes:
    x, wts = np.polynomial.legendre.leggauss(q)
    w = 0.5 * (x + 1.0)
    W = 0.5 * wts
    s = 1.0 - (1.0 - t) * w * w
    return _Nodes(
        s=s,
        value=W / w,
        first=W * math.sqrt(1.0 - t) / np.sqrt(s),
        second=W * (1.0 - t) * w / s,
        third=W * (1.0 - t) ** 1.5 * w * w / s ** 1.5,
    )


def _standard_table(seed: int, stream: int, n: int, m: int) -> np.ndarray:
    return RngStream(seed, (_TAG_TABLE, stream, m)).generator().standard_normal((n, m))


@dataclass
class SteinSolution:
    """Numerical Stein solution for one region, smoothing level and target."""

    h: TestFunction
    t: float
    target: GaussianTarget
    n_inner: int = DEFAULT_INNER
    n_nodes: int = DEFAULT_NODES
    seed: int = 0
    stream: int = 0
    tolerance: Optional[float] = None
    _table: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        _check_t(self.t)
        if not self.target.positive_definite:
            raise ValueError("the Stein solution needs a positive definite covariance")
        self.nodes = _nodes(self.t, self.n_nodes)
        z = _standard_table(self.seed, self.stream, self.n_inner, self.target.m)
        self.draws = z @ self.target.sqrt                     # N
        self.scores = self.draws @ self.target.inverse        # a = sigma^{-1} N
        self.constant = is_everything(self.h)

    @property
    def m(self) -> int:
        return self.target.m

    def hits(self, y) -> np.ndarray:
        """``h(sqrt(s_q) N_k + sqrt(1 - s_q) y)`` as a float ``(nodes, draws)`` array."""
        y = np.asarray(y, dtype=float).reshape(-1)
        s = self.nodes.s
        x = np.sqrt(s)[:, None, None] * self.draws[None] + np.sqrt(1 - s)[:, None, None] * y
        inside = self.h.contains(x.reshape(-1, self.m))
        return inside.reshape(s.size, -1).astype(float)

    def value_terms(self, y) -> np.ndarray:
        """Per-draw summands whose mean is ``f(y)``."""
        base = self.h.contains(self.draws).astype(float)
        return self.nodes.value @ (self.hits(y) - base[None, :])

    def derivative_terms(self, y, order: int) -> np.ndarray:
        """Per-draw tensors ``(draws, m, ..., m)`` whose mean is the order-th derivative."""
        if order not in (1, 2, 3):
            raise ValueError("order must be 1, 2 or 3")
        m, n = self.m, self.n_inner
        shape = (n,) + (m,) * order
        if self.constant:
            # Hermite kernels integrate to zero against a constant.
            return np.zeros(shape)
        coeff = (self.nodes.first, self.nodes.second, self.nodes.third)[order - 1]
        weight = coeff @ self.hits(y)
        a, S = self.scores, self.target.inverse
        out = np.empty(shape)
        for idx in itertools.combinations_with_replacement(range(m), order):
            if order == 1:
                (i,) = idx
                k = a[:, i]
            elif order == 2:
                i, j = idx
                k = a[:, i] * a[:, j] - S[i, j]
            else:
                i, j, l = idx
                k = a[:, i] * a[:, j] * a[:, l] - a[:, i] * S[j, l] \
                    - a[:, j] * S[i, l] - a[:, l] * S[i, j]
            col = weight * k
            for perm in set(itertools.permutations(idx)):
                out[(slice(None),) + perm] = col
        return out

    def value(self, y) -> EstimateWithError:
        terms = self.value_terms(y)
        return EstimateWithError.from_samples(terms, self.seed)

    def derivatives(self, y, order: int) -> TensorEstimate:
        terms = self.derivative_terms(y, order)
        mean = terms.mean(axis=0)
        se = terms.std(axis=0, ddof=1) / math.sqrt(terms.shape[0])
        flagged = self.tolerance is not None and bool(np.max(se) > self.tolerance)
        return TensorEstimate(mean, se, flagged)


def stein_value(sol: SteinSolution, y) -> EstimateWithError:
    return sol.value(y)


def stein_derivatives(sol: SteinSolution, y, order: int) -> TensorEstimate:
    return sol.derivatives(y, order)


def smooth_h(h: TestFunction, t: float, target: GaussianTarget, y,
             n: int = DEFAULT_INNER, seed: int = 0, stream: int = 7) -> EstimateWithError:
    """Monte Carlo estimate of ``E h(sqrt(t) N + sqrt(1 - t) y)``."""
    _check_t(t)
    y = np.asarray(y, dtype=float).reshape(-1)
    draws = _standard_table(seed, stream, n, target.m) @ target.sqrt
    inside = h.contains(math.sqrt(t) * draws + math.sqrt(1 - t) * y).astype(float)
    return EstimateWithError.from_samples(inside, seed)


def smoothed_expectation(h: TestFunction, t: float, target: GaussianTarget,
                         points: np.ndarray, n_inner: int = 256,
                         seed: int = 0) -> float:
    """Mean of ``h_t`` over the rows of ``points``.

    Exact (normal or bivariate normal CDF) for up to two half-spaces,
    otherwise ``n_inner`` common Gaussian draws per point.
    """
    points = np.atleast_2d(points)
    if isinstance(h, HalfspaceIntersection) and h.l <= 2:
        if h.l == 0:
            return 1.0
        u = h.directions
        cov = u @ target.sigma @ u.T
        sd = np.sqrt(np.diag(cov))
        shifted = (h.offsets[None, :] - math.sqrt(1 - t) * points @ u.T) / (math.sqrt(t) * sd)
        if h.l == 1:
            return float(np.mean(special.ndtr(shifted[:, 0])))
        rho = cov[0, 1] / (sd[0] * sd[1])
        return float(np.mean(bvn_cdf(shifted[:, 0], shifted[:, 1], rho)))
    draws = _standard_table(seed, 9, n_inner, target.m) @ target.sqrt
    total = 0.0
    for chunk in np.array_split(points, max(1, points.shape[0] // 256)):
        x = math.sqrt(t) * draws[None] + math.sqrt(1 - t) * chunk[:, None, :]
        total += float(np.sum(h.contains(x.reshape(-1, target.m))))
    return total / (points.shape[0] * n_inner)


@dataclass(frozen=True)
class ResidualResult:
    residual: float
    lhs: EstimateWithError
    rhs: EstimateWithError
    combined_se: float

    def passes(self, floor: float = 5e-3, k: float = 3.0) -> bool:
        return abs(self.residual) <= max(k * self.combined_se, floor)


def stein_residual(sol: SteinSolution, y, lhs_stream: int = 1) -> ResidualResult:
    """Stein equation residual with independent draws for the two sides.

    Left: ``h_t(y) - E h(N)`` with a paired control variate; right:
    ``sum_i y_i d_i f - sum_ij sigma_ij d_ij f``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    m = sol.m
    if sol.constant:
        zero = EstimateWithError(0.0, 0.0, sol.n_inner, sol.seed)
        return ResidualResult(0.0, zero, zero, 0.0)
    draws = _standard_table(sol.seed, lhs_stream + 1000, sol.n_inner, m) @ sol.target.sqrt
    left = sol.h.contains(math.sqrt(sol.t) * draws + math.sqrt(1 - sol.t) * y).astype(float) \
        - sol.h.contains(draws).astype(float)
    lhs = EstimateWithError.from_samples(left, sol.seed)
    hits = sol.hits(y)
    w1 = sol.nodes.first @ hits
    w2 = sol.nodes.second @ hits
    a = sol.scores
    quad = np.einsum("ki,ij,kj->k", a, sol.target.sigma, a) - m
    right = w1 * (a @ y) - w2 * quad
    rhs = EstimateWithError.from_samples(right, sol.seed)
    se = math.hypot(lhs.std_error, rhs.std_error)
    return ResidualResult(lhs.value - rhs.value, lhs, rhs, se)


# ---------------------------------------------------------------- constants

def _phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def abs_second_derivative_mass() -> float:
    """``int |phi''|`` by adaptive quadrature (closed form ``4 phi(1)``)."""
    f = lambda z: abs((z * z - 1.0) * _phi(z))  # noqa: E731
    pieces = [(-np.inf, -1), (-1, 1), (1, np.inf)]
    return sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-13)[0] for a, b in pieces)


def abs_first_derivative_mass() -> float:
    """``int |phi'|`` by adaptive quadrature (closed form ``2 phi(0)``)."""
    f = lambda z: abs(z * _phi(z))  # noqa: E731
    return sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-13)[0]
               for a, b in [(-np.inf, 0), (0, np.inf)])


def constant_M2(m: int) -> float:
    """``1/4 sum_ij (int |d_ij phi_I|)^2`` assembled from one-dimensional blocks."""
    if m < 1:
        raise ValueError("m must be at least 1")
    diag = abs_second_derivative_mass()
    off = abs_first_derivative_mass() ** 2
    val = 0.25 * (m * diag ** 2 + m * (m - 1) * off ** 2)
    if val > m * m:
        raise ArithmeticError(f"M2({m}) = {val} exceeds m^2")
    return val


def hermite3_norms(z: np.ndarray) -> np.ndarray:
    """Frobenius norm of the third Hermite tensor at each row of ``z``."""
    n, m = z.shape
    total = np.zeros(n)
    eye = np.eye(m)
    for i, j, k in itertools.product(range(m), repeat=3):
        v = z[:, i] * z[:, j] * z[:, k] - z[:, i] * eye[j, k] \
            - z[:, j] * eye[i, k] - z[:, k] * eye[i, j]
        total += v * v
    return np.sqrt(total)


def constant_M3(m: int, n: int = 200_000, seed: int = 0) -> EstimateWithError:
    """``int |D^3 phi_I|`` estimated as ``E |H_3(N)|`` under the standard normal."""
    if m < 1:
        raise ValueError("m must be at least 1")
    z = RngStream(seed, (55, m)).generator().standard_normal((n, m))
    est = EstimateWithError.from_samples(hermite3_norms(z), seed)
    if est.value > math.sqrt(6) * m ** 1.5 + 3 * est.std_error:
        raise ArithmeticError(f"M3({m}) estimate {est.value} exceeds sqrt(6) m^1.5")
    return est


def hermite3_second_moment(n: int = 200_000, seed: int = 0) -> EstimateWithError:
    """``E (N^3 - 3N)^2`` by Monte Carlo; the exact value is 6."""
    z = RngStream(seed, (56,)).generator().standard_normal(n)
    return EstimateWithError.from_samples((z ** 3 - 3 * z) ** 2, seed)


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class CheckRow:
    check: str
    lhs: float
    rhs: float
    se: float
    passed: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass
class CheckReport:
    rows: list[CheckRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, check: str, lhs: float, rhs: float, se: float = 0.0,
            passed: Optional[bool] = None) -> CheckRow:
        if passed is None:
            passed = lhs <= rhs + 3 * se
        row = CheckRow(check, float(lhs), float(rhs), float(se), bool(passed))
        self.rows.append(row)
        return row

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("check,lhs,rhs,margin,se,pass\n")
        for r in self.rows:
            buf.write(f"{r.check},{r.lhs!r},{r.rhs!r},{r.margin!r},{r.se!r},"
                      f"{'true' if r.passed else 'false'}\n")
        return buf.getvalue()


def random_halfspaces(m: int, count: int, l: int, gen: np.random.Generator,
                      offset_scale: float = 1.0) -> list[HalfspaceIntersection]:
    out = []
    for _ in range(count):
        u = gen.standard_normal((l, m))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        out.append(HalfspaceIntersection(u, gen.normal(0, offset_scale, size=l)))
    return out


def check_hessian_null(target: GaussianTarget, n: int = 200_000, seed: int = 0,
                       report: Optional[CheckReport] = None) -> CheckReport:
    """``int d_ij phi_sigma = E[a_i a_j - S_ij] = 0`` within three standard errors."""
    report = report or CheckReport()
    z = _standard_table(seed, 3, n, target.m) @ target.sqrt
    a = z @ target.inverse
    S = target.inverse
    for i, j in itertools.combinations_with_replacement(range(target.m), 2):
        est = EstimateWithError.from_samples(a[:, i] * a[:, j] - S[i, j], seed)
        report.add(f"hessian_null_{i}{j}", abs(est.value), 0.0, est.std_error)
    return report


def check_derivative_bounds(target: GaussianTarget, t: float, h: TestFunction,
                            ys: np.ndarray, n_inner: int = 4000, seed: int = 0,
                            report: Optional[CheckReport] = None) -> CheckReport:
    """Sup bounds on second and third derivatives at the sampled points ``ys``.

    One row per order: the worst standardised excess over all entries and
    points.  A violation is an entry exceeding the bound by more than three
    quadrature standard errors.
    """
    report = report or CheckReport()
    m = target.m
    bound2 = m * m * target.inv_op_norm * abs(math.log(t))
    bound3 = 6 * m ** 3 * target.inv_op_norm ** 1.5 / math.sqrt(t)
    sol = SteinSolution(h, t, target, n_inner=n_inner, seed=seed)
    for order, bound in ((2, bound2), (3, bound3)):
        worst, worst_se, violations = 0.0, 0.0, 0
        for y in ys:
            d = sol.derivatives(y, order)
            excess = np.abs(d.value) - bound - 3 * d.std_error
            violations += int(np.sum(excess > 0))
            k = np.unravel_index(int(np.argmax(np.abs(d.value))), d.value.shape)
            if abs(d.value[k]) > worst:
                worst, worst_se = float(abs(d.value[k])), float(d.std_error[k])
        report.add(f"sup_order{order}_m{m}_t{t}", worst, bound, worst_se,
                   passed=violations == 0)
    return report


def hessian_square_terms(h: TestFunction, t: float, target: GaussianTarget,
                         ys: np.ndarray, n_inner: int = 256, seed: int = 0) -> np.ndarray:
    """Unbiased per-point estimates of ``sum_ij (d_ij f(y))^2``.

    Each point gets two fresh independent inner tables; the product of the
    two Hessian estimates is unbiased for the square.
    """
    out = np.empty(ys.shape[0])
    root = RngStream(seed, (57,))
    for k, y in enumerate(ys):
        s = root.child(k).stream_id % (2 ** 31)
        h1 = SteinSolution(h, t, target, n_inner=n_inner, seed=s, stream=0).derivatives(y, 2)
        h2 = SteinSolution(h, t, target, n_inner=n_inner, seed=s, stream=1).derivatives(y, 2)
        out[k] = float(np.sum(h1.value * h2.value))
    return out


def check_hessian_second_moment(y_samples: np.ndarray, target: GaussianTarget, t: float,
                                l: int = 1, catalog: Optional[Sequence[TestFunction]] = None,
                                n_inner: int = 256, seed: int = 0,
                                distance: Optional[float] = None, budget: int = 200,
                                report: Optional[CheckReport] = None) -> CheckReport:
    """Expected squared Hessian of the Stein solution against its bound.

    ``distance`` is the half-space distance with ``2 l`` half-spaces; it is
    estimated from ``y_samples`` when not given.
    """
    _check_t(t)
    report = report or CheckReport()
    m = target.m
    y_samples = np.atleast_2d(y_samples).reshape(-1, m)
    if catalog is None:
        gen = RngStream(seed, (_TAG_CATALOG,)).generator()
        catalog = random_halfspaces(m, 4, l, gen)
    if distance is None:
        distance = estimate_dHl(y_samples, target, 2 * l, budget=budget, seed=seed).value
    m2 = constant_M2(m)
    rhs = target.inv_op_norm ** 2 * (m2 * math.log(t) ** 2 * distance + 444 * m ** (23 / 6))
    best, best_se = -math.inf, 0.0
    for k, h in enumerate(catalog):
        terms = hessian_square_terms(h, t, target, y_samples, n_inner, seed + k)
        est = EstimateWithError.from_samples(terms, seed)
        if est.value > best:
            best, best_se = est.value, est.std_error
    report.add(f"expected_sq_hessian_m{m}_t{t}", best, rhs, best_se)
    report.notes.append(NOT_A_SUPREMUM)
    return report


def strip_probability_rows(widths: Sequence[float] = (0.05, 0.1, 0.5),
                           report: Optional[CheckReport] = None) -> CheckReport:
    """``P(|N| <= w) = 2 Phi(w) - 1`` against ``sqrt(2/pi) w``."""
    report = report or CheckReport()
    for w in widths:
        report.add(f"strip_w{w}", 2 * special.ndtr(w) - 1, math.sqrt(2 / math.pi) * w)
    return report


def _smoothed_sup(samples, target, t, catalog, seed) -> float:
    best = 0.0
    for h in catalog:
        e_t = smoothed_expectation(h, t, target, samples, seed=seed)
        g = gaussian_region_prob(target, h).value
        best = max(best, abs(e_t - g))
    return best


def check_smoothing(samples: np.ndarray, target: GaussianTarget, t: float,
                    l: int = 2, budget: int = 200, seed: int = 0,
                    n_catalog: int = 32,
                    report: Optional[CheckReport] = None) -> CheckReport:
    """Smoothing inequalities for convex and half-space distances, plus invariance.

    The distances on the left are search lower bounds and the suprema on the
    right are catalogue maxima; both sides are therefore approximations from
    below and a failure is evidence, not proof.
    """
    _check_t(t)
    report = report or CheckReport()
    x = np.atleast_2d(samples).reshape(-1, target.m)
    m = target.m
    gen = RngStream(seed, (_TAG_CATALOG, 2)).generator()

    # convex distance after whitening, smoothed against the standard normal
    std = gaussian_target_from(np.eye(m))
    xw = x @ target.inv_sqrt
    dconv = estimate_dconvex(xw, std, budget=budget, seed=seed, l=l)
    cat = [dconv.witness] + random_halfspaces(m, n_catalog, 1, gen) \
        + random_halfspaces(m, n_catalog, 2, gen)
    sup1 = _smoothed_sup(xw, std, t, cat, seed)
    rhs1 = 4 / 3 * sup1 + 20 / math.sqrt(math.pi) * m * m * math.sqrt(t) / (1 - t)
    report.add(f"smoothing_convex_t{t}", dconv.value, rhs1)

    dhl = estimate_dHl(x, target, l, budget=budget, seed=seed)
    cat = [dhl.witness] + random_halfspaces(m, n_catalog, l, gen)
    sup2 = _smoothed_sup(x, target, t, cat, seed)
    rhs2 = 2 * sup2 + 24 * l * math.sqrt(m) / math.sqrt(math.pi) * math.sqrt(t)
    report.add(f"smoothing_halfspaces_l{l}_t{t}", dhl.value, rhs2)

    report.rows.extend(check_invariance(x, target, l, budget, seed).rows)
    strip_probability_rows(report=report)
    report.notes.append(NOT_A_SUPREMUM)
    return report


def check_invariance(samples: np.ndarray, target: GaussianTarget, l: int = 2,
                     budget: int = 200, seed: int = 0,
                     theta: Optional[np.ndarray] = None) -> CheckReport:
    """Half-space distance before and after a linear map of samples and target.

    Tolerance: twice the null-case calibration value at the same sample size
    and budget.
    """
    report = CheckReport()
    x = np.atleast_2d(samples)
    m = target.m
    if theta is None:
        gen = RngStream(seed, (_TAG_THETA,)).generator()
        while True:
            theta = gen.standard_normal((m, m))
            if abs(np.linalg.det(theta)) > 0.3:
                break
    moved = gaussian_target_from(theta @ target.sigma @ theta.T)
    before = estimate_dHl(x, target, l, budget=budget, seed=seed).value
    after = estimate_dHl(x @ theta.T, moved, l, budget=budget, seed=seed).value
    cal = null_calibration(target, x.shape[0], estimate_dHl, seed=seed + 1,
                           l=l, budget=budget)
    report.add(f"invariance_l{l}", abs(before - after), 2 * cal)
    return report


# ---------------------------------------------------------------- distance to boundary

def _distance_to_boundary(shape: TestFunction, z: np.ndarray) -> Optional[np.ndarray]:
    if isinstance(shape, HalfspaceIntersection) and shape.l == 1:
        return np.abs(z @ shape.directions[0] - shape.offsets[0])
    if isinstance(shape, Ball) and shape.transform is None:
        return np.abs(np.linalg.norm(z - shape.center, axis=1) - shape.radius)
    if isinstance(shape, AxisBox) and shape.transform is None:
        lo, hi = shape.lower, shape.upper
        inside = np.all((z >= lo) & (z <= hi), axis=1)
        d_in = np.min(np.minimum(z - lo, hi - z), axis=1)
        gap = np.maximum(np.maximum(lo - z, 0.0), np.maximum(z - hi, 0.0))
        d_out = np.linalg.norm(gap, axis=1)
        return np.where(inside, d_in, d_out)
    return None


def inverse_distance_moment_exact(shape: TestFunction, alpha: float, m: int) -> Optional[float]:
    """One-dimensional quadrature of ``E d(N, boundary)^{-alpha}`` where it reduces.

    Half-spaces reduce to a normal projection and centred balls to the chi
    distribution.
    """
    if isinstance(shape, HalfspaceIntersection) and shape.l == 1:
        z0 = float(shape.offsets[0])
        f = lambda v: abs(v - z0) ** -alpha * _phi(v)  # noqa: E731
        return (integrate.quad(f, -np.inf, z0, epsabs=1e-12, limit=200)[0]
                + integrate.quad(f, z0, np.inf, epsabs=1e-12, limit=200)[0])
    if isinstance(shape, Ball) and shape.transform is None and not np.any(shape.center):
        r = shape.radius
        f = lambda v: abs(v - r) ** -alpha * stats.chi.pdf(v, m)  # noqa: E731
        return (integrate.quad(f, 0, r, epsabs=1e-12, limit=200)[0]
                + integrate.quad(f, r, np.inf, epsabs=1e-12, limit=200)[0])
    return None


def check_inverse_distance_moment(alpha: float, catalog: Sequence[TestFunction], m: int,
                                  n: int = 400_000, seed: int = 0,
                                  report: Optional[CheckReport] = None) -> CheckReport:
    """``E d(N, boundary)^{-alpha}`` over a catalogue against its bound.

    The bound is ``1 + 2 sqrt(2/pi) m^{3/2} alpha / (1 - alpha)``.

    Shapes with a one-dimensional reduction use quadrature; the rest use
    Monte Carlo with exact distance formulas.  Unsupported shapes are skipped
    with a note.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    report = report or CheckReport()
    rhs = 1 + 2 * math.sqrt(2 / math.pi) * m ** 1.5 * alpha / (1 - alpha)
    z = RngStream(seed, (58, m)).generator().standard_normal((n, m))
    best, best_se, best_name = -math.inf, 0.0, ""
    for k, shape in enumerate(catalog):
        exact = inverse_distance_moment_exact(shape, alpha, m)
        if exact is not None:
            val, se = exact, 0.0
        else:
            d = _distance_to_boundary(shape, z)
            if d is None:
                report.notes.append(f"shape {k} ({type(shape).__name__}) skipped: "
                                    "no distance formula")
                continue
            est = EstimateWithError.from_samples(d ** -alpha, seed)
            val, se = est.value, est.std_error
        if val > best:
            best, best_se, best_name = val, se, type(shape).__name__
    report.add(f"inverse_distance_alpha{alpha}_m{m}", best, rhs, best_se)
    report.notes.append(f"maximiser: {best_name}; " + NOT_A_SUPREMUM)
    return report


def default_inverse_distance_catalog(m: int) -> list[TestFunction]:
    """Half-spaces, centred balls and boxes around the origin."""
    e = np.eye(m)[0]
    cat: list[TestFunction] = [halfspace(e, 0.0), halfspace(e, 0.5), halfspace(e, 1.0)]
    for r in (0.5, 1.0, math.sqrt(m), 2.0):
        cat.append(Ball(np.zeros(m), r))
    for a in (0.5, 1.0, 2.0):
        cat.append(AxisBox(-a * np.ones(m), a * np.ones(m)))
    return cat


def conjugation_check(h: TestFunction, t: float, target: GaussianTarget, ys: np.ndarray,
                      n_inner: int = DEFAULT_INNER, seed: int = 0,
                      report: Optional[CheckReport] = None) -> CheckReport:
    """``f_{h, sigma}(y) = f_{h o sigma^{1/2}, I}(sigma^{-1/2} y)`` with independent draws."""
    report = report or CheckReport()
    m = target.m
    left = SteinSolution(h, t, target, n_inner=n_inner, seed=seed, stream=0)
    right = SteinSolution(compose_linear(h, target.sqrt), t,
                          gaussian_target_from(np.eye(m)), n_inner=n_inner,
                          seed=seed, stream=1)
    for k, y in enumerate(np.atleast_2d(ys)):
        a = left.value(y)
        b = right.value(np.asarray(target.inv_sqrt) @ y)
        report.add(f"conjugation_{k}", abs(a.value - b.value), 0.0,
                   math.hypot(a.std_error, b.std_error))
    return report


def sample_targets(target: GaussianTarget, n: int, seed: int) -> np.ndarray:
    return sample_gaussian(target, n, RngStream(seed, (_TAG_Y,)).generator())
