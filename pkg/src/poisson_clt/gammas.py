"""Nested Monte Carlo estimators of the integrated difference-operator moments.

Outer probes are drawn from the normalised intensity and weighted by the
total mass per probe dimension. For each outer probe tuple an independent
set of Poisson replicates estimates the inner expectations. Terms of the
form ``(E ...)^{1/2}`` are plug-in estimates built from inner means, which
are biased downward; a jackknife over inner replicates gives a debiased
companion value.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import CarrierSpace, EstimateWithError, FunctionalModel, MarkSpace
from .malliavin import Probe, diff_batch
from .sampler import RngStream, sample_locations, sample_poisson_process

ZERO_TOL = 1e-12

# stream tags, kept distinct so that estimators never share randomness
_TAG_GAMMA3, _TAG_GAMMA12, _TAG_GAMMA4, _TAG_GAMMA5 = 3, 12, 4, 5
_TAG_BIG, _TAG_COV, _TAG_POINCARE, _TAG_AS = 40, 50, 60, 70


@dataclass(frozen=True)
class NestedMcPlan:
    """Budget of a nested estimator.

    Outer probe tuple ``k`` uses streams ``(seed, tag, k, ...)``, so inner
    replicates of different tuples never share random numbers.
    """

    n_outer: int
    n_inner: int
    seed: int = 0
    n_middle: Optional[int] = None

    def __post_init__(self):
        if self.n_outer < 2 or self.n_inner < 1:
            raise ValueError("need n_outer >= 2 and n_inner >= 1")


def _snap(a: np.ndarray) -> np.ndarray:
    return np.where(np.abs(a) <= ZERO_TOL, 0.0, a)


def _probe_tuple(F: FunctionalModel, gen: np.random.Generator, k: int,
                 fixed_marks: bool = True) -> list[Probe]:
    locs = sample_locations(F.carrier, k, gen)
    if F.marks is None:
        return [Probe(x) for x in locs]
    marks = F.marks.sample(gen, k) if fixed_marks else [None] * k
    return [Probe(x, mk) for x, mk in zip(locs, marks)]


def _inner_differences(F: FunctionalModel, probes: Sequence[Probe],
                       pairs: Sequence[tuple[int, int]], n_inner: int,
                       stream: RngStream, fresh_marks: bool = False):
    """Differences over ``n_inner`` replicates; shapes (n, P, m) and (n, Q, m)."""
    m = F.m
    d1 = np.empty((n_inner, len(probes), m))
    d2 = np.empty((n_inner, len(pairs), m))
    for r in range(n_inner):
        st = stream.child(r)
        eta = sample_poisson_process(F.carrier, F.marks, st.child(0))
        use = probes
        if fresh_marks and F.marks is not None:
            mk = F.marks.sample(st.child(1).generator(), len(probes))
            use = [Probe(p.x, mk[i]) for i, p in enumerate(probes)]
        ds = diff_batch(F, eta, use, pairs)
        for a in range(len(probes)):
            d1[r, a] = ds.d1[a]
        for q, (i, j) in enumerate(pairs):
            d2[r, q] = ds.d2[(min(i, j), max(i, j))]
    return d1, _snap(d2)


def _jackknife_outer(stats: np.ndarray, g: Callable[[np.ndarray], np.ndarray]):
    """Plug-in and jackknife values of ``g(inner mean)``.

    ``stats`` has shape ``(n_inner, p)``; ``g`` maps ``(..., p)`` to ``(...)``.
    """
    n = stats.shape[0]
    mean = stats.mean(axis=0)
    plug = float(g(mean))
    if n < 2:
        return plug, plug
    loo = (n * mean[None, :] - stats) / (n - 1)
    jack = n * plug - (n - 1) * float(np.mean(g(loo)))
    return plug, jack


def _finish(q_plug: np.ndarray, q_jack: np.ndarray, plan: NestedMcPlan,
            root: bool) -> EstimateWithError:
    """Outer average, optional final square root with clipping at zero."""
    k = q_plug.size
    mean = float(np.mean(q_plug))
    se = float(np.std(q_plug, ddof=1) / math.sqrt(k))
    jmean = float(np.mean(q_jack))
    jse = float(np.std(q_jack, ddof=1) / math.sqrt(k))
    extras = {"outer_mean": mean, "outer_se": se, "jackknife_outer_mean": jmean,
              "unstable": float(mean < -3.0 * se)}
    if not root:
        extras["jackknife"] = jmean
        extras["jackknife_se"] = jse
        return EstimateWithError(mean, se, k, plan.seed, extras)
    val = math.sqrt(max(mean, 0.0))
    jval = math.sqrt(max(jmean, 0.0))
    extras["jackknife"] = jval
    extras["jackknife_se"] = jse / (2 * jval) if jval > 0 else math.sqrt(jse)
    val_se = se / (2 * val) if val > 0 else math.sqrt(se)
    return EstimateWithError(val, val_se, k, plan.seed, extras)


def estimate_gamma3(F: FunctionalModel, plan: NestedMcPlan) -> EstimateWithError:
    """``sum_i int E|D_x F_i|^3 lambda(dx)``."""
    lam = F.carrier.total_mass
    root = RngStream(plan.seed, (_TAG_GAMMA3,))
    q = np.empty(plan.n_outer)
    for k in range(plan.n_outer):
        st = root.child(k)
        probes = _probe_tuple(F, st.child(0).generator(), 1)
        d1, _ = _inner_differences(F, probes, (), plan.n_inner, st.child(1))
        q[k] = lam * float(np.sum(np.mean(np.abs(d1[:, 0, :]) ** 3, axis=0)))
    return _finish(q, q, plan, root=False)


def estimate_gamma1_gamma2(F: FunctionalModel, plan: NestedMcPlan
                           ) -> tuple[EstimateWithError, EstimateWithError]:
    """Both mixed terms built from probe triples ``(x1, x2, x3)``."""
    lam3 = F.carrier.total_mass ** 3
    m = F.m
    root = RngStream(plan.seed, (_TAG_GAMMA12,))
    pairs = [(0, 2), (1, 2)]
    q1p, q1j, q2p, q2j = (np.empty(plan.n_outer) for _ in range(4))

    def g1(mu):
        a, b = mu[..., :m], mu[..., m:]
        return lam3 * np.sqrt(np.clip(a, 0, None)).sum(-1) * np.sqrt(np.clip(b, 0, None)).sum(-1)

    def g2(mu):
        a = mu[..., :m]
        return lam3 * np.sqrt(np.clip(a, 0, None)).sum(-1) ** 2

    for k in range(plan.n_outer):
        st = root.child(k)
        probes = _probe_tuple(F, st.child(0).generator(), 3)
        d1, d2 = _inner_differences(F, probes, pairs, plan.n_inner, st.child(1))
        a = (d2[:, 0, :] ** 2) * (d2[:, 1, :] ** 2)
        b = (d1[:, 0, :] ** 2) * (d1[:, 1, :] ** 2)
        stats = np.concatenate([a, b], axis=1)
        q1p[k], q1j[k] = _jackknife_outer(stats, g1)
        q2p[k], q2j[k] = _jackknife_outer(stats, g2)
    return _finish(q1p, q1j, plan, True), _finish(q2p, q2j, plan, True)


def estimate_gamma4(F: FunctionalModel, plan: NestedMcPlan) -> EstimateWithError:
    """Fourth-moment term from probe pairs ``(x, y)``."""
    lam = F.carrier.total_mass
    m = F.m
    root = RngStream(plan.seed, (_TAG_GAMMA4,))
    qp, qj = np.empty(plan.n_outer), np.empty(plan.n_outer)

    def g(mu):
        dx4, d24 = mu[..., :m], mu[..., m:]
        s1 = np.sqrt(np.clip(dx4, 0, None)).sum(-1)
        s2 = np.sqrt(np.clip(d24, 0, None)).sum(-1)
        return lam * m * dx4.sum(-1) + lam * lam * (6.0 * s2 * s1 + 3.0 * s2 * s2)

    for k in range(plan.n_outer):
        st = root.child(k)
        probes = _probe_tuple(F, st.child(0).generator(), 2)
        d1, d2 = _inner_differences(F, probes, [(0, 1)], plan.n_inner, st.child(1))
        stats = np.concatenate([d1[:, 0, :] ** 4, d2[:, 0, :] ** 4], axis=1)
        qp[k], qj[k] = _jackknife_outer(stats, g)
    return _finish(qp, qj, plan, True)


def gamma5_summands(dx: np.ndarray, d2: np.ndarray, lam: float) -> np.ndarray:
    """The five per-probe-pair summands for replicate arrays ``(n, m)``."""
    m = dx.shape[1]
    nz = (np.max(np.abs(d2), axis=1) > ZERO_TOL).astype(float)
    e6 = np.mean(dx ** 6, axis=0)
    e26 = np.mean(np.abs(d2) ** 6, axis=0)
    cross = np.mean(nz[:, None, None] * np.abs(dx[:, :, None] * dx[:, None, :]) ** 3, axis=0)
    s1 = np.sum(e6 ** (1 / 3))
    s2 = np.sum(e26 ** (1 / 3))
    return np.array([
        lam * m * m * np.sum(e6),
        lam * lam * 8.0 * np.sum(cross ** (2 / 3)) * s1,
        lam * lam * 42.0 * s2 * s1 * s1,
        lam * lam * 42.0 * s2 * s2 * s1,
        lam * lam * 14.0 * s2 ** 3,
    ])


def estimate_gamma5(F: FunctionalModel, plan: NestedMcPlan) -> EstimateWithError:
    """Sixth-moment term; the per-summand means are kept in ``extras``."""
    lam = F.carrier.total_mass
    root = RngStream(plan.seed, (_TAG_GAMMA5,))
    parts = np.empty((plan.n_outer, 5))
    jack = np.empty(plan.n_outer)
    for k in range(plan.n_outer):
        st = root.child(k)
        probes = _probe_tuple(F, st.child(0).generator(), 2)
        d1, d2 = _inner_differences(F, probes, [(0, 1)], plan.n_inner, st.child(1))
        dx, dd = d1[:, 0, :], d2[:, 0, :]
        parts[k] = gamma5_summands(dx, dd, lam)
        n = dx.shape[0]
        total = parts[k].sum()
        if n > 1:
            loo = [gamma5_summands(np.delete(dx, r, 0), np.delete(dd, r, 0), lam).sum()
                   for r in range(n)]
            jack[k] = n * total - (n - 1) * float(np.mean(loo))
        else:
            jack[k] = total
    est = _finish(parts.sum(axis=1), jack, plan, True)
    extras = dict(est.extras)
    for i, v in enumerate(parts.mean(axis=0)):
        extras[f"summand{i + 1}"] = float(v)
    return EstimateWithError(est.value, est.std_error, est.n_replicates, est.seed, extras)


@dataclass(frozen=True)
class BigGammas:
    gamma1: EstimateWithError
    gamma2: EstimateWithError
    gamma3: EstimateWithError
    gamma4: Optional[EstimateWithError]
    c: float
    p: float


def estimate_big_gammas(F: FunctionalModel, c: float, p: float,
                        plan: NestedMcPlan, include_gamma4: bool = True) -> BigGammas:
    """Probability-based ingredients for marked processes.

    Inner probabilities are indicator means over replicates, with the probe
    marks resampled in every replicate; powers are applied to the estimated
    probabilities.
    """
    if not c > 0 or not p > 0:
        raise ValueError("need c > 0 and p > 0")
    if include_gamma4 and not p > 2:
        raise ValueError("the fourth probability term requires the moment "
                         f"exponent p > 2 (got p={p}); assume that p > 2")
    lam = F.carrier.total_mass
    m = F.m
    root = RngStream(plan.seed, (_TAG_BIG,))
    n_mid = plan.n_middle or plan.n_outer

    # terms over single probes and probe pairs share the outer pairs
    g2 = np.empty(plan.n_outer)
    g3 = np.empty(plan.n_outer)
    g4 = np.empty(plan.n_outer)
    for k in range(plan.n_outer):
        st = root.child(0, k)
        probes = _probe_tuple(F, st.child(0).generator(), 2, fixed_marks=False)
        d1, d2 = _inner_differences(F, probes, [(0, 1)], plan.n_inner,
                                    st.child(1), fresh_marks=True)
        p1 = np.mean(np.abs(d1[:, 0, :]) > ZERO_TOL, axis=0)
        p2 = np.mean(np.abs(d2[:, 0, :]) > ZERO_TOL, axis=0)
        g2[k] = lam * np.sum(p1 ** ((1 + p) / (4 + p)))
        g3[k] = (lam * lam * 9.0 * np.sum(p2 ** (p / (8 + 2 * p)))
                 + lam * np.sum(p1 ** (p / (4 + p))))
        if include_gamma4:
            g4[k] = (lam * lam * 106.0 * np.sum(p2 ** ((p - 2) / (12 + 3 * p)))
                     + lam * np.sum(p1 ** ((p - 2) / (4 + p))))
    # nested middle integral for the first term
    g1 = np.empty(plan.n_outer)
    for k in range(plan.n_outer):
        st = root.child(1, k)
        gen = st.child(0).generator()
        x1 = sample_locations(F.carrier, 1, gen)[0]
        inner = np.zeros(m)
        for j in range(n_mid):
            x2 = sample_locations(F.carrier, 1, gen)[0]
            probes = [Probe(x1, None if F.marks is None else np.zeros(F.marks.dim)),
                      Probe(x2, None if F.marks is None else np.zeros(F.marks.dim))]
            _, d2 = _inner_differences(F, probes, [(0, 1)], plan.n_inner,
                                       st.child(1, j), fresh_marks=True)
            pr = np.mean(np.abs(d2[:, 0, :]) > ZERO_TOL, axis=0)
            inner += pr ** (p / (16 + 4 * p))
        inner *= lam / n_mid
        g1[k] = lam * np.sum(inner ** 2)

    def scaled(q, expo, root_):
        est = _finish(q, q, plan, root_)
        f = c ** expo
        ex = dict(est.extras)
        ex["jackknife"] = ex["jackknife"] * f
        return EstimateWithError(est.value * f, est.std_error * f, est.n_replicates,
                                 est.seed, ex)

    return BigGammas(
        scaled(g1, 2 / (4 + p), True),
        scaled(g2, 3 / (4 + p), False),
        scaled(g3, 2 / (4 + p), True),
        scaled(g4, 3 / (4 + p), True) if include_gamma4 else None,
        c, p)


@dataclass(frozen=True)
class CovarianceEstimate:
    cov: np.ndarray
    std_error: np.ndarray
    n: int
    seed: int
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    def discrepancy(self, sigma: np.ndarray) -> EstimateWithError:
        """``sum_ij |sigma_ij - Cov_ij|`` with a jackknife standard error."""
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        val = float(np.sum(np.abs(sigma - self.cov)))
        if self.samples is None:
            return EstimateWithError(val, math.nan, self.n, self.seed)
        loo = _loo_covariances(self.samples)
        vals = np.sum(np.abs(sigma[None] - loo), axis=(1, 2))
        n = self.n
        se = math.sqrt((n - 1) / n * float(np.sum((vals - vals.mean()) ** 2)))
        return EstimateWithError(val, se, n, self.seed)


def _loo_covariances(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    mean = x.mean(axis=0)
    s = x.T @ x
    loo_mean = (n * mean[None, :] - x) / (n - 1)
    outer_x = x[:, :, None] * x[:, None, :]
    outer_m = loo_mean[:, :, None] * loo_mean[:, None, :]
    return (s[None] - outer_x - (n - 1) * outer_m) / (n - 2)


def covariance_from_samples(x: np.ndarray, seed: int = 0) -> CovarianceEstimate:
    """Sample covariance with per-entry jackknife standard errors."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 3:
        raise ValueError("need at least 3 samples")
    cov = np.atleast_2d(np.cov(x.T, ddof=1))
    loo = _loo_covariances(x)
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return CovarianceEstimate(cov, se, n, seed, x)


def sample_functional(F: FunctionalModel, n: int, seed: int,
                      tag: int = _TAG_COV) -> np.ndarray:
    """``n`` independent evaluations of ``F``; shape ``(n, m)``."""
    root = RngStream(seed, (tag,))
    out = np.empty((n, F.m))
    for k in range(n):
        out[k] = F.evaluate(sample_poisson_process(F.carrier, F.marks, root.child(k)))
    return out


def estimate_covariance(F: FunctionalModel, n: int, seed: int = 0) -> CovarianceEstimate:
    if n < 3:
        raise ValueError("need n >= 3")
    return covariance_from_samples(sample_functional(F, n, seed), seed)


@dataclass(frozen=True)
class GammaReport:
    gamma1: EstimateWithError
    gamma2: EstimateWithError
    gamma3: EstimateWithError
    gamma4: EstimateWithError
    gamma5: EstimateWithError
    cov: CovarianceEstimate
    cov_discrepancy: Optional[EstimateWithError]
    plan: NestedMcPlan

    def rows(self, label: str = "") -> list[list[str]]:
        out = []
        items = [("gamma1", self.gamma1), ("gamma2", self.gamma2),
                 ("gamma3", self.gamma3), ("gamma4", self.gamma4),
                 ("gamma5", self.gamma5)]
        if self.cov_discrepancy is not None:
            items.append(("cov_discrepancy", self.cov_discrepancy))
        for name, est in items:
            out.append([label + name, repr(est.value), repr(est.std_error),
                        str(self.plan.n_outer), str(self.plan.n_inner), str(self.plan.seed)])
            if "jackknife" in est.extras:
                out.append([label + name + "_jackknife", repr(est.extras["jackknife"]),
                            repr(est.extras.get("jackknife_se", math.nan)),
                            str(self.plan.n_outer), str(self.plan.n_inner), str(self.plan.seed)])
        m = self.cov.cov.shape[0]
        for i in range(m):
            for j in range(i, m):
                out.append([f"{label}cov_{i + 1}{j + 1}", repr(float(self.cov.cov[i, j])),
                            repr(float(self.cov.std_error[i, j])), str(self.cov.n), "1",
                            str(self.cov.seed)])
        return out

    def to_csv(self, label: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["term", "value", "std_error", "n_outer", "n_inner", "seed"])
        w.writerows(self.rows(label))
        return buf.getvalue()


def estimate_all(F: FunctionalModel, plan: NestedMcPlan, n_cov: int = 1000,
                 sigma: Optional[np.ndarray] = None) -> GammaReport:
    g1, g2 = estimate_gamma1_gamma2(F, plan)
    cov = estimate_covariance(F, n_cov, plan.seed)
    disc = cov.discrepancy(sigma) if sigma is not None else None
    return GammaReport(g1, g2, estimate_gamma3(F, plan), estimate_gamma4(F, plan),
                       estimate_gamma5(F, plan), cov, disc, plan)


@dataclass(frozen=True)
class PoincareCheck:
    variance: np.ndarray
    variance_se: np.ndarray
    integral: np.ndarray
    integral_se: np.ndarray
    passed: np.ndarray

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))


def poincare_check(F: FunctionalModel, n: int, seed: int = 0) -> PoincareCheck:
    """Compare ``Var F_i`` with ``int E (D_x F_i)^2 lambda(dx)`` per component.

    Passes when the integral exceeds the variance minus three combined
    standard errors.
    """
    vals = sample_functional(F, n, seed, tag=_TAG_POINCARE)
    var = vals.var(axis=0, ddof=1)
    c4 = np.mean((vals - vals.mean(axis=0)) ** 4, axis=0)
    var_se = np.sqrt(np.clip(c4 - var ** 2, 0, None) / n)
    lam = F.carrier.total_mass
    root = RngStream(seed, (_TAG_POINCARE, 1))
    sq = np.empty((n, F.m))
    for k in range(n):
        st = root.child(k)
        probes = _probe_tuple(F, st.child(0).generator(), 1)
        eta = sample_poisson_process(F.carrier, F.marks, st.child(1))
        sq[k] = lam * diff_batch(F, eta, probes).d1[0] ** 2
    integral = sq.mean(axis=0)
    int_se = sq.std(axis=0, ddof=1) / math.sqrt(n)
    comb = np.sqrt(var_se ** 2 + int_se ** 2)
    return PoincareCheck(var, var_se, integral, int_se, integral >= var - 3 * comb)


@dataclass(frozen=True)
class AssumptionScaleReport:
    s: float
    max_abs_d1: float
    max_diff_bound: float
    bounded_diff_ok: bool
    second_diff_integral: float
    second_diff_se: float
    second_diff_ok: bool


def check_rescaling_assumptions(models: Mapping[float, FunctionalModel], a: float,
                                b: float, n_probes: int = 200, n_x: int = 8,
                                n_y: int = 100, n_inner: int = 20,
                                seed: int = 0) -> list[AssumptionScaleReport]:
    """Bounded-difference and sparse-interaction checks across scales.

    ``|D_x F_i| <= a / sqrt(s)`` is checked on sampled probes. The integral
    ``s * int P(D2_{x,y} F_i != 0)^{1/4} mu(dy)`` is estimated at ``n_x``
    base points and its largest value compared with ``b``.
    """
    out = []
    for idx, (s, F) in enumerate(sorted(models.items())):
        root = RngStream(seed, (_TAG_AS, idx))
        dmax = 0.0
        for k in range(n_probes):
            st = root.child(0, k)
            probes = _probe_tuple(F, st.child(0).generator(), 1)
            eta = sample_poisson_process(F.carrier, F.marks, st.child(1))
            dmax = max(dmax, float(np.max(np.abs(diff_batch(F, eta, probes).d1[0]))))
        lam = F.carrier.total_mass
        best, best_se = 0.0, 0.0
        for j in range(n_x):
            st = root.child(1, j)
            gen = st.child(0).generator()
            x = _probe_tuple(F, gen, 1)[0]
            vals = np.empty((n_y, F.m))
            for q in range(n_y):
                y = _probe_tuple(F, gen, 1)[0]
                _, d2 = _inner_differences(F, [x, y], [(0, 1)], n_inner, st.child(1, q))
                vals[q] = np.mean(np.abs(d2[:, 0, :]) > ZERO_TOL, axis=0) ** 0.25
            per = lam * vals
            means = per.mean(axis=0)
            i = int(np.argmax(means))
            if means[i] >= best:
                best = float(means[i])
                best_se = float(per[:, i].std(ddof=1) / math.sqrt(n_y))
        bound = a / math.sqrt(s)
        out.append(AssumptionScaleReport(s, dmax, bound, dmax <= bound * (1 + 1e-12),
                                         best, best_se, best <= b))
    return out
