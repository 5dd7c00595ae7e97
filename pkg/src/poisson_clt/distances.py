"""Search-based lower bounds on Kolmogorov, half-space and convex distances.

Each estimate carries a witness region.  Its value is always recomputed by
:func:`region_gap`, so replaying the witness on the same samples gives the
same number bit for bit.

Search strategy: random directions (uniform on the sphere in whitened
coordinates), offsets started on sample quantiles, then coordinate descent
on the offsets over the exact jump points of the empirical measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .core import GaussianTarget, gaussian_target_from
from .sampler import RngStream, sample_gaussian
from .testfns import (DEFAULT_GAUSS_N, DEFAULT_GAUSS_SEED, AxisBox, Ball,
                      HalfspaceIntersection, TestFunction, bvn_cdf,
                      gaussian_draws, parse_test_function, region_gap)

DEFAULT_BUDGET = 2000
_TAG_DIRECTIONS = 71
_TAG_BALLS = 72
_TAG_BOXES = 73
_TAG_MC = 74
_TAG_NULL = 75


@dataclass
class DistanceEstimate:
    """A lower bound on a distance, attained by ``witness``."""

    kind: str
    value: float
    witness: TestFunction
    n_samples: int
    gaussian_prob_se: float
    empirical: float
    gaussian: float
    gauss_n: int = DEFAULT_GAUSS_N
    gauss_seed: int = DEFAULT_GAUSS_SEED
    budget: int = 0
    null_calibration: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def witness_text(self, target: GaussianTarget) -> str:
        lines = [
            f"witness={self.witness.to_text()}",
            f"kind={self.kind}",
            f"value={self.value!r}",
            f"m={target.m}",
            "sigma=" + ",".join(repr(float(v)) for v in target.sigma.ravel()),
            f"gauss_n={self.gauss_n}",
            f"gauss_seed={self.gauss_seed}",
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class StoredWitness:
    witness: TestFunction
    kind: str
    value: float
    target: GaussianTarget
    gauss_n: int
    gauss_seed: int


def load_witness(text: str) -> StoredWitness:
    kv = dict(line.split("=", 1) for line in text.strip().splitlines() if "=" in line)
    m = int(kv["m"])
    sigma = np.array([float(v) for v in kv["sigma"].split(",")]).reshape(m, m)
    return StoredWitness(parse_test_function(kv["witness"], m), kv["kind"],
                         float(kv["value"]), gaussian_target_from(sigma),
                         int(kv["gauss_n"]), int(kv["gauss_seed"]))


def replay_witness(stored: StoredWitness, samples: np.ndarray) -> float:
    """Recompute the gap of a stored witness on ``samples``."""
    gap, _, _ = region_gap(_as_matrix(samples), stored.witness, stored.target,
                           stored.gauss_n, stored.gauss_seed)
    return gap


def _as_matrix(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def _finish(kind: str, witness: TestFunction, samples: np.ndarray,
            target: GaussianTarget, gauss_n: int, gauss_seed: int,
            budget: int, **extras) -> DistanceEstimate:
    gap, emp, g = region_gap(samples, witness, target, gauss_n, gauss_seed)
    return DistanceEstimate(kind, gap, witness, samples.shape[0], g.std_error,
                            emp, g.value, gauss_n, gauss_seed, budget,
                            extras=dict(extras))


def _jumps(v: np.ndarray, n: int, big: float):
    """Sorted offsets just below and at each distinct value, with counts / n.

    The last candidate (``big``) keeps every value inside.
    """
    if v.size == 0:
        return np.array([big]), np.array([0.0])
    v = np.sort(v)
    last = np.append(np.flatnonzero(v[1:] != v[:-1]), v.size - 1)
    uniq = v[last]
    c_le = (last + 1).astype(float)
    c_lt = np.concatenate([[0.0], c_le[:-1]])
    cand = np.empty(2 * uniq.size + 1)
    emp = np.empty(2 * uniq.size + 1)
    cand[0:-1:2], cand[1:-1:2] = np.nextafter(uniq, -np.inf), uniq
    emp[0:-1:2], emp[1:-1:2] = c_lt, c_le
    cand[-1], emp[-1] = max(big, uniq[-1]), float(v.size)
    return cand, emp / n


def _argmax_gap(cand: np.ndarray, emp: np.ndarray, prob: Callable, grid: int = 2048):
    """Index maximising ``|emp - prob(cand)|``: coarse grid, then a local window.

    ``prob`` is smooth and monotone in the candidate, so the window around the
    coarse maximiser holds the true one up to the coarse step.
    """
    if cand.size <= 2 * grid:
        gaps = np.abs(emp - prob(cand))
        k = int(np.argmax(gaps))
        return k, float(gaps[k])
    step = cand.size // grid
    coarse = np.arange(0, cand.size, step)
    gaps = np.abs(emp[coarse] - prob(cand[coarse]))
    j = int(coarse[int(np.argmax(gaps))])
    lo, hi = max(0, j - 2 * step), min(cand.size, j + 2 * step + 1)
    gaps = np.abs(emp[lo:hi] - prob(cand[lo:hi]))
    k = int(np.argmax(gaps))
    return lo + k, float(gaps[k])


def _sweep_1d(p: np.ndarray, sd: float):
    """Exact best offset for a single half-space ``<u, x> <= z``."""
    n = p.size
    cand, emp = _jumps(p, n, 10.0 * sd)
    g = special.ndtr(cand / sd) if sd > 0 else (cand >= 0).astype(float)
    gaps = np.abs(emp - g)
    k = int(np.argmax(gaps))
    return float(gaps[k]), float(cand[k])


def estimate_dK(samples, sigma: float = 1.0, gauss_n: int = DEFAULT_GAUSS_N,
                gauss_seed: int = DEFAULT_GAUSS_SEED) -> DistanceEstimate:
    """One-sample Kolmogorov statistic against ``N(0, sigma^2)``.

    The supremum runs over all jump points from both sides; left limits are
    realised by the closed half-line ending one ulp below the jump.
    """
    x = _as_matrix(samples)
    if x.shape[1] != 1:
        raise ValueError("estimate_dK needs one-dimensional samples")
    target = gaussian_target_from(np.array([[float(sigma) ** 2]]))
    _, z = _sweep_1d(x[:, 0], float(sigma))
    w = HalfspaceIntersection(np.array([[1.0]]), [z])
    return _finish("dK", w, x, target, gauss_n, gauss_seed, 0)


def _random_directions(gen: np.random.Generator, target: GaussianTarget, l: int) -> np.ndarray:
    """Directions uniform on the sphere in whitened coordinates, mapped back."""
    g = gen.standard_normal((l, target.m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    if target.positive_definite:
        g = g @ target.inv_sqrt
        g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g


class _HalfspaceGauss:
    """Gaussian probability of ``{P_i <= z_i}`` as one offset varies."""

    def __init__(self, u: np.ndarray, target: GaussianTarget,
                 gauss_n: int, gauss_seed: int):
        self.l = u.shape[0]
        cov = u @ target.sigma @ u.T
        self.sd = np.sqrt(np.clip(np.diag(cov), 0, None))
        self.exact = self.l <= 2 and np.all(self.sd > 0)
        if self.l == 2 and self.exact:
            self.rho = float(cov[0, 1] / (self.sd[0] * self.sd[1]))
        if not self.exact:
            self.proj = gaussian_draws(target, gauss_n, gauss_seed) @ u.T

    def grid(self, z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
        return bvn_cdf(z1[:, None] / self.sd[0], z2[None, :] / self.sd[1], self.rho)

    def along(self, j: int, cand: np.ndarray, z: np.ndarray) -> np.ndarray:
        if self.exact and self.l == 1:
            return special.ndtr(cand / self.sd[0])
        if self.exact:
            o = 1 - j
            return bvn_cdf(cand / self.sd[j], z[o] / self.sd[o], self.rho)
        others = np.all(np.delete(self.proj, j, 1) <= np.delete(z, j), axis=1)
        v = np.sort(self.proj[others, j])
        return np.searchsorted(v, cand, side="right") / self.proj.shape[0]

    def at(self, z: np.ndarray) -> float:
        if self.exact and self.l == 1:
            return float(special.ndtr(z[0] / self.sd[0]))
        if self.exact:
            return float(bvn_cdf(z[0] / self.sd[0], z[1] / self.sd[1], self.rho))
        return float(np.mean(np.all(self.proj <= z, axis=1)))


def _refine_offsets(P: np.ndarray, z: np.ndarray, gauss: _HalfspaceGauss,
                    n: int, rounds: int = 4) -> tuple[float, np.ndarray]:
    z = z.copy()
    best = abs(np.mean(np.all(P <= z, axis=1)) - gauss.at(z))
    for _ in range(rounds):
        improved = False
        for j in range(P.shape[1]):
            others = np.all(np.delete(P, j, 1) <= np.delete(z, j), axis=1)
            cand, emp = _jumps(P[others, j], n, 10.0 * max(gauss.sd[j], 1e-300))
            if gauss.exact:
                k, gap = _argmax_gap(cand, emp, lambda c: gauss.along(j, c, z))
            else:
                gaps = np.abs(emp - gauss.along(j, cand, z))
                k = int(np.argmax(gaps))
                gap = float(gaps[k])
            if gap > best + 1e-15:
                best, z[j], improved = gap, cand[k], True
        if not improved:
            break
    return best, z


def _grid_start(P: np.ndarray, gauss: _HalfspaceGauss, gen: np.random.Generator,
                levels: int = 16, combos: int = 32) -> tuple[float, np.ndarray]:
    """Best offsets on a quantile grid for one set of directions."""
    n, l = P.shape
    qs = (np.arange(levels) + 0.5) / levels
    thr = np.quantile(P[:4096], qs, axis=0)               # (levels, l)
    if l == 2 and gauss.exact:
        top = P.max(axis=0) + 1.0
        t1, t2 = np.append(thr[:, 0], top[0]), np.append(thr[:, 1], top[1])
        i1 = np.searchsorted(t1, P[:, 0], side="left")
        i2 = np.searchsorted(t2, P[:, 1], side="left")
        k = levels + 2
        hist = np.bincount(i1 * k + i2, minlength=k * k).reshape(k, k)
        cum = hist.cumsum(0).cumsum(1)[: levels + 1, : levels + 1] / n
        gaps = np.abs(cum - gauss.grid(t1, t2))
        a, b = np.unravel_index(int(np.argmax(gaps)), gaps.shape)
        return float(gaps[a, b]), np.array([t1[a], t2[b]])
    best, best_z = -1.0, None
    for _ in range(combos):
        z = thr[gen.integers(0, levels, size=l), np.arange(l)]
        gap = abs(np.mean(np.all(P <= z, axis=1)) - gauss.at(z))
        if gap > best:
            best, best_z = gap, z
    return best, best_z


def _search_halfspaces(x: np.ndarray, target: GaussianTarget, l: int, starts: int,
                       seed: int, gauss_n: int, gauss_seed: int, tag: int,
                       refine_top: int = 8) -> HalfspaceIntersection:
    n = x.shape[0]
    root = RngStream(seed, (tag, l))
    scored = []
    for k in range(starts):
        gen = root.child(k).generator()
        u = _random_directions(gen, target, l)
        P = x @ u.T
        gauss = _HalfspaceGauss(u, target, gauss_n, gauss_seed)
        if l == 1:
            gap, z = _sweep_1d(P[:, 0], float(gauss.sd[0]))
            z = np.array([z])
        else:
            gap, z = _grid_start(P, gauss, gen)
        scored.append((gap, k, u, z))
    # stable sort keeps the lowest start index first among ties
    scored.sort(key=lambda t: -t[0])
    best, best_w = -1.0, None
    for gap, k, u, z in scored[: max(1, refine_top)]:
        if l > 1:
            gauss = _HalfspaceGauss(u, target, gauss_n, gauss_seed)
            gap, z = _refine_offsets(x @ u.T, z, gauss, n)
        if gap > best:
            best, best_w = gap, HalfspaceIntersection(u, z)
    return best_w


def estimate_dHl(samples, target: GaussianTarget, l: int = 2,
                 budget: int = DEFAULT_BUDGET, seed: int = 0,
                 gauss_n: int = DEFAULT_GAUSS_N,
                 gauss_seed: int = DEFAULT_GAUSS_SEED) -> DistanceEstimate:
    """Lower bound on the distance over intersections of ``l`` closed half-spaces.

    Every smaller intersection count is searched with the same seed as
    well, so the estimate is monotone in ``l`` on fixed samples.  ``budget``
    is the number of random starts per intersection count.
    """
    if l < 1:
        raise ValueError("l must be at least 1")
    x = _as_matrix(samples)
    if x.shape[1] != target.m:
        raise ValueError(f"samples have dimension {x.shape[1]}, target {target.m}")
    best = None
    for k in range(1, l + 1):
        starts = budget if k <= 2 else max(4, budget // 100)
        w = _search_halfspaces(x, target, k, starts, seed, gauss_n, gauss_seed,
                               _TAG_DIRECTIONS)
        est = _finish(f"dHl({l})", w, x, target, gauss_n, gauss_seed, budget)
        if best is None or est.value > best.value:
            best = est
    return best


def _search_balls(xw: np.ndarray, m: int, starts: int, gen: np.random.Generator,
                  grid: int = 256):
    """Whitened balls: centres from samples, the origin and Gaussian draws."""
    n = xw.shape[0]
    centres = [np.zeros(m)]
    for k in range(starts):
        if k % 2 == 0:
            centres.append(xw[gen.integers(n)])
        else:
            centres.append(gen.standard_normal(m) * gen.uniform(0, 2))
    best, best_c, best_r = -1.0, None, 0.0
    for c in centres:
        d = np.sqrt(np.sum((xw - c) ** 2, axis=1))
        cand, emp = _jumps(d, n, 0.0)
        cand, emp = cand[:-1], emp[:-1]
        keep = cand >= 0
        cand, emp = cand[keep], emp[keep]
        nc = float(c @ c)

        def prob(r, nc=nc):
            return stats.chi2.cdf(r * r, m) if nc == 0 else stats.ncx2.cdf(r * r, m, nc)

        j, gap = _argmax_gap(cand, emp, prob, grid)
        if gap > best:
            best, best_c, best_r = gap, c, float(cand[j])
    return best_c, best_r


def _search_boxes(xw: np.ndarray, m: int, starts: int, gen: np.random.Generator,
                  rounds: int = 3):
    """Whitened axis boxes with coordinate descent on all ``2m`` faces."""
    n = xw.shape[0]
    best, best_box = -1.0, None
    big = 10.0
    for _ in range(starts):
        q = np.sort(gen.uniform(0, 1, size=(m, 2)), axis=1)
        lo = np.quantile(xw, q[:, 0], axis=0).diagonal().copy()
        hi = np.quantile(xw, q[:, 1], axis=0).diagonal().copy()
        for j in range(m):
            if gen.uniform() < 0.25:
                lo[j] = -big - abs(xw[:, j]).max()
            if gen.uniform() < 0.25:
                hi[j] = big + abs(xw[:, j]).max()

        def value(lo, hi):
            emp = np.mean(np.all((xw >= lo) & (xw <= hi), axis=1))
            g = np.prod(special.ndtr(hi) - special.ndtr(lo))
            return abs(emp - g)

        cur = value(lo, hi)
        for _ in range(rounds):
            improved = False
            for j in range(m):
                rest = np.all(np.delete((xw >= lo) & (xw <= hi), j, 1), axis=1)
                pg = np.prod(np.delete(special.ndtr(hi) - special.ndtr(lo), j))
                col = xw[rest, j]
                # upper face
                cand, emp = _jumps(col[col >= lo[j]], n, big + abs(col).max(initial=0))
                gaps = np.abs(emp - pg * np.clip(special.ndtr(cand) - special.ndtr(lo[j]), 0, 1))
                k = int(np.argmax(gaps))
                if gaps[k] > cur + 1e-15:
                    cur, hi[j], improved = float(gaps[k]), cand[k], True
                # lower face, mirrored
                sub = -col[col <= hi[j]]
                cand, emp = _jumps(sub, n, big + abs(col).max(initial=0))
                lcand = -cand
                gaps = np.abs(emp - pg * np.clip(special.ndtr(hi[j]) - special.ndtr(lcand), 0, 1))
                k = int(np.argmax(gaps))
                if gaps[k] > cur + 1e-15:
                    cur, lo[j], improved = float(gaps[k]), lcand[k], True
            if not improved:
                break
        if cur > best:
            best, best_box = cur, (lo.copy(), hi.copy())
    return best_box


def estimate_dconvex(samples, target: GaussianTarget, budget: int = DEFAULT_BUDGET,
                     seed: int = 0, l: int = 2, dhl: Optional[DistanceEstimate] = None,
                     gauss_n: int = DEFAULT_GAUSS_N,
                     gauss_seed: int = DEFAULT_GAUSS_SEED) -> DistanceEstimate:
    """Lower bound on the convex distance over a parametric catalogue.

    The catalogue holds whitened balls, whitened axis boxes, intersections
    of up to ``2m`` half-spaces and the witness of the half-space estimate
    with ``l`` half-spaces (computed here unless ``dhl`` is given), so the
    result is never below that estimate.
    """
    x = _as_matrix(samples)
    m = target.m
    if dhl is None:
        dhl = estimate_dHl(x, target, l, budget, seed, gauss_n, gauss_seed)
    candidates: list[TestFunction] = [dhl.witness]
    family = ["halfspaces"]
    small = max(4, budget // 100)
    if target.positive_definite:
        T = np.array(target.inv_sqrt)
        xw = x @ T.T
        gen = RngStream(seed, (_TAG_BALLS,)).generator()
        c, r = _search_balls(xw, m, max(8, budget // 20), gen)
        candidates.append(Ball(c, r, T))
        family.append("ball")
        gen = RngStream(seed, (_TAG_BOXES,)).generator()
        lo, hi = _search_boxes(xw, m, max(8, budget // 20), gen)
        candidates.append(AxisBox(lo, hi, T))
        family.append("box")
    for k in range(l + 1, 2 * m + 1):
        candidates.append(_search_halfspaces(x, target, k, small, seed, gauss_n,
                                             gauss_seed, _TAG_MC, refine_top=3))
        family.append(f"halfspaces{k}")
    best = None
    for fam, w in zip(family, candidates):
        est = _finish("dconvex", w, x, target, gauss_n, gauss_seed, budget, family=fam)
        if best is None or est.value > best.value:
            best = est
    best.extras["dhl_value"] = dhl.value
    return best


def null_calibration(target: GaussianTarget, n: int, estimator: Callable[..., DistanceEstimate],
                     seed: int = 0, **kwargs) -> float:
    """Estimator value on ``n`` exact draws from the target itself."""
    y = sample_gaussian(target, n, RngStream(seed, (_TAG_NULL,)).generator())
    return estimator(y, target, seed=seed, **kwargs).value
