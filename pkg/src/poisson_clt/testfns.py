"""Indicator test functions on R^m and their Gaussian probabilities.

Every class exposes ``contains(x)`` for an ``(n, m)`` array and a text form
that round-trips exactly (floats are written with ``repr``).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import special, stats

from .core import EstimateWithError, GaussianTarget
from .sampler import RngStream

DEFAULT_GAUSS_N = 1_000_000
DEFAULT_GAUSS_SEED = 20240531
_GAUSS_TAG = 90


def _arr(a, ndim: int) -> np.ndarray:
    out = np.array(a, dtype=float)
    if ndim == 2:
        out = np.atleast_2d(out)
    else:
        out = np.atleast_1d(out)
    out.flags.writeable = False
    return out


def _fmt(a) -> str:
    return ",".join(repr(float(v)) for v in np.ravel(a))


def _parse(s: str) -> np.ndarray:
    s = s.strip()
    return np.array([float(v) for v in s.split(",")]) if s else np.zeros(0)


@dataclass(frozen=True)
class HalfspaceIntersection:
    """``{x : <u_i, x> <= z_i for all i}``; no half-spaces means all of R^m."""

    directions: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        u = np.array(self.directions, dtype=float)
        if u.ndim == 1:
            u = u.reshape(1, -1) if u.size else u.reshape(0, 0)
        norms = np.linalg.norm(u, axis=1) if u.size else np.zeros(0)
        if np.any(norms == 0):
            raise ValueError("half-space directions must be nonzero")
        if u.size and np.max(np.abs(norms - 1.0)) > 1e-12:
            u = u / norms[:, None]
        z = np.atleast_1d(np.array(self.offsets, dtype=float))
        if z.shape[0] != u.shape[0]:
            raise ValueError("need one offset per direction")
        object.__setattr__(self, "directions", _arr(u, 2) if u.size else u)
        object.__setattr__(self, "offsets", _arr(z, 1))

    @property
    def l(self) -> int:
        return self.offsets.shape[0]

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.l == 0:
            return np.ones(x.shape[0], dtype=bool)
        return np.all(x @ self.directions.T <= self.offsets, axis=1)

    def to_text(self) -> str:
        return f"halfspaces;{_fmt(self.directions)};{_fmt(self.offsets)}"


@dataclass(frozen=True)
class Ball:
    """``{x : |T x - c| <= r}``; ``T`` defaults to the identity."""

    center: np.ndarray
    radius: float
    transform: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "center", _arr(self.center, 1))
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        if self.transform is not None:
            object.__setattr__(self, "transform", _arr(self.transform, 2))

    def _map(self, x):
        x = np.atleast_2d(x)
        return x if self.transform is None else x @ self.transform.T

    def contains(self, x: np.ndarray) -> np.ndarray:
        d = self._map(x) - self.center
        return np.sqrt(np.sum(d * d, axis=1)) <= self.radius

    def to_text(self) -> str:
        t = "" if self.transform is None else _fmt(self.transform)
        return f"ball;{_fmt(self.center)};{repr(float(self.radius))};{t}"


@dataclass(frozen=True)
class AxisBox:
    """``{x : lower <= T x <= upper}`` coordinatewise."""

    lower: np.ndarray
    upper: np.ndarray
    transform: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "lower", _arr(self.lower, 1))
        object.__setattr__(self, "upper", _arr(self.upper, 1))
        if self.transform is not None:
            object.__setattr__(self, "transform", _arr(self.transform, 2))

    def contains(self, x: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(x)
        if self.transform is not None:
            y = y @ self.transform.T
        return np.all((y >= self.lower) & (y <= self.upper), axis=1)

    def to_text(self) -> str:
        t = "" if self.transform is None else _fmt(self.transform)
        return f"box;{_fmt(self.lower)};{_fmt(self.upper)};{t}"


@dataclass(frozen=True)
class Simplex:
    """Convex hull of ``m + 1`` affinely independent vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        v = _arr(self.vertices, 2)
        if v.shape[0] != v.shape[1] + 1:
            raise ValueError("a simplex in R^m needs m + 1 vertices")
        object.__setattr__(self, "vertices", v)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        v0 = self.vertices[0]
        edges = (self.vertices[1:] - v0).T
        lam = np.linalg.solve(edges, (x - v0).T).T
        tol = 1e-12
        return np.all(lam >= -tol, axis=1) & (np.sum(lam, axis=1) <= 1 + tol)

    def to_text(self) -> str:
        m = self.vertices.shape[1]
        return f"simplex;{m};{_fmt(self.vertices)}"


TestFunction = Union[HalfspaceIntersection, Ball, AxisBox, Simplex]


def parse_test_function(text: str, m: int) -> TestFunction:
    parts = text.strip().split(";")
    kind = parts[0]
    if kind == "halfspaces":
        z = _parse(parts[2])
        u = _parse(parts[1]).reshape(z.size, m) if z.size else np.zeros((0, m))
        return HalfspaceIntersection(u, z)
    if kind == "ball":
        t = _parse(parts[3]).reshape(m, m) if len(parts) > 3 and parts[3] else None
        return Ball(_parse(parts[1]), float(parts[2]), t)
    if kind == "box":
        t = _parse(parts[3]).reshape(m, m) if len(parts) > 3 and parts[3] else None
        return AxisBox(_parse(parts[1]), _parse(parts[2]), t)
    if kind == "simplex":
        mm = int(parts[1])
        return Simplex(_parse(parts[2]).reshape(mm + 1, mm))
    raise ValueError(f"unknown test function kind {kind!r}")


def halfspace(u, z) -> HalfspaceIntersection:
    return HalfspaceIntersection(np.atleast_2d(np.asarray(u, dtype=float)), [z])


def bvn_cdf(h, k, rho) -> np.ndarray:
    """``P(X <= h, Y <= k)`` for standard bivariate normals with correlation rho.

    Uses Owen's T function; exact up to rounding.
    """
    h, k, rho = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float),
                                    np.asarray(rho, float))
    h, k, rho = h.copy(), k.copy(), rho.copy()
    out = np.empty(h.shape)
    hi = rho >= 1 - 1e-14
    lo = rho <= -1 + 1e-14
    out[hi] = special.ndtr(np.minimum(h[hi], k[hi]))
    out[lo] = np.clip(special.ndtr(h[lo]) + special.ndtr(k[lo]) - 1.0, 0.0, 1.0)
    mid = ~(hi | lo)
    hh, kk, rr = h[mid], k[mid], rho[mid]
    # the CDF is flat to O(1e-100) here and ratios of subnormals are inexact
    hh = np.where(np.abs(hh) < 1e-100, 0.0, hh)
    kk = np.where(np.abs(kk) < 1e-100, 0.0, kk)
    both0 = (hh == 0) & (kk == 0)
    tiny = 1e-300
    hh = np.where((hh == 0) & ~both0, tiny, hh)
    kk = np.where((kk == 0) & ~both0, tiny, kk)
    c = np.sqrt(1.0 - rr * rr)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ah = (kk - rr * hh) / (hh * c)
        ak = (hh - rr * kk) / (kk * c)
    # signs, not the product, which can underflow for subnormal arguments
    beta = np.where(np.sign(hh) == np.sign(kk), 0.0, 0.5)
    val = 0.5 * (special.ndtr(hh) + special.ndtr(kk)) - special.owens_t(hh, ah) \
        - special.owens_t(kk, ak) - beta
    val = np.where(both0, 0.25 + np.arcsin(rr) / (2 * math.pi), val)
    out[mid] = np.clip(val, 0.0, 1.0)
    return out


@functools.lru_cache(maxsize=8)
def _standard_draws(m: int, n: int, seed: int) -> np.ndarray:
    gen = RngStream(seed, (_GAUSS_TAG, m)).generator()
    z = gen.standard_normal((n, m))
    z.flags.writeable = False
    return z


def gaussian_draws(target: GaussianTarget, n: int = DEFAULT_GAUSS_N,
                   seed: int = DEFAULT_GAUSS_SEED) -> np.ndarray:
    """Common random numbers: the same standard draws mapped through sqrt(sigma)."""
    return _standard_draws(target.m, n, seed) @ target.sqrt


def _pushed_cov(target: GaussianTarget, t: Optional[np.ndarray]) -> Optional[np.ndarray]:
    cov = target.sigma if t is None else t @ target.sigma @ t.T
    return cov


def gaussian_region_prob(target: GaussianTarget, h: TestFunction,
                         n: int = DEFAULT_GAUSS_N,
                         seed: int = DEFAULT_GAUSS_SEED) -> EstimateWithError:
    """``P(N_sigma in region)``: closed form where available, else common-draw MC."""
    if isinstance(h, HalfspaceIntersection):
        if h.l == 0:
            return EstimateWithError(1.0, 0.0, 0, None)
        u = h.directions
        cov = u @ target.sigma @ u.T
        sd = np.sqrt(np.clip(np.diag(cov), 0, None))
        if h.l == 1:
            z = float(h.offsets[0])
            if sd[0] == 0:
                return EstimateWithError(1.0 if z >= 0 else 0.0, 0.0, 0, None)
            return EstimateWithError(float(special.ndtr(z / sd[0])), 0.0, 0, None)
        if h.l == 2 and np.all(sd > 0):
            rho = cov[0, 1] / (sd[0] * sd[1])
            p = bvn_cdf(h.offsets[0] / sd[0], h.offsets[1] / sd[1], rho)
            return EstimateWithError(float(p), 0.0, 0, None)
    if isinstance(h, Ball):
        cov = _pushed_cov(target, h.transform)
        if np.allclose(cov, np.eye(target.m), rtol=0, atol=1e-10):
            nc = float(np.sum(h.center ** 2))
            r2 = h.radius ** 2
            p = stats.chi2.cdf(r2, target.m) if nc == 0 else stats.ncx2.cdf(r2, target.m, nc)
            return EstimateWithError(float(p), 0.0, 0, None)
    if isinstance(h, AxisBox):
        cov = _pushed_cov(target, h.transform)
        off = cov - np.diag(np.diag(cov))
        if np.max(np.abs(off)) <= 1e-10 and np.all(np.diag(cov) > 0):
            sd = np.sqrt(np.diag(cov))
            lo = h.lower / sd
            hi = h.upper / sd
            p = float(np.prod(np.clip(special.ndtr(hi) - special.ndtr(lo), 0, 1)))
            return EstimateWithError(p, 0.0, 0, None)
    draws = gaussian_draws(target, n, seed)
    inside = h.contains(draws)
    p = float(np.mean(inside))
    return EstimateWithError(p, math.sqrt(max(p * (1 - p), 0.0) / n), n, seed)


def region_gap(samples: np.ndarray, h: TestFunction, target: GaussianTarget,
               n: int = DEFAULT_GAUSS_N, seed: int = DEFAULT_GAUSS_SEED
               ) -> tuple[float, float, EstimateWithError]:
    """Empirical frequency, Gaussian probability and their absolute gap.

    Returned as ``(gap, empirical, gaussian)``; this is the canonical value
    that witnesses replay to.
    """
    emp = float(np.mean(h.contains(samples)))
    g = gaussian_region_prob(target, h, n, seed)
    return abs(emp - g.value), emp, g


def is_everything(h: TestFunction) -> bool:
    """True when ``h`` is the constant indicator of all of R^m."""
    return isinstance(h, HalfspaceIntersection) and h.l == 0


def compose_linear(h: TestFunction, a: np.ndarray) -> TestFunction:
    """The region ``{x : a x in region}``, i.e. the indicator ``h(a x)``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if isinstance(h, HalfspaceIntersection):
        if h.l == 0:
            return h
        u = h.directions @ a
        norms = np.linalg.norm(u, axis=1)
        return HalfspaceIntersection(u / norms[:, None], h.offsets / norms)
    if isinstance(h, Ball):
        t = a if h.transform is None else h.transform @ a
        return Ball(h.center, h.radius, t)
    if isinstance(h, AxisBox):
        t = a if h.transform is None else h.transform @ a
        return AxisBox(h.lower, h.upper, t)
    if isinstance(h, Simplex):
        return Simplex(np.linalg.solve(a, h.vertices.T).T)
    raise TypeError(f"unsupported test function {type(h).__name__}")
