"""Planar Boolean model of disks on a pixel grid.

The union of disks is rendered as a signed field ``max_i (r_i - |p - c_i|)``
sampled at pixel centres. Foreground pixels are those with a non-negative
field value. Area and Euler characteristic are read off the binary image;
the perimeter comes from marching squares on the field, which places the
contour at interpolated crossings instead of edge midpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .core import CarrierSpace, EstimateWithError, FunctionalModel, MarkSpace, PointConfiguration
from .malliavin import Probe
from .sampler import RngStream, sample_poisson_process

KAPPA = (1.0, 2.0, math.pi)  # volumes of unit balls in R^0, R^1, R^2


@numba.njit(cache=True)
def _render_field(cx, cy, rad, n, h):
    # values are clipped to [-h, h]: only pixels next to a sign change enter
    # the contour interpolation, and their field values lie in that range
    field = np.full((n, n), -h, dtype=np.float64)
    for k in range(cx.shape[0]):
        x0, y0, r = cx[k], cy[k], rad[k]
        reach = r + h
        inner = r - h
        i_lo = max(0, int(math.floor((x0 - reach) / h - 0.5)))
        i_hi = min(n - 1, int(math.ceil((x0 + reach) / h - 0.5)))
        for i in range(i_lo, i_hi + 1):
            dx = (i + 0.5) * h - x0
            rem = reach * reach - dx * dx
            if rem <= 0.0:
                continue
            half = math.sqrt(rem)
            j_lo = max(0, int(math.floor((y0 - half) / h - 0.5)))
            j_hi = min(n - 1, int(math.ceil((y0 + half) / h - 0.5)))
            rem_in = inner * inner - dx * dx if inner > 0.0 else -1.0
            if rem_in > 0.0:
                half_in = math.sqrt(rem_in)
                c_lo = max(j_lo, int(math.ceil((y0 - half_in) / h - 0.5)))
                c_hi = min(j_hi, int(math.floor((y0 + half_in) / h - 0.5)))
            else:
                c_lo = j_hi + 1
                c_hi = j_hi
            for j in range(j_lo, j_hi + 1):
                if j == c_lo and c_lo <= c_hi:
                    for jj in range(c_lo, c_hi + 1):
                        field[i, jj] = h
                    continue
                if c_lo < j <= c_hi:
                    continue
                if field[i, j] >= h:
                    continue
                dy = (j + 0.5) * h - y0
                v = r - math.sqrt(dx * dx + dy * dy)
                if v > field[i, j]:
                    field[i, j] = min(v, h)
    return field


@numba.njit(cache=True)
def _cross(a, b):
    # crossing parameter from the corner valued a towards the corner valued b
    return a / (a - b)


@numba.njit(cache=True)
def _cell_length(v00, v10, v11, v01):
    """Contour length inside one unit cell, corners counter-clockwise.

    Corners: v00 at (0,0), v10 at (1,0), v11 at (1,1), v01 at (0,1).
    Inside means value >= 0.
    """
    b0 = v00 >= 0.0
    b1 = v10 >= 0.0
    b2 = v11 >= 0.0
    b3 = v01 >= 0.0
    # crossings on bottom, right, top, left edges
    xb = _cross(v00, v10) if b0 != b1 else -1.0
    yr = _cross(v10, v11) if b1 != b2 else -1.0
    xt = _cross(v01, v11) if b3 != b2 else -1.0
    yl = _cross(v00, v01) if b0 != b3 else -1.0
    pts_x = (xb, 1.0, xt, 0.0)
    pts_y = (0.0, yr, 1.0, yl)
    has = (xb >= 0.0, yr >= 0.0, xt >= 0.0, yl >= 0.0)
    cnt = int(has[0]) + int(has[1]) + int(has[2]) + int(has[3])
    if cnt == 0:
        return 0.0
    if cnt == 2:
        e0 = -1
        e1 = -1
        for e in range(4):
            if has[e]:
                if e0 < 0:
                    e0 = e
                else:
                    e1 = e
        return math.hypot(pts_x[e0] - pts_x[e1], pts_y[e0] - pts_y[e1])
    # saddle: pair edges according to the centre value
    centre = 0.25 * (v00 + v10 + v11 + v01)
    if (centre >= 0.0) == b0:
        # corners 0 and 2 share a region; corners 1 and 3 are cut off
        return (math.hypot(xb - 1.0, yr) + math.hypot(xt, 1.0 - yl))
    return (math.hypot(xb, yl) + math.hypot(1.0 - xt, 1.0 - yr))


@numba.njit(cache=True)
def _padded(field, i, j, eps):
    # the ring outside the window mirrors the inside value with negative
    # sign so that crossings land exactly on the window edge
    n0, n1 = field.shape
    ii = min(max(i, 0), n0 - 1)
    jj = min(max(j, 0), n1 - 1)
    out_i = i < 0 or i >= n0
    out_j = j < 0 or j >= n1
    if out_i and out_j:
        return -eps
    if out_i or out_j:
        return -max(field[ii, jj], eps)
    return field[i, j]


@numba.njit(cache=True)
def _volumes_from_field(field, h):
    n0, n1 = field.shape
    eps = 1e-9 * h
    faces = 0
    adjacent = 0
    for i in range(n0):
        for j in range(n1):
            if field[i, j] >= 0.0:
                faces += 1
                if i + 1 < n0 and field[i + 1, j] >= 0.0:
                    adjacent += 1
                if j + 1 < n1 and field[i, j + 1] >= 0.0:
                    adjacent += 1
    verts = 0
    perim = 0.0
    for i in range(n0 + 1):
        for j in range(n1 + 1):
            if 0 < i < n0 and 0 < j < n1:
                a = field[i - 1, j - 1]
                b = field[i, j - 1]
                c = field[i, j]
                d = field[i - 1, j]
            else:
                a = _padded(field, i - 1, j - 1, eps)
                b = _padded(field, i, j - 1, eps)
                c = _padded(field, i, j, eps)
                d = _padded(field, i - 1, j, eps)
            na = int(a >= 0.0) + int(b >= 0.0) + int(c >= 0.0) + int(d >= 0.0)
            if na > 0:
                verts += 1
                if na < 4:
                    perim += _cell_length(a, b, c, d)
    # closed pixels: each has 4 edges, shared edges are counted once
    edges = 4 * faces - adjacent
    chi = verts - edges + faces
    return chi, 0.5 * perim * h, faces * h * h


def render_field(centers: np.ndarray, radii: np.ndarray, L: float,
                 h: float) -> np.ndarray:
    """Signed field of a disk union on the pixel grid of ``[0, L]^2``."""
    n = int(round(L / h))
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    return _render_field(np.ascontiguousarray(centers[:, 0]),
                         np.ascontiguousarray(centers[:, 1]), radii, n, float(h))


def intrinsic_volumes_2d(grid: np.ndarray, h: float) -> np.ndarray:
    """Intrinsic volumes ``(V0, V1, V2)`` of a rendered set.

    ``grid`` is either a boolean image (contour at edge midpoints) or a
    signed field whose non-negative part is the set (interpolated contour).
    """
    g = np.asarray(grid)
    if g.dtype == bool:
        field = np.where(g, 0.5 * h, -0.5 * h).astype(float)
    else:
        field = g.astype(float)
    chi, v1, v2 = _volumes_from_field(np.ascontiguousarray(field), float(h))
    return np.array([float(chi), v1, v2])


def wills_functional_2d(r: float) -> float:
    """Wills functional of a disk of radius ``r``: ``pi + 2 pi r + pi r^2``."""
    if r < 0:
        raise ValueError(f"radius must be non-negative, got {r}")
    vols = (1.0, math.pi * r, math.pi * r * r)
    return KAPPA[2] * vols[0] + KAPPA[1] * vols[1] + KAPPA[0] * vols[2]


def wills_from_volumes(v: np.ndarray) -> float:
    return KAPPA[2] * v[0] + KAPPA[1] * v[1] + KAPPA[0] * v[2]


class BooleanModel2D(FunctionalModel):
    """Intrinsic volumes of a Boolean model of disks seen through ``[0, L]^2``.

    Germs form a Poisson process of intensity ``gamma`` on the window
    dilated by ``r_max``; each germ carries a radius uniform on
    ``[r_min, r_max]`` as its mark. :meth:`evaluate` returns
    ``(V0, V1, V2)(Z cap W) / sqrt(L^2)``.
    """

    m = 3

    def __init__(self, L: float, gamma: float, r_min: float = 0.05,
                 r_max: float = 0.1, h: Optional[float] = None):
        if not (0 < r_min <= r_max):
            raise ValueError("need 0 < r_min <= r_max")
        self.L = float(L)
        self.gamma = float(gamma)
        self.r_min, self.r_max = float(r_min), float(r_max)
        h = min(0.005 * self.L, self.r_min / 10.0) if h is None else float(h)
        n = int(round(self.L / h))
        self.h = self.L / n
        self.carrier = CarrierSpace(np.full(2, -self.r_max),
                                    np.full(2, self.L + self.r_max), self.gamma)
        self.marks = MarkSpace.uniform(self.r_min, self.r_max)

    @property
    def window_area(self) -> float:
        return self.L * self.L

    def field(self, config: PointConfiguration) -> np.ndarray:
        radii = config.marks[:, 0] if len(config) else np.zeros(0)
        return render_field(config.points, radii, self.L, self.h)

    def raw_volumes(self, config: PointConfiguration) -> np.ndarray:
        return intrinsic_volumes_2d(self.field(config), self.h)

    def evaluate(self, config: PointConfiguration) -> np.ndarray:
        return self.raw_volumes(config) / math.sqrt(self.window_area)

    def descriptor(self):
        return {"model": "BooleanModel2D", "m": 3, "L": self.L,
                "gamma": self.gamma, "r_min": self.r_min, "r_max": self.r_max,
                "h": self.h}

    def mean_area_fraction(self) -> float:
        # E area of a grain for radius ~ U[r_min, r_max]
        a, b = self.r_min, self.r_max
        mean_r2 = (b ** 3 - a ** 3) / (3 * (b - a)) if b > a else a * a
        return 1.0 - math.exp(-self.gamma * math.pi * mean_r2)


def boolean_diff1(model: BooleanModel2D, config: PointConfiguration,
                  x, radius: float) -> np.ndarray:
    """``D`` of the raw intrinsic volumes for adding the disk ``x + B(radius)``."""
    plus = config.with_point(np.asarray(x, dtype=float), [radius])
    return model.raw_volumes(plus) - model.raw_volumes(config)


def write_pgm(path, grid: np.ndarray) -> None:
    """Dump a rendered realisation as a binary PGM (foreground white)."""
    img = (np.asarray(grid) >= 0).astype(np.uint8) * 255
    img = np.flipud(img.T)  # rows top-to-bottom, x to the right
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def single_grain_volumes(model: BooleanModel2D, x, radius: float) -> np.ndarray:
    """Rendered volumes of ``(x + B(radius)) cap W``."""
    f = render_field(np.asarray(x, dtype=float).reshape(1, 2),
                     np.array([radius]), model.L, model.h)
    return intrinsic_volumes_2d(f, model.h)


@dataclass(frozen=True)
class MomentReport:
    orders: tuple[int, ...]
    c_hat: dict[int, float]
    ratio_max: float
    stable: bool
    n_probes: int
    n_inner: int


def check_grain_moment_ratio(model: BooleanModel2D, orders=(2, 4, 6),
                             n_probes: int = 40, n_inner: int = 40,
                             seed: int = 0) -> MomentReport:
    """Fit ``C_hat = max_probes (E|D V_i|^k)^{1/k} / Wills((x+K) cap W)``.

    Stability means the fitted constants for different orders agree within
    a factor of two.
    """
    if max(orders) > 6:
        raise ValueError("moment orders above 6 are not supported")
    root = RngStream(seed, (44,))
    gen = root.child(0).generator()
    lo, hi = model.carrier.low, model.carrier.high
    c_hat = {k: 0.0 for k in orders}
    for p in range(n_probes):
        x = lo + (hi - lo) * gen.random(2)
        r = float(model.marks.sample(gen, 1)[0, 0])
        vols = single_grain_volumes(model, x, r)
        if vols[2] == 0.0:
            continue
        wills = wills_from_volumes(vols)
        if wills <= 0.0:
            continue
        ds = np.empty((n_inner, 3))
        for q in range(n_inner):
            eta = sample_poisson_process(model.carrier, model.marks, root.child(1, p, q))
            ds[q] = boolean_diff1(model, eta, x, r)
        for k in orders:
            mom = np.mean(np.abs(ds) ** k, axis=0) ** (1.0 / k)
            c_hat[k] = max(c_hat[k], float(np.max(mom)) / wills)
    vals = [c_hat[k] for k in orders]
    stable = max(vals) <= 2.0 * min(vals) if min(vals) > 0 else False
    return MomentReport(tuple(orders), c_hat, max(vals), stable, n_probes, n_inner)


def translative_integral(model: BooleanModel2D, radius: float, side: float,
                         n: int = 2000, seed: int = 0) -> tuple[EstimateWithError, float, float]:
    """MC estimate of ``int Wills((x+K) cap Q) dx`` for a disk K and square Q.

    Returns the estimate, its closed form and the product
    ``Wills(K) * Wills(Q)`` that bounds it.
    """
    gen = RngStream(seed, (45,)).generator()
    sub = BooleanModel2D(side, model.gamma, model.r_min, model.r_max, h=model.h)
    lo, hi = -radius, side + radius
    area = (hi - lo) ** 2
    vals = np.empty(n)
    for k in range(n):
        x = lo + (hi - lo) * gen.random(2)
        vals[k] = area * wills_from_volumes(single_grain_volumes(sub, x, radius))
    est = EstimateWithError.from_samples(vals, seed)
    pi = math.pi
    v_k = (1.0, pi * radius, pi * radius ** 2)
    v_q = (1.0, 2.0 * side, side * side)
    # translative integrals of V0, V1, V2 of the intersection
    i0 = side * side + 4 * side * radius + pi * radius ** 2
    i1 = v_k[1] * v_q[2] + v_k[2] * v_q[1]
    i2 = v_k[2] * v_q[2]
    exact = KAPPA[2] * i0 + KAPPA[1] * i1 + KAPPA[0] * i2
    bound = wills_functional_2d(radius) * wills_from_volumes(np.array(v_q))
    return est, exact, bound
