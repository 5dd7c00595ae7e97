"""Core data model: carrier spaces, point configurations, functionals and
Gaussian targets.

Everything here is immutable once constructed. Arrays handed out by the
dataclasses are flagged read-only so that a functional cannot mutate the
configuration it is evaluating.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import integrate

DensityFn = Callable[[np.ndarray], np.ndarray]
MarkSampler = Callable[[np.random.Generator, int], np.ndarray]

JACOBI_OFF_DIAGONAL_TOL = 1e-14
PD_EIGEN_TOL = 1e-10
NEGATIVE_EIGEN_TOL = 1e-12
SQRT_CHECK_TOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CarrierSpace:
    """A box in R^d carrying the intensity ``scale * density(x) dx``.

    Parameters
    ----------
    low, high:
        Opposite corners of the box.
    scale:
        Intensity scale ``s > 0``.
    density:
        Vectorised density on the box, ``(n, d) -> (n,)``. ``None`` means the
        constant density 1.
    density_sup:
        Upper bound for the density, required for rejection sampling when a
        non-constant density is given.
    density_integral:
        Integral of the density over the box. Computed by quadrature when
        omitted.
    """

    low: np.ndarray
    high: np.ndarray
    scale: float
    density: Optional[DensityFn] = None
    density_sup: Optional[float] = None
    density_integral: Optional[float] = None

    def __post_init__(self):
        low = _frozen(np.atleast_1d(self.low))
        high = _frozen(np.atleast_1d(self.high))
        if low.shape != high.shape or low.ndim != 1:
            raise ValueError("box corners must be 1-d arrays of equal length")
        if np.any(high <= low):
            raise ValueError("box must have positive side lengths")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def unit_cube(cls, d: int, scale: float, **kwargs) -> "CarrierSpace":
        return cls(np.zeros(d), np.ones(d), scale, **kwargs)

    @property
    def d(self) -> int:
        return self.low.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.high - self.low))

    @cached_property
    def base_mass(self) -> float:
        """Integral of the density over the box (scale not included)."""
        if self.density is None:
            return self.volume
        if self.density_integral is not None:
            return float(self.density_integral)

        def f(*x):
            return float(self.density(np.array(x, dtype=float)[None, :])[0])

        ranges = list(zip(self.low.tolist(), self.high.tolist()))
        val, _ = integrate.nquad(f, ranges)
        return float(val)

    @property
    def total_mass(self) -> float:
        """``lambda(X) = s * integral of the density``."""
        return self.scale * self.base_mass

    def density_at(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.density is None:
            return np.ones(x.shape[0])
        return np.asarray(self.density(x), dtype=float)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.low) & (x <= self.high), axis=1)

    def with_scale(self, scale: float) -> "CarrierSpace":
        return CarrierSpace(self.low, self.high, scale, self.density,
                            self.density_sup, self.density_integral)


@dataclass(frozen=True)
class MarkSpace:
    """Mark distribution attached to each point.

    ``sampler(rng, n)`` must return an ``(n, dim)`` float array.
    """

    dim: int
    sampler: MarkSampler
    name: str = "marks"

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.asarray(self.sampler(rng, n), dtype=float).reshape(n, self.dim)
        return out

    @classmethod
    def rademacher(cls) -> "MarkSpace":
        return cls(1, lambda rng, n: rng.choice([-1.0, 1.0], size=(n, 1)),
                   "rademacher")

    @classmethod
    def uniform(cls, a: float, b: float) -> "MarkSpace":
        if not b >= a:
            raise ValueError("uniform marks need a <= b")
        return cls(1, lambda rng, n: rng.uniform(a, b, size=(n, 1)),
                   f"uniform[{a},{b}]")

    @classmethod
    def standard_normal(cls) -> "MarkSpace":
        return cls(1, lambda rng, n: rng.standard_normal((n, 1)), "normal")


@dataclass(frozen=True)
class PointConfiguration:
    """A finite multiset of (location, mark) pairs.

    Storage order carries no meaning; every functional in this package is
    invariant under permutation of the rows.
    """

    points: np.ndarray
    marks: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 1)
        object.__setattr__(self, "points", _frozen(pts))
        if self.marks is not None:
            mk = np.asarray(self.marks, dtype=float)
            if pts.shape[0] == 0:
                mk = mk.reshape(0, mk.shape[-1] if mk.ndim == 2 else 1)
            else:
                mk = mk.reshape(pts.shape[0], -1)
            object.__setattr__(self, "marks", _frozen(mk))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def with_point(self, x, mark=None) -> "PointConfiguration":
        """Return a new configuration with one extra point (eta + delta_x)."""
        x = np.asarray(x, dtype=float).reshape(1, self.d)
        pts = np.vstack([self.points, x])
        if self.marks is None:
            if mark is not None:
                raise ValueError("configuration is unmarked but a mark was given")
            return PointConfiguration(pts)
        if mark is None:
            raise ValueError("configuration is marked; a mark is required")
        mk = np.vstack([self.marks, np.asarray(mark, dtype=float).reshape(1, -1)])
        return PointConfiguration(pts, mk)

    def permuted(self, perm: np.ndarray) -> "PointConfiguration":
        marks = None if self.marks is None else self.marks[perm]
        return PointConfiguration(self.points[perm], marks)

    def restrict(self, mask: np.ndarray) -> "PointConfiguration":
        marks = None if self.marks is None else self.marks[mask]
        return PointConfiguration(self.points[mask], marks)


class FunctionalModel(abc.ABC):
    """An R^m valued functional of a (marked) Poisson configuration.

    Subclasses implement :meth:`evaluate`. ``mean_vector`` is either known in
    closed form or filled in by a calibration pass; :meth:`centered` always
    subtracts it.
    """

    m: int
    carrier: CarrierSpace
    marks: Optional[MarkSpace] = None

    @abc.abstractmethod
    def evaluate(self, config: PointConfiguration) -> np.ndarray:
        """Return the m-vector F(config)."""

    @property
    def mean_vector(self) -> Optional[np.ndarray]:
        return getattr(self, "_mean", None)

    def set_mean(self, mean: np.ndarray, seed: Optional[int] = None) -> None:
        mean = np.asarray(mean, dtype=float).reshape(self.m)
        self._mean = _frozen(mean)
        self._mean_seed = seed

    def centered(self, config: PointConfiguration) -> np.ndarray:
        mu = self.mean_vector
        if mu is None:
            raise ValueError(f"{type(self).__name__} has no mean vector; "
                             "run a calibration pass first")
        return self.evaluate(config) - mu

    def descriptor(self) -> Mapping[str, object]:
        return {"model": type(self).__name__, "m": self.m,
                "scale": self.carrier.scale}


def symmetric_eigen(a: np.ndarray, tol: float = JACOBI_OFF_DIAGONAL_TOL,
                    max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as columns. Iteration stops once the off-diagonal Frobenius
    norm drops below ``tol`` times the matrix norm.
    """
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if asym > 1e-12 * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    norm = float(np.linalg.norm(a)) or 1.0
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a[off_mask]))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) <= 1e-300 + 1e-18 * abs(diff):
                    # rotation would be below rounding; tan(phi) ~ apq / diff
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                idx = [p, q]
                a[:, idx] = a[:, idx] @ rot
                a[idx, :] = rot.T @ a[idx, :]
                a[p, q] = a[q, p] = 0.0
                v[:, idx] = v[:, idx] @ rot
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


@dataclass(frozen=True)
class GaussianTarget:
    """Centred Gaussian N(0, sigma) together with its spectral data."""

    sigma: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sqrt: np.ndarray
    inv_sqrt: Optional[np.ndarray]
    positive_definite: bool

    @property
    def m(self) -> int:
        return self.sigma.shape[0]

    @property
    def op_norm(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)))

    @property
    def inv_op_norm(self) -> float:
        """Operator norm of the inverse; ``inf`` for a singular target."""
        if not self.positive_definite:
            return math.inf
        return float(1.0 / np.min(self.eigenvalues))

    @property
    def inverse(self) -> np.ndarray:
        if not self.positive_definite:
            raise ValueError("covariance is singular; no inverse")
        v, w = self.eigenvectors, self.eigenvalues
        return (v / w) @ v.T


def gaussian_target_from(sigma) -> GaussianTarget:
    """Validate a covariance matrix and precompute its square roots."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    w, v = symmetric_eigen(sigma)
    if w.size and w[0] < -NEGATIVE_EIGEN_TOL:
        raise ValueError(f"covariance is not positive semidefinite: "
                         f"eigenvalue {w[0]:.6g} < 0")
    pd = bool(w.size and w[0] > PD_EIGEN_TOL)
    root = np.sqrt(np.clip(w, 0.0, None))
    sqrt = (v * root) @ v.T
    err = float(np.max(np.abs(sqrt @ sqrt - sigma)))
    if err > SQRT_CHECK_TOL * max(1.0, float(np.max(np.abs(sigma)))):
        raise ValueError(f"square root check failed (error {err:.3e})")
    inv_sqrt = (v / root) @ v.T if pd else None
    sym = 0.5 * (sigma + sigma.T)
    return GaussianTarget(_frozen(sym), _frozen(w), _frozen(v), _frozen(sqrt),
                          None if inv_sqrt is None else _frozen(inv_sqrt), pd)


@dataclass(frozen=True)
class EstimateWithError:
    """A Monte Carlo estimate with its standard error ``sd / sqrt(n)``."""

    value: float
    std_error: float
    n_replicates: int
    seed: Optional[int] = None
    extras: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, x, seed: Optional[int] = None) -> "EstimateWithError":
        x = np.asarray(x, dtype=float).ravel()
        n = x.size
        if n == 0:
            raise ValueError("no samples")
        se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        return cls(float(np.mean(x)), se, n, seed)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.std_error
