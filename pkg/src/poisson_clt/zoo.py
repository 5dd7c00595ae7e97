"""Ready-made Poisson functionals with known reference quantities."""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

from .core import CarrierSpace, FunctionalModel, MarkSpace, PointConfiguration
from .sampler import RngStream, sample_poisson_process

Kernel = Callable[[np.ndarray], np.ndarray]


class CountModel(FunctionalModel):
    """Number of points, optionally normalised as ``(N - s) / sqrt(s)``."""

    m = 1

    def __init__(self, carrier: CarrierSpace, normalised: bool = False):
        self.carrier = carrier
        self.normalised = normalised
        mass = carrier.total_mass
        self.set_mean([mass / math.sqrt(mass) if normalised else mass])

    def evaluate(self, config: PointConfiguration) -> np.ndarray:
        n = float(len(config))
        if self.normalised:
            return np.array([n / math.sqrt(self.carrier.total_mass)])
        return np.array([n])


class PairCountModel(FunctionalModel):
    """Number of unordered pairs at distance at most ``r``."""

    m = 1

    def __init__(self, carrier: CarrierSpace, r: float):
        self.carrier = carrier
        self.r = float(r)

    def evaluate(self, config: PointConfiguration) -> np.ndarray:
        if len(config) < 2:
            return np.array([0.0])
        tree = cKDTree(config.points)
        return np.array([float(len(tree.query_pairs(self.r)))])


class CompoundSumModel(FunctionalModel):
    """``Z_s = s^{-1/2} * sum of the marks`` of a Poisson(s) number of points.

    The Poisson process lives on ``[0, 1]`` with intensity ``s``; each point
    carries an increment ``X_n`` in R^m as its mark.
    """

    def __init__(self, s: float, marks: MarkSpace,
                 sigma: Optional[np.ndarray] = None,
                 mark_mean: Optional[np.ndarray] = None):
        self.carrier = CarrierSpace.unit_cube(1, s)
        self.marks = marks
        self.m = marks.dim
        self.sigma = None if sigma is None else np.atleast_2d(np.asarray(sigma, float))
        mu = np.zeros(self.m) if mark_mean is None else np.asarray(mark_mean, float)
        self.set_mean(math.sqrt(s) * mu)

    @classmethod
    def rademacher(cls, s: float) -> "CompoundSumModel":
        return cls(s, MarkSpace.rademacher(), sigma=np.eye(1))

    @property
    def s(self) -> float:
        return self.carrier.scale

    def evaluate(self, config: PointConfiguration) -> np.ndarray:
        root = math.sqrt(self.s)
        if len(config) == 0:
            return np.zeros(self.m)
        return np.array([math.fsum(config.marks[:, i]) / root
                         for i in range(self.m)])

    def descriptor(self):
        return {"model": "CompoundSumModel", "m": self.m, "s": self.s,
                "marks": self.marks.name}


class WienerItoModel(FunctionalModel):
    """First-order integrals ``sum_{x in eta} f_i(x) - s * int f_i * density``.

    Kernels are vectorised callables ``(n, d) -> (n,)``.
    """

    def __init__(self, kernels: Sequence[Kernel], carrier: CarrierSpace,
                 kernel_means: Optional[Sequence[float]] = None):
        self.kernels = list(kernels)
        self.carrier = carrier
        self.m = len(self.kernels)
        if kernel_means is None:
            kernel_means = [self._integral(lambda x, f=f: f(x)) for f in self.kernels]
        self.compensator = np.array([carrier.scale * v for v in kernel_means])
        self.set_mean(np.zeros(self.m))

    @classmethod
    def constant(cls, value: float, carrier: CarrierSpace) -> "WienerItoModel":
        fn = lambda x: np.full(np.atleast_2d(x).shape[0], value)  # noqa: E731
        return cls([fn], carrier, kernel_means=[value * carrier.base_mass])

    def _integral(self, g: Kernel) -> float:
        c = self.carrier

        def integrand(*x):
            pt = np.array(x, dtype=float)[None, :]
            return float(g(pt)[0] * c.density_at(pt)[0])

        ranges = list(zip(c.low.tolist(), c.high.tolist()))
        val, _ = integrate.nquad(integrand, ranges)
        return float(val)

    def kernel_values(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.stack([np.asarray(f(x), dtype=float) for f in self.kernels], axis=1)

    def evaluate(self, config: PointConfiguration) -> np.ndarray:
        out = np.empty(self.m)
        vals = self.kernel_values(config.points) if len(config) else np.zeros((0, self.m))
        for i in range(self.m):
            out[i] = math.fsum(list(vals[:, i]) + [-self.compensator[i]])
        return out

    def covariance(self) -> np.ndarray:
        """``s * int f_i f_j * density`` by quadrature."""
        cov = np.empty((self.m, self.m))
        for i in range(self.m):
            for j in range(i, self.m):
                fi, fj = self.kernels[i], self.kernels[j]
                v = self.carrier.scale * self._integral(lambda x: fi(x) * fj(x))
                cov[i, j] = cov[j, i] = v
        return cov

    def kernel_power_integrals(self, p: int) -> np.ndarray:
        """``s * int |f_i|^p * density`` for each component."""
        return np.array([self.carrier.scale * self._integral(
            lambda x, f=f: np.abs(f(x)) ** p) for f in self.kernels])


class IsolatedCountModel(FunctionalModel):
    """Isolated points and edges of the disk graph with radius ``sqrt(theta/s)``.

    Points live in the unit square with intensity ``s``. Each component is
    divided by ``sqrt(s)``.
    """

    COMPONENTS = ("isolated", "edges")

    def __init__(self, s: float, theta: float = 1.0,
                 components: Sequence[str] = COMPONENTS):
        bad = [c for c in components if c not in self.COMPONENTS]
        if bad:
            raise ValueError(f"unknown components {bad}")
        self.carrier = CarrierSpace.unit_cube(2, s)
        self.theta = float(theta)
        self.components = tuple(components)
        self.m = len(self.components)
        self.radius = math.sqrt(self.theta / s)

    def counts(self, config: PointConfiguration) -> dict[str, int]:
        n = len(config)
        if n == 0:
            return {"isolated": 0, "edges": 0}
        tree = cKDTree(config.points)
        pairs = tree.query_pairs(self.radius, output_type="ndarray")
        degree = np.bincount(pairs.ravel(), minlength=n) if len(pairs) else np.zeros(n, int)
        return {"isolated": int(np.sum(degree == 0)), "edges": int(len(pairs))}

    def evaluate(self, config: PointConfiguration) -> np.ndarray:
        c = self.counts(config)
        root = math.sqrt(self.carrier.scale)
        return np.array([c[k] / root for k in self.components])

    def descriptor(self):
        return {"model": "IsolatedCountModel", "m": self.m,
                "s": self.carrier.scale, "theta": self.theta,
                "components": ",".join(self.components)}


def calibrate_mean(model: FunctionalModel, n: int, seed: int) -> np.ndarray:
    """Estimate and install the mean vector from ``n`` independent draws."""
    root = RngStream(seed, (101,))
    vals = np.empty((n, model.m))
    for k in range(n):
        eta = sample_poisson_process(model.carrier, model.marks, root.child(k))
        vals[k] = model.evaluate(eta)
    mean = vals.mean(axis=0)
    model.set_mean(mean, seed)
    return mean
