"""Seeded random streams and Poisson process / Gaussian samplers."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CarrierSpace, GaussianTarget, MarkSpace, PointConfiguration


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by ``(root_seed, key)``.

    Streams are built on numpy's counter-based Philox bit generator. Child
    streams are derived by extending the key, so distinct keys give
    statistically independent streams and the same key always replays the
    same numbers.
    """

    root_seed: int
    key: tuple[int, ...] = ()

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.root_seed, self.key + tuple(int(i) for i in ids))

    @property
    def stream_id(self) -> int:
        """64-bit digest of the key, for provenance columns."""
        raw = ",".join(str(k) for k in (self.root_seed,) + self.key).encode()
        return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "big")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.root_seed, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng)!r}")


def sample_locations(carrier: CarrierSpace, n: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. locations from the normalised intensity."""
    d = carrier.d
    width = carrier.high - carrier.low
    if carrier.density is None:
        return carrier.low + width * rng.random((n, d))
    if carrier.density_sup is None:
        raise ValueError("rejection sampling needs density_sup for a "
                         "non-constant density")
    sup = float(carrier.density_sup)
    out = np.empty((n, d))
    filled = 0
    while filled < n:
        batch = max(64, int(1.5 * (n - filled)))
        x = carrier.low + width * rng.random((batch, d))
        dens = carrier.density_at(x)
        if np.any(dens > sup * (1 + 1e-12)):
            raise ValueError("density exceeds the declared density_sup")
        keep = x[rng.random(batch) * sup < dens]
        take = min(keep.shape[0], n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


def sample_poisson_process(carrier: CarrierSpace, marks: Optional[MarkSpace],
                           rng) -> PointConfiguration:
    """Sample a (marked) Poisson process with intensity ``s * density``.

    A Poisson number of points is drawn first, then locations by rejection
    against ``density_sup``, then i.i.d. marks.
    """
    gen = _as_generator(rng)
    if carrier.density is not None and carrier.density_sup is None:
        raise ValueError("rejection sampling needs density_sup for a "
                         "non-constant density")
    n = int(gen.poisson(carrier.total_mass))
    pts = sample_locations(carrier, n, gen)
    mk = None if marks is None else marks.sample(gen, n)
    return PointConfiguration(pts, mk)


def sample_gaussian(target: GaussianTarget, n: int, rng) -> np.ndarray:
    """``n`` draws of N(0, sigma) as ``sigma^{1/2} z``; shape ``(n, m)``."""
    gen = _as_generator(rng)
    z = gen.standard_normal((n, target.m))
    return z @ target.sqrt


def add_point(config: PointConfiguration, x, carrier: CarrierSpace,
              mark=None) -> PointConfiguration:
    """Return ``config + delta_x``; the input is left untouched."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != carrier.d or not bool(carrier.contains(x)[0]):
        raise ValueError(f"point {x.tolist()} lies outside the carrier box")
    return config.with_point(x, mark)


def thin(config: PointConfiguration, retain: float, rng) -> PointConfiguration:
    """Independent p-thinning of a configuration."""
    if not 0.0 <= retain <= 1.0:
        raise ValueError("retention probability must lie in [0, 1]")
    gen = _as_generator(rng)
    return config.restrict(gen.random(len(config)) < retain)


def points_to_csv(config: PointConfiguration) -> str:
    """One point per row: ``x1,...,xd[,marks]``, full float precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = config.d
    header = [f"x{i + 1}" for i in range(d)]
    if config.marks is not None:
        header += [f"mark{j + 1}" for j in range(config.marks.shape[1])]
    w.writerow(header)
    for i in range(len(config)):
        row = [repr(float(v)) for v in config.points[i]]
        if config.marks is not None:
            row += [repr(float(v)) for v in config.marks[i]]
        w.writerow(row)
    return buf.getvalue()
