"""Add-one-cost difference operators by literal re-evaluation.

``D_x F(eta) = F(eta + delta_x) - F(eta)`` and the second order operator
``D2_{x,y} F = F(eta+x+y) - F(eta+x) - F(eta+y) + F(eta)``. No incremental
shortcuts are taken here, so any functional that can be evaluated can be
differenced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import FunctionalModel, PointConfiguration

Functional = Union[FunctionalModel, Callable[[PointConfiguration], np.ndarray]]


@dataclass(frozen=True)
class Probe:
    """A location plus optional mark to be added to a configuration."""

    x: np.ndarray
    mark: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        if self.mark is not None:
            object.__setattr__(self, "mark",
                               np.asarray(self.mark, dtype=float).reshape(-1))


def _evaluate(F: Functional, config: PointConfiguration) -> np.ndarray:
    fn = F.evaluate if isinstance(F, FunctionalModel) else F
    return np.atleast_1d(np.asarray(fn(config), dtype=float))


def _plus(config: PointConfiguration, *probes: Probe) -> PointConfiguration:
    for p in probes:
        config = config.with_point(p.x, p.mark)
    return config


def diff1(F: Functional, config: PointConfiguration, probe: Probe) -> np.ndarray:
    """First-order difference; two evaluations of ``F``."""
    return _evaluate(F, _plus(config, probe)) - _evaluate(F, config)


def diff2(F: Functional, config: PointConfiguration, p1: Probe,
          p2: Probe) -> np.ndarray:
    """Second-order difference via the four-term formula."""
    f12 = _evaluate(F, _plus(config, p1, p2))
    f1 = _evaluate(F, _plus(config, p1))
    f2 = _evaluate(F, _plus(config, p2))
    f0 = _evaluate(F, config)
    return (f12 - f1) - (f2 - f0)


@dataclass
class DifferenceSample:
    """Cached differences of one configuration.

    ``d1[i]`` is ``D_{probe_i} F`` and ``d2[(i, j)]`` (``i < j``) is
    ``D2_{probe_i, probe_j} F``.
    """

    base_value: np.ndarray
    d1: dict[int, np.ndarray] = field(default_factory=dict)
    d2: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    n_evaluations: int = 0


def diff_batch(F: Functional, config: PointConfiguration,
               probes: Sequence[Probe],
               pairs: Sequence[tuple[int, int]] = ()) -> DifferenceSample:
    """Differences at many probes sharing the base and single-probe values.

    Uses ``1 + len(probes) + len(pairs)`` evaluations at most.
    """
    base = _evaluate(F, config)
    n_eval = 1
    singles: dict[int, np.ndarray] = {}
    for i, p in enumerate(probes):
        singles[i] = _evaluate(F, _plus(config, p))
        n_eval += 1
    out = DifferenceSample(base)
    for i, v in singles.items():
        out.d1[i] = v - base
    for i, j in pairs:
        a, b = (i, j) if i < j else (j, i)
        if (a, b) in out.d2:
            continue
        f12 = _evaluate(F, _plus(config, probes[a], probes[b]))
        n_eval += 1
        out.d2[(a, b)] = (f12 - singles[a]) - (singles[b] - base)
    out.n_evaluations = n_eval
    return out


class CountingFunctional:
    """Wraps a functional and counts evaluations (useful in tests)."""

    def __init__(self, F: Functional):
        self.F = F
        self.calls = 0

    def __call__(self, config: PointConfiguration) -> np.ndarray:
        self.calls += 1
        return _evaluate(self.F, config)
