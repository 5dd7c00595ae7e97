import numpy as np
import pytest

from poisson_clt.core import CarrierSpace, MarkSpace, PointConfiguration
from poisson_clt.malliavin import CountingFunctional, Probe, diff1, diff2, diff_batch
from poisson_clt.sampler import RngStream, sample_poisson_process
from poisson_clt.zoo import (CompoundSumModel, CountModel, PairCountModel,
                             WienerItoModel)

UNIT2 = CarrierSpace.unit_cube(2, 30.0)


def _eta(seed, carrier=UNIT2, marks=None):
    return sample_poisson_process(carrier, marks, RngStream(seed))


def test_count_differences():
    f = CountModel(UNIT2)
    eta = _eta(1)
    assert diff1(f, eta, Probe([0.3, 0.3]))[0] == 1.0
    assert diff2(f, eta, Probe([0.3, 0.3]), Probe([0.6, 0.1]))[0] == 0.0


def test_wiener_ito_difference_is_kernel():
    c = CarrierSpace.unit_cube(1, 40.0)
    f = WienerItoModel([lambda x: np.sin(3 * x[:, 0])], c)
    for k in range(20):
        eta = _eta(k, c)
        x = np.random.default_rng(k).random(1)
        assert diff1(f, eta, Probe(x))[0] == pytest.approx(np.sin(3 * x[0]), abs=1e-12)


def test_pair_count_differences():
    f = PairCountModel(UNIT2, 0.2)
    eta = _eta(3)
    x = np.array([0.5, 0.5])
    k = int(np.sum(np.linalg.norm(eta.points - x, axis=1) <= 0.2))
    assert diff1(f, eta, Probe(x))[0] == k
    assert diff2(f, eta, Probe(x), Probe([0.6, 0.5]))[0] == 1.0
    assert diff2(f, eta, Probe(x), Probe([0.9, 0.9]))[0] == 0.0


def test_diff2_symmetry():
    f = PairCountModel(UNIT2, 0.25)
    eta = _eta(4)
    a, b = Probe([0.2, 0.4]), Probe([0.35, 0.5])
    assert np.array_equal(diff2(f, eta, a, b), diff2(f, eta, b, a))


def test_batch_matches_single_and_counts_evaluations():
    f = CountingFunctional(PairCountModel(UNIT2, 0.3))
    eta = _eta(5)
    probes = [Probe([0.1, 0.2]), Probe([0.4, 0.4]), Probe([0.4, 0.4])]
    out = diff_batch(f, eta, probes, [(0, 1), (1, 2)])
    assert out.n_evaluations == 1 + 3 + 2 == f.calls
    assert np.array_equal(out.d1[0], diff1(f.F, eta, probes[0]))
    assert np.array_equal(out.d2[(1, 2)], diff2(f.F, eta, probes[1], probes[2]))


def test_empty_batch():
    f = CountModel(UNIT2)
    out = diff_batch(f, _eta(6), [])
    assert out.d1 == {} and out.d2 == {} and out.n_evaluations == 1


def test_compound_sum_difference():
    f = CompoundSumModel.rademacher(16.0)
    eta = sample_poisson_process(f.carrier, f.marks, RngStream(7))
    assert diff1(f, eta, Probe([0.5], [-1.0]))[0] == -0.25


def test_linearity():
    f, g = CountModel(UNIT2), PairCountModel(UNIT2, 0.2)
    h = lambda cfg: 2.0 * f.evaluate(cfg) - 3.0 * g.evaluate(cfg)  # noqa: E731
    eta, p = _eta(8), Probe([0.45, 0.55])
    assert diff1(h, eta, p)[0] == 2.0 * diff1(f, eta, p)[0] - 3.0 * diff1(g, eta, p)[0]
