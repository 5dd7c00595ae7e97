import numpy as np
import pytest
from scipy import stats

from poisson_clt.core import gaussian_target_from
from poisson_clt.distances import (estimate_dconvex, estimate_dHl, estimate_dK, load_witness,
                                   null_calibration, replay_witness)
from poisson_clt.sampler import RngStream, sample_gaussian
from poisson_clt.testfns import HalfspaceIntersection

I1 = gaussian_target_from(np.eye(1))
I2 = gaussian_target_from(np.eye(2))
C2 = gaussian_target_from(np.array([[2.0, 1.0], [1.0, 2.0]]))


def _draws(target, n, seed):
    return sample_gaussian(target, n, RngStream(seed))


def test_dk_matches_kstest():
    x = np.random.default_rng(0).standard_normal(3000) * 1.1
    assert estimate_dK(x).value == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-15)


def test_dk_with_ties():
    x = np.round(np.random.default_rng(1).standard_normal(2000), 1)
    assert estimate_dK(x).value == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-15)


def test_dk_point_mass():
    assert estimate_dK(np.zeros(100)).value == 0.5


def test_dk_shift_oracle():
    # sup_u |Phi(u - 1) - Phi(u)| is attained at u = 1/2
    oracle = stats.norm.cdf(0.5) - stats.norm.cdf(-0.5)
    assert oracle == pytest.approx(0.38292, abs=1e-5)
    x = np.random.default_rng(2).standard_normal(100_000) + 1.0
    assert abs(estimate_dK(x).value - oracle) < 0.01


def test_dk_null():
    assert estimate_dK(np.random.default_rng(3).standard_normal(100_000)).value <= 0.01


def test_dk_scale():
    x = np.random.default_rng(4).standard_normal(5000) * 3.0
    assert estimate_dK(x, sigma=3.0).value == pytest.approx(
        stats.kstest(x / 3.0, "norm").statistic, abs=1e-12)


def test_dk_rejects_vectors():
    with pytest.raises(ValueError):
        estimate_dK(np.zeros((10, 2)))


def test_one_halfspace_in_one_dimension_is_dk():
    x = np.random.default_rng(5).standard_normal(4000) * 0.9 + 0.05
    assert estimate_dHl(x, I1, l=1, budget=50).value == pytest.approx(
        estimate_dK(x).value, abs=1e-12)


def test_dhl_monotone_in_l():
    x = _draws(C2, 3000, 6) * 1.1
    vals = [estimate_dHl(x, C2, l=l, budget=100, seed=1).value for l in (1, 2, 3)]
    assert vals[0] <= vals[1] <= vals[2]


def test_dconvex_dominates_dhl():
    x = _draws(C2, 3000, 7) + np.array([0.2, 0.0])
    dhl = estimate_dHl(x, C2, l=2, budget=100, seed=2)
    dc = estimate_dconvex(x, C2, budget=100, seed=2, dhl=dhl)
    assert dc.value >= dhl.value
    assert dc.extras["dhl_value"] == dhl.value


def test_dconvex_point_mass():
    est = estimate_dconvex(np.zeros((200, 2)), I2, budget=100)
    assert est.value == pytest.approx(1.0, abs=1e-6)


def test_dhl_null_is_small():
    x = _draws(I2, 20_000, 8)
    assert estimate_dHl(x, I2, l=2, budget=200).value <= 0.02


def test_replay_is_exact(tmp_path):
    x = _draws(C2, 2000, 9) * 1.2
    for est in (estimate_dHl(x, C2, l=2, budget=60),
                estimate_dconvex(x, C2, budget=60)):
        path = tmp_path / f"{est.kind}.txt"
        path.write_text(est.witness_text(C2))
        assert replay_witness(load_witness(path.read_text()), x) == est.value


def test_replay_on_fresh_samples():
    # a witness of a real shift, not of noise, carries over to new draws
    shift = np.array([0.4, 0.0])
    est = estimate_dHl(_draws(C2, 4000, 10) + shift, C2, l=2, budget=60)
    fresh = _draws(C2, 4000, 11) + shift
    se = np.sqrt(est.gaussian * (1 - est.gaussian) / fresh.shape[0])
    assert abs(replay_witness(load_witness(est.witness_text(C2)), fresh) - est.value) <= 3 * se


def test_witness_is_a_halfspace_intersection():
    est = estimate_dHl(_draws(I2, 1000, 12), I2, l=2, budget=40)
    assert isinstance(est.witness, HalfspaceIntersection) and est.witness.l <= 2
    assert est.value == pytest.approx(abs(est.empirical - est.gaussian))


def test_affine_invariance_of_halfspace_class():
    # the class is closed under invertible maps, so whitening the samples
    # and the target leaves the supremum unchanged up to search tolerance
    x = _draws(C2, 4000, 13) * 1.15
    w = x @ np.array(C2.inv_sqrt).T
    a = estimate_dHl(x, C2, l=2, budget=200).value
    b = estimate_dHl(w, I2, l=2, budget=200).value
    assert abs(a - b) <= 2 * null_calibration(I2, 4000, estimate_dHl, l=2, budget=200) + 0.01


def test_same_seed_same_estimate():
    x = _draws(I2, 1500, 14)
    a = estimate_dHl(x, I2, l=3, budget=60, seed=5)
    b = estimate_dHl(x, I2, l=3, budget=60, seed=5)
    assert a.value == b.value and a.witness.to_text() == b.witness.to_text()
