import math

import numpy as np
import pytest

from poisson_clt.core import CarrierSpace
from poisson_clt.gammas import (NestedMcPlan, check_rescaling_assumptions,
                                covariance_from_samples, estimate_all, estimate_big_gammas,
                                estimate_covariance, estimate_gamma1_gamma2, estimate_gamma3,
                                estimate_gamma4, estimate_gamma5, poincare_check)
from poisson_clt.zoo import CompoundSumModel, CountModel, PairCountModel, WienerItoModel

PLAN = NestedMcPlan(40, 8, seed=1)


def _flat(s, value=None):
    c = CarrierSpace.unit_cube(1, s)
    return WienerItoModel.constant(1 / math.sqrt(s) if value is None else value, c)


def test_first_order_closed_forms():
    f = _flat(100.0)
    assert estimate_gamma3(f, PLAN).value == pytest.approx(0.1, rel=1e-12)
    assert estimate_gamma4(f, PLAN).value == pytest.approx(0.1, rel=1e-12)
    assert estimate_gamma5(f, PLAN).value == pytest.approx(0.01, rel=1e-12)
    g1, g2 = estimate_gamma1_gamma2(f, PLAN)
    assert g1.value == 0.0 and g2.value == 0.0


def test_deterministic_functional_is_zero():
    f = _flat(50.0, value=0.0)
    for est in (estimate_gamma3(f, PLAN), estimate_gamma4(f, PLAN), estimate_gamma5(f, PLAN)):
        assert est.value == 0.0


def test_compound_sum_third_term():
    assert estimate_gamma3(CompoundSumModel.rademacher(25.0), PLAN).value == pytest.approx(0.2)


def test_pair_count_without_interactions():
    f = PairCountModel(CarrierSpace.unit_cube(2, 10.0), 1e-9)
    g1, g2 = estimate_gamma1_gamma2(f, PLAN)
    assert g1.value == 0.0 and g2.value == 0.0


def test_pair_count_gammas_positive():
    f = PairCountModel(CarrierSpace.unit_cube(2, 30.0), 0.2)
    f.set_mean(np.zeros(1))
    g1, g2 = estimate_gamma1_gamma2(f, NestedMcPlan(30, 6, seed=2))
    assert g1.value > 0 and g2.value > 0


@pytest.mark.parametrize("s", [25.0, 400.0])
def test_third_term_scales_like_root(s):
    assert estimate_gamma3(_flat(s), PLAN).value == pytest.approx(1 / math.sqrt(s))


def test_big_gammas_requires_p_above_two():
    with pytest.raises(ValueError, match="p > 2"):
        estimate_big_gammas(_flat(10.0), 1.0, 2.0, PLAN)


def test_big_gamma2_is_total_mass():
    f = CountModel(CarrierSpace.unit_cube(1, 7.0))
    assert estimate_big_gammas(f, 1.0, 3.0, PLAN).gamma2.value == pytest.approx(7.0)


def test_big_gammas_vanish_without_differences():
    bg = estimate_big_gammas(_flat(10.0, value=0.0), 1.0, 3.0, PLAN)
    assert bg.gamma1.value == bg.gamma2.value == bg.gamma3.value == bg.gamma4.value == 0.0


def test_count_variance():
    f = CountModel(CarrierSpace.unit_cube(1, 40.0))
    f.set_mean(np.array([40.0]))
    est = estimate_covariance(f, 3000, seed=3)
    assert abs(est.cov[0, 0] - 40.0) <= 3 * est.std_error[0, 0]


def test_covariance_discrepancy():
    x = np.random.default_rng(0).standard_normal((5000, 2))
    est = covariance_from_samples(x)
    d = est.discrepancy(np.eye(2))
    assert d.value <= 3 * d.std_error + 0.05


def test_gamma_report_csv():
    rep = estimate_all(_flat(25.0), NestedMcPlan(10, 4, seed=5), n_cov=200,
                       sigma=np.eye(1))
    text = rep.to_csv("s25")
    assert "gamma3" in text
    assert rep.cov_discrepancy is not None


def test_poincare_holds_for_count():
    assert poincare_check(CountModel(CarrierSpace.unit_cube(1, 10.0)), 500).all_passed


def test_rescaling_assumptions_for_first_order():
    models = {s: _flat(s, 1 / math.sqrt(s)) for s in (25.0, 100.0)}
    for rep in check_rescaling_assumptions(models, 1.0, 0.0, n_probes=20, n_y=10, n_inner=5):
        assert rep.bounded_diff_ok and rep.second_diff_ok and rep.second_diff_integral == 0.0
