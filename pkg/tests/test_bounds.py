import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisson_clt.bounds import (Ingredients, bound_d2, bound_d2_compound, bound_d3,
                                bound_d3_compound, bound_dconvex, bound_dHl, bound_marked,
                                rate_slope)
from poisson_clt.core import gaussian_target_from
from poisson_clt.gammas import BigGammas

ONE = gaussian_target_from(np.eye(1))
TWO = gaussian_target_from(np.eye(2))


def test_zero_ingredients_give_zero():
    z = Ingredients()
    assert bound_d3(z, 2).total == 0.0
    assert bound_d2(z, TWO, 2).total == 0.0
    assert bound_dHl(z, TWO, 2, 2).total == 0.0
    assert bound_dconvex(z, TWO, 2, rho=0.0, lambda_A=1.0, tail_integral=0.0).total == 0.0


def test_d3_worked_value():
    assert bound_d3(Ingredients(gamma3=0.1), 1).total == pytest.approx(0.025)


def test_d2_worked_value():
    assert bound_d2(Ingredients(gamma3=0.1), ONE, 1).total == pytest.approx(
        math.sqrt(2 * math.pi) / 80, rel=1e-12)


def test_compound_values():
    assert bound_d3_compound([1.0], 100.0, 1).total == pytest.approx(0.025)
    assert bound_d2_compound([1.0], 100.0, ONE, 1).total == pytest.approx(0.031333, abs=1e-6)


def test_hl_worked_value_is_flagged():
    rep = bound_dHl(Ingredients(gamma4=0.1), ONE, 1, 1)
    assert rep.total == pytest.approx(71.8)
    assert rep.vacuous
    assert "71.8" in rep.describe()


def test_convex_needs_rho():
    with pytest.raises((TypeError, ValueError)):
        bound_dconvex(Ingredients(), TWO, 2, rho=None, lambda_A=1.0, tail_integral=0.0)


def test_marked_d3_worked_value():
    g = BigGammas(0.02, 0.04, 0.0, None, 1.0, 3.0)
    assert bound_marked(g, TWO, 2, "d3").total == pytest.approx(0.1249, abs=5e-5)


def test_marked_zero():
    g = BigGammas(0.0, 0.0, 0.0, 0.0, 1.0, 3.0)
    for v in ("d3", "d2", "dHl"):
        assert bound_marked(g, TWO, 2, v).total == 0.0


def test_marked_hl_requires_p():
    g = BigGammas(0.0, 0.0, 0.0, 0.0, 1.0, 2.0)
    with pytest.raises(ValueError, match="p > 2"):
        bound_marked(g, TWO, 2, "dHl")


def test_negative_ingredient_rejected():
    with pytest.raises(ValueError):
        bound_d3(Ingredients(gamma3=-1.0), 1)


def test_singular_target_rejected():
    sing = gaussian_target_from(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ValueError, match="positive definite"):
        bound_d2(Ingredients(gamma3=0.1), sing, 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
       st.floats(0, 1), st.floats(0, 1))
def test_bounds_monotone_in_ingredients(d, g1, g2, g3, g4, bump):
    base = Ingredients(d, g1, g2, g3, g4, 0.0)
    more = Ingredients(d, g1 + bump, g2, g3 + bump, g4, 0.0)
    assert bound_d3(more, 2).total >= bound_d3(base, 2).total
    assert bound_d2(more, TWO, 2).total >= bound_d2(base, TWO, 2).total
    assert bound_dHl(more, TWO, 2, 2).total >= bound_dHl(base, TWO, 2, 2).total


def test_csv_has_total_row():
    text = bound_d3(Ingredients(gamma3=0.1), 1).to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "bound_id,distance,quantity,value,std_error"
    assert any(",total," in ln for ln in lines)


@pytest.mark.parametrize("power", [-0.5, -1.0])
def test_rate_slope_exact(power):
    fit = rate_slope([(s, 3.0 * s ** power) for s in (25, 100, 400, 1600)])
    assert fit.slope == pytest.approx(power, abs=1e-12)
    assert fit.ci_low <= fit.slope <= fit.ci_high


def test_rate_slope_errors():
    with pytest.raises(ValueError):
        rate_slope([(1, 1.0), (10, 0.0), (100, 1.0)])
    with pytest.raises(ValueError):
        rate_slope([(1, 1.0), (10, 1.0)])
