import math

import numpy as np
import pytest

from poisson_clt.boolean import (BooleanModel2D, boolean_diff1, check_grain_moment_ratio,
                                 intrinsic_volumes_2d, render_field, single_grain_volumes,
                                 translative_integral, wills_functional_2d)
from poisson_clt.core import PointConfiguration


def _tol(h, r):
    return 3 * h * (1 + math.pi * r)


@pytest.mark.parametrize("r", [0.05, 0.1, 0.2])
def test_single_disk(r):
    h = 0.005
    v = intrinsic_volumes_2d(render_field(np.array([[0.5, 0.5]]), np.array([r]), 1.0, h), h)
    assert v[0] == 1.0
    assert abs(v[1] - math.pi * r) <= _tol(h, r)
    assert abs(v[2] - math.pi * r * r) <= _tol(h, r)


def test_empty_set():
    v = intrinsic_volumes_2d(render_field(np.zeros((0, 2)), np.zeros(0), 1.0, 0.01), 0.01)
    assert np.array_equal(v, [0.0, 0.0, 0.0])


def test_two_disjoint_disks():
    c = np.array([[0.3, 0.3], [0.7, 0.7]])
    for h in (0.01, 0.005):
        v = intrinsic_volumes_2d(render_field(c, np.array([0.1, 0.1]), 1.0, h), h)
        assert v[0] == 2.0


def test_annulus_has_zero_euler_characteristic():
    n = 200
    h = 1.0 / n
    xs = (np.arange(n) + 0.5) * h
    d = np.hypot(*np.meshgrid(xs - 0.5, xs - 0.5, indexing="ij"))
    v = intrinsic_volumes_2d((d < 0.3) & (d > 0.15), h)
    assert v[0] == 0.0


def test_wills_values():
    assert wills_functional_2d(0.0) == pytest.approx(math.pi)
    assert wills_functional_2d(1.0) == pytest.approx(4 * math.pi)
    rs = np.linspace(0, 3, 20)
    assert np.all(np.diff([wills_functional_2d(r) for r in rs]) > 0)
    with pytest.raises(ValueError):
        wills_functional_2d(-1.0)


def test_covered_probe_has_zero_difference():
    model = BooleanModel2D(1.0, 5.0, 0.05, 0.1, h=0.005)
    cfg = PointConfiguration(np.array([[0.5, 0.5]]), np.array([[0.3]]))
    assert np.array_equal(boolean_diff1(model, cfg, [0.55, 0.5], 0.05), [0.0, 0.0, 0.0])


def test_disjoint_probe_adds_a_disk():
    model = BooleanModel2D(1.0, 5.0, 0.05, 0.1, h=0.005)
    cfg = PointConfiguration(np.array([[0.2, 0.2]]), np.array([[0.1]]))
    d = boolean_diff1(model, cfg, [0.7, 0.7], 0.1)
    assert d[0] == 1.0
    assert abs(d[1] - math.pi * 0.1) <= _tol(model.h, 0.1)
    assert abs(d[2] - math.pi * 0.01) <= _tol(model.h, 0.1)


def test_area_difference_never_negative():
    model = BooleanModel2D(1.0, 60.0, 0.05, 0.1, h=0.005)
    from poisson_clt.sampler import RngStream, sample_poisson_process
    gen = np.random.default_rng(0)
    for k in range(10):
        eta = sample_poisson_process(model.carrier, model.marks, RngStream(11, (k,)))
        assert boolean_diff1(model, eta, gen.random(2), 0.08)[2] >= 0.0


def test_resolution_refinement_is_within_bound():
    pts = np.array([[0.3, 0.4], [0.38, 0.45], [0.7, 0.2]])
    r = np.array([0.08, 0.06, 0.1])
    v1 = intrinsic_volumes_2d(render_field(pts, r, 1.0, 0.01), 0.01)
    v2 = intrinsic_volumes_2d(render_field(pts, r, 1.0, 0.005), 0.005)
    assert v1[0] == v2[0]
    assert np.all(np.abs(v1[1:] - v2[1:]) <= 3 * _tol(0.01, 0.1))


def test_single_grain_clipped_by_window():
    model = BooleanModel2D(1.0, 5.0, 0.05, 0.1, h=0.005)
    v = single_grain_volumes(model, [0.0, 0.5], 0.1)
    assert abs(v[2] - math.pi * 0.01 / 2) <= _tol(model.h, 0.1)


def test_translative_integral_is_bounded():
    model = BooleanModel2D(1.0, 5.0, 0.05, 0.1, h=0.01)
    est, exact, bound = translative_integral(model, 0.1, 0.5, n=300, seed=1)
    assert abs(est.value - exact) <= 3 * est.std_error + 0.05 * exact
    assert exact <= bound


def test_moment_check_on_empty_process():
    model = BooleanModel2D(1.0, 1e-9, 0.05, 0.1, h=0.01)
    rep = check_grain_moment_ratio(model, n_probes=6, n_inner=2, seed=0)
    assert math.isfinite(rep.ratio_max) and rep.ratio_max > 0
