import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from poisson_clt.core import (CarrierSpace, EstimateWithError, MarkSpace,
                              PointConfiguration, gaussian_target_from, symmetric_eigen)
from poisson_clt.zoo import CountModel


def test_unit_cube_mass():
    c = CarrierSpace.unit_cube(2, 50.0)
    assert c.total_mass == pytest.approx(50.0)
    assert c.volume == 1.0


def test_affine_density_mass():
    c = CarrierSpace(np.zeros(1), np.ones(1), 10.0, density=lambda x: 2 * x[:, 0],
                     density_sup=2.0)
    assert c.total_mass == pytest.approx(10.0, rel=1e-8)


def test_bad_box_rejected():
    with pytest.raises(ValueError):
        CarrierSpace(np.ones(1), np.zeros(1), 1.0)


def test_configuration_is_read_only():
    cfg = PointConfiguration(np.zeros((2, 1)))
    with pytest.raises(ValueError):
        cfg.points[0, 0] = 1.0


def test_with_point_leaves_original():
    cfg = PointConfiguration(np.zeros((0, 2)))
    bigger = cfg.with_point([0.5, 0.5])
    assert len(cfg) == 0 and len(bigger) == 1


def test_order_does_not_matter():
    rng = np.random.default_rng(0)
    pts = rng.random((30, 2))
    a = PointConfiguration(pts)
    b = a.permuted(rng.permutation(30))
    f = CountModel(CarrierSpace.unit_cube(2, 30.0))
    assert np.array_equal(f.evaluate(a), f.evaluate(b))


def test_centered_without_mean_raises():
    from poisson_clt.zoo import PairCountModel
    f = PairCountModel(CarrierSpace.unit_cube(1, 5.0), 0.1)
    with pytest.raises(ValueError, match="mean"):
        f.centered(PointConfiguration(np.zeros((0, 1))))


def test_centered_subtracts_mean():
    f = CountModel(CarrierSpace.unit_cube(1, 5.0))
    cfg = PointConfiguration(np.full((3, 1), 0.2))
    assert f.centered(cfg)[0] == 3.0 - 5.0


def test_rademacher_marks():
    marks = MarkSpace.rademacher().sample(np.random.default_rng(1), 1000)
    assert set(np.unique(marks)) == {-1.0, 1.0}


@pytest.mark.parametrize("mat,expected", [
    (np.diag([2.0, 3.0]), [2.0, 3.0]),
    (np.eye(3), [1.0, 1.0, 1.0]),
    (np.array([[2.0, 1.0], [1.0, 2.0]]), [1.0, 3.0]),
])
def test_eigen_examples(mat, expected):
    vals, vecs = symmetric_eigen(mat)
    assert np.allclose(vals, expected, atol=1e-12)
    assert np.allclose(vecs @ np.diag(vals) @ vecs.T, mat, atol=1e-12)


def test_eigen_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        symmetric_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(arrays(float, (4, 4), elements=st.floats(-3, 3)))
def test_eigen_matches_numpy(a):
    s = a + a.T
    vals, vecs = symmetric_eigen(s)
    assert np.allclose(vals, np.linalg.eigvalsh(s), atol=1e-9)
    assert np.allclose(vecs.T @ vecs, np.eye(4), atol=1e-9)


def test_target_examples():
    t = gaussian_target_from(np.eye(2))
    assert t.op_norm == 1 and t.inv_op_norm == 1
    t = gaussian_target_from(np.diag([4.0, 1.0]))
    assert np.allclose(t.sqrt, np.diag([2.0, 1.0]))
    t = gaussian_target_from(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert t.inv_op_norm == pytest.approx(1.0)
    assert t.op_norm == pytest.approx(3.0)


def test_target_rejects_negative_eigenvalue():
    with pytest.raises(ValueError, match="eigenvalue"):
        gaussian_target_from(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_singular_target():
    t = gaussian_target_from(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert not t.positive_definite
    assert math.isinf(t.inv_op_norm)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(-2, 2)))
def test_whitening_identity(a):
    s = a @ a.T + 0.5 * np.eye(3)
    t = gaussian_target_from(s)
    assert np.allclose(t.inv_sqrt @ s @ t.inv_sqrt, np.eye(3), atol=1e-8)
    assert np.allclose(t.sqrt @ t.sqrt, s, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(-2, 2)),
       arrays(float, (3, 3), elements=st.floats(-2, 2)))
def test_op_norm_submultiplicative(a, b):
    sa, sb = a @ a.T, b @ b.T
    nab = np.linalg.norm(sa @ sb, 2)
    bound = gaussian_target_from(sa).op_norm * gaussian_target_from(sb).op_norm
    assert nab <= bound * (1 + 1e-9) + 1e-12


def test_estimate_from_samples():
    e = EstimateWithError.from_samples([1.0, 2.0, 3.0])
    assert e.value == 2.0
    assert e.std_error == pytest.approx(1 / math.sqrt(3))
    assert e.within(2.5, k=1.0)
