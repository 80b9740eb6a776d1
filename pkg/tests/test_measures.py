import numpy as np
import pytest

from core.models import EmpiricalMeasure, GaussianJoint
from core.measures import uniform_measure, dirac, second_moment, gaussian_conditional, gaussian_log_density
from core.rng import RngStream
from scipy.integrate import trapezoid


def test_uniform_measure_weights_and_shape():
    m = uniform_measure([1.0, 2.0, 4.0])
    assert m.points.shape == (3, 1)
    assert np.allclose(m.weights, 1.0 / 3.0)
    assert m.mean()[0] == pytest.approx(7.0 / 3.0)


def test_measure_rejects_bad_weights():
    with pytest.raises(ValueError):
        EmpiricalMeasure(points=[[0.0], [1.0]], weights=[0.7, 0.7])
    with pytest.raises(ValueError):
        EmpiricalMeasure(points=[[0.0], [1.0]], weights=[1.5, -0.5])
    with pytest.raises(ValueError):
        EmpiricalMeasure(points=[[0.0], [np.nan]], weights=[0.5, 0.5])


def test_measure_is_read_only():
    m = uniform_measure([[0.0, 1.0], [2.0, 3.0]])
    with pytest.raises(ValueError):
        m.points[0, 0] = 5.0


def test_dirac_and_second_moment():
    d = dirac([3.0, 4.0])
    assert d.size == 1 and d.d == 2
    assert second_moment(d) == pytest.approx(25.0)


def test_json_keeps_points_and_weights():
    m = EmpiricalMeasure(points=[[0.5], [1.5]], weights=[0.25, 0.75])
    back = EmpiricalMeasure.from_json(m.to_json())
    assert np.array_equal(back.points, m.points)
    assert np.array_equal(back.weights, m.weights)


def test_joint_rejects_non_pd():
    with pytest.raises(ValueError):
        GaussianJoint(mu_x=0.0, mu_c=0.0, sigma_xx=1.0, sigma_cc=1.0, sigma_xc=1.0)


def test_conditional_moments(joint):
    mean, var = gaussian_conditional(joint, 1.0)
    assert mean == pytest.approx(joint.mu_x + joint.sigma_xc / joint.sigma_cc * (1.0 - joint.mu_c))
    assert var == pytest.approx(joint.sigma_xx - joint.sigma_xc ** 2 / joint.sigma_cc)


def test_log_density_normalizes(joint):
    x = np.linspace(-12.0, 12.0, 20001)
    p = np.exp(gaussian_log_density(joint, x, 0.4))
    assert trapezoid(p, x) == pytest.approx(1.0, abs=1e-8)


def test_diffused_joint_moments(joint):
    ab = 0.36
    dj = joint.diffused(ab)
    assert dj.mu_x == pytest.approx(0.6 * joint.mu_x)
    assert dj.sigma_xx == pytest.approx(ab * joint.sigma_xx + 1.0 - ab)
    assert dj.sigma_xc == pytest.approx(0.6 * joint.sigma_xc)
    assert dj.sigma_cc == joint.sigma_cc


def test_rng_streams_reproducible_and_distinct():
    a = RngStream(7, 3).normal(5)
    b = RngStream(7, 3).normal(5)
    c = RngStream(7, 4).normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    kids = RngStream(7, 3).split(3)
    assert len({k.stream_id for k in kids}) == 3
    assert [k.stream_id for k in kids] == [k.stream_id for k in RngStream(7, 3).split(3)]


def test_rng_rejects_negative_seed():
    with pytest.raises(ValueError):
        RngStream(-1)
