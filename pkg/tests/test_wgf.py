import numpy as np
import pytest

from core.models import EmpiricalMeasure, EnergyFunctional
from core.measures import uniform_measure, dirac
from core.rng import RngStream
from core.ot import cost_matrix
from core.wgf import EXACT, quadratic_potential, energy, jko_step, w2_to, run_flow, epsilon_at


def test_single_particle_closed_form():
    F = EnergyFunctional(target=dirac([2.0]))
    trace = run_flow(F, dirac([0.0]), [0.2] * 10, EXACT)
    ratios = trace.w2[1:] / trace.w2[:-1]
    assert np.max(np.abs(ratios - 0.6)) < 1e-9
    assert trace.rho_hat == pytest.approx(0.6, abs=1e-9)


def test_cloud_contracts_toward_target():
    rng = RngStream(31)
    F = EnergyFunctional(target=uniform_measure(rng.normal(100)))
    trace = run_flow(F, uniform_measure(5.0 + rng.normal(100)), [0.2] * 30, EXACT)
    assert 0.0 < trace.rho_hat < 1.0
    assert trace.r2 >= 0.95
    assert np.all(np.diff(trace.energies) <= 1e-9)


def test_energy_is_half_w2_squared_plus_potential():
    P = uniform_measure([1.0, 3.0])
    F = EnergyFunctional(target=dirac([0.0]), lambda_reg=0.5, phi=quadratic_potential([0.0]))
    assert energy(F, P, EXACT) == pytest.approx(0.5 * 5.0 + 0.5 * 5.0)


def test_potential_increases_contraction():
    P0 = uniform_measure([-1.0, 2.0, 4.0])
    plain = run_flow(EnergyFunctional(target=dirac([0.0])), P0, [0.1] * 10, EXACT)
    reg = run_flow(EnergyFunctional(target=dirac([0.0]), lambda_reg=1.0, phi=quadratic_potential([0.0])),
                   P0, [0.1] * 10, EXACT)
    assert plain.rho_hat == pytest.approx(0.8, abs=1e-9)
    assert reg.rho_hat == pytest.approx(0.6, abs=1e-9)


def test_jko_step_preserves_weights_and_validates():
    P = uniform_measure([0.0, 1.0, 2.0])
    F = EnergyFunctional(target=uniform_measure([5.0, 6.0]))
    Q = jko_step(F, P, 0.1, 0.5)
    assert np.array_equal(Q.weights, P.weights)
    with pytest.raises(ValueError):
        jko_step(F, P, 0.0, EXACT)
    with pytest.raises(ValueError):
        jko_step(F, uniform_measure([[0.0, 1.0]]), 0.1, EXACT)


def test_entropic_step_moves_toward_target():
    P = uniform_measure([0.0, 1.0])
    F = EnergyFunctional(target=uniform_measure([4.0, 5.0]))
    Q = jko_step(F, P, 0.25, 0.05)
    assert w2_to(Q, F.target, EXACT) < w2_to(P, F.target, EXACT)


def test_regularizer_needs_potential():
    with pytest.raises(ValueError):
        EnergyFunctional(target=dirac([0.0]), lambda_reg=1.0)


def test_epsilon_policies():
    assert epsilon_at(EXACT, 3) == EXACT
    assert epsilon_at(0.2, 3) == 0.2
    assert epsilon_at(lambda k: 1.0 / (k + 1), 3) == 0.25
    with pytest.raises(ValueError):
        epsilon_at("fast", 0)
    with pytest.raises(ValueError):
        epsilon_at(0.0, 0)


def test_step_follows_finite_difference_gradient_of_energy():
    P = EmpiricalMeasure(points=[[-1.0], [0.2], [0.9], [1.7], [3.0]], weights=[0.1, 0.3, 0.2, 0.25, 0.15])
    F = EnergyFunctional(target=uniform_measure([0.5, 1.0, 2.5, 4.0, 4.5, 6.0]))
    eps = 0.01 * float(np.median(cost_matrix(P, F.target).entries))
    opts = dict(max_iters=200_000, tol=1e-12)
    eta = 0.1
    step = P.points[:, 0] - jko_step(F, P, eta, eps, **opts).points[:, 0]
    h = 1e-5
    for i in range(P.size):
        up, down = P.points.copy(), P.points.copy()
        up[i, 0] += h
        down[i, 0] -= h
        fd = (energy(F, EmpiricalMeasure(points=up, weights=P.weights), eps, **opts)
              - energy(F, EmpiricalMeasure(points=down, weights=P.weights), eps, **opts)) / (2 * h)
        # displacement = 2 eta dE/dc_i over the particle mass
        assert step[i] == pytest.approx(2.0 * eta * fd / P.weights[i], rel=1e-3, abs=1e-6)
