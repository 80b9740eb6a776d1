import numpy as np
import pytest

from core.models import ArModel, GaussianJoint, GaussianLaw, SubspaceSpec
from core.rng import RngStream
from core.ar_chain import (
    companion, simulate, simulate_companion, simulate_ensemble, gaussian_law_path, ergodicity_check,
    gradient_norm_decay, project_extraneous, extraneous_energy, inconsistency_divergence, regularity_witnesses
)


def test_unstable_models_rejected():
    with pytest.raises(ValueError):
        ArModel(coeffs=(1.0,), noise_std=1.0)
    with pytest.raises(ValueError):
        ArModel(coeffs=(0.9, 0.5), noise_std=1.0)   # root outside the unit circle
    with pytest.raises(ValueError):
        ArModel(coeffs=(0.5,), noise_std=-0.1)


def test_companion_matrix_layout():
    cm = companion(ArModel(coeffs=(0.5, -0.2, 0.1), noise_std=1.0))
    assert np.array_equal(cm.matrix[0], [0.5, -0.2, 0.1])
    assert np.array_equal(cm.matrix[1:], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert 0.0 < cm.spectral_radius < 1.0


def test_noiseless_chain_is_geometric():
    path = simulate(ArModel(coeffs=(0.5,), noise_std=0.0), 8.0, 4)
    assert np.allclose(np.ravel(path), [8.0, 4.0, 2.0, 1.0, 0.5])


def test_ensemble_reproducible_and_shaped():
    m = ArModel(coeffs=(0.7,), noise_std=1.0)
    a = simulate_ensemble(m, GaussianLaw(0.0, 1.0), 10, 101, RngStream(3), n_shards=4)
    b = simulate_ensemble(m, GaussianLaw(0.0, 1.0), 10, 101, RngStream(3), n_shards=4)
    assert a.shape == (101, 11)
    assert np.array_equal(a, b)


def test_stationary_variance():
    a = 0.6
    m = ArModel(coeffs=(a,), noise_std=1.0)
    paths = simulate_ensemble(m, 0.0, 60, 40_000, RngStream(4))
    assert paths[:, -1].var() == pytest.approx(1.0 / (1.0 - a ** 2), rel=0.03)
    means, stds = gaussian_law_path(m, 0.0, 60)
    assert stds[-1] ** 2 == pytest.approx(1.0 / (1.0 - a ** 2), rel=1e-6)


def test_ergodicity_rate_tracks_drift():
    m = ArModel(coeffs=(0.5,), noise_std=1.0)
    rep = ergodicity_check(m, 5.0, -5.0, 25, 20_000, RngStream(5))
    assert rep.exact_fit is not None
    assert rep.exact_fit.rate == pytest.approx(0.5, abs=0.1)
    assert rep.tv_exact[0] == 1.0
    assert np.max(np.abs(rep.tv - rep.tv_exact)) < 0.1


def test_ergodicity_needs_enough_paths():
    with pytest.raises(ValueError):
        ergodicity_check(ArModel(coeffs=(0.5,), noise_std=1.0), 1.0, -1.0, 5, 999, RngStream(0))


def test_gradient_decay_fit():
    j = GaussianJoint(mu_x=0.0, mu_c=0.0, sigma_xx=1.0, sigma_cc=1.0, sigma_xc=0.5)
    rep = gradient_norm_decay(ArModel(coeffs=(0.5,), noise_std=0.25), j, np.linspace(-3, 3, 61),
                              30, 1000, RngStream(6))
    assert rep.fit.passed
    assert abs(rep.fit.beta - 0.5) < 0.15
    assert rep.envelope_holds()


def test_projection_is_orthogonal():
    sub = SubspaceSpec.from_vectors([[1.0, 1.0, 0.0]])
    c = np.array([[2.0, 0.0, 3.0]])
    ideal, eta = project_extraneous(c, sub)
    assert np.allclose(ideal, [[1.0, 1.0, 0.0]])
    assert np.allclose(eta, [[1.0, -1.0, 3.0]])
    assert abs(float(np.sum(ideal * eta))) < 1e-12


def test_subspace_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        SubspaceSpec(basis=[[1.0, 0.0], [1.0, 1.0]])


def test_extraneous_energy_trace_variants():
    sub = SubspaceSpec(basis=[[1.0, 0.0]])
    samples = RngStream(2).normal((500, 2))
    e = extraneous_energy(lambda v: v, np.eye(2), sub, samples)
    assert e.propagated == pytest.approx(np.mean(samples[:, 1] ** 2))
    assert e.total - e.propagated == pytest.approx(2.0)
    assert e.total_projected - e.propagated == pytest.approx(1.0)


def test_inconsistency_divergence_vanishes_at_target():
    j = GaussianJoint(mu_x=0.0, mu_c=0.0, sigma_xx=1.0, sigma_cc=1.0, sigma_xc=0.9)
    near = inconsistency_divergence(j, 0.0, 0.0, 200, 0.1, RngStream(7))
    far = inconsistency_divergence(j, 3.0, 0.0, 200, 0.1, RngStream(7))
    assert far > near
    assert near < 0.05


def test_regularity_witnesses_positive(joint):
    w = regularity_witnesses(joint, np.linspace(-3, 3, 31), 200, RngStream(8))
    assert w.density_min > 0.0
    assert np.isfinite(w.lipschitz_max) and w.lipschitz_max > 0.0
    assert w.density_bound >= w.density_min


def test_stacked_state_recursion_reproduces_simulate():
    m = ArModel(coeffs=(0.5, -0.3, 0.1), noise_std=0.7)
    noise = 0.7 * RngStream(9).normal(25)
    direct = simulate(m, [1.0, -2.0, 0.5], 25, noise=noise)
    stacked = simulate_companion(companion(m), [1.0, -2.0, 0.5], noise)
    assert np.allclose(stacked, direct, rtol=0.0, atol=1e-12)


def test_spectral_radius_matches_power_growth_on_non_normal_matrix():
    m = ArModel(coeffs=(1.2, -0.5), noise_std=1.0)   # complex dominant pair
    cm = companion(m)
    A = cm.matrix
    assert not np.allclose(A @ A.T, A.T @ A)
    roots = np.roots([1.0, -1.2, 0.5])
    assert cm.spectral_radius == pytest.approx(np.max(np.abs(roots)), abs=1e-12)
    # Gelfand: |A^k|^(1/k) -> rho
    k = 400
    growth = np.linalg.norm(np.linalg.matrix_power(A, k), 2) ** (1.0 / k)
    assert growth == pytest.approx(cm.spectral_radius, abs=0.02)
