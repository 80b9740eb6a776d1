import numpy as np
import pytest

from core.models import GaussianJoint
from core.rng import RngStream
from core.diffusion import cosine_schedule
from core.measures import gaussian_log_density
from core.gaussian_lab import (
    conditional_score, marginal_score, likelihood_score, sample_joint, score_matching_loss,
    zero_model, affine_model, true_marginal_model, true_conditional_model, verify_upper_bound,
    epsilon_c, epsilon_bar_c, marginal_score_energy, epsilon_c_exact, epsilon_bar_c_exact,
    marginal_energy_exact, likelihood_energy_exact, control_term_identity, tower_gap
)


def test_conditional_score_matches_finite_difference(joint):
    x = np.linspace(-3.0, 3.0, 41)
    c = 0.7
    h = 1e-6
    fd = (gaussian_log_density(joint, x + h, c) - gaussian_log_density(joint, x - h, c)) / (2 * h)
    assert np.max(np.abs(conditional_score(joint, x, c) - fd)) < 1e-6


def test_independent_joint_scores_coincide():
    j = GaussianJoint(mu_x=0.5, mu_c=1.0, sigma_xx=2.0, sigma_cc=1.0, sigma_xc=0.0)
    x = np.array([-1.0, 0.0, 2.5])
    assert np.array_equal(conditional_score(j, x, 3.0), marginal_score(j, x))
    assert np.all(likelihood_score(j, x, 3.0) == 0.0)


def test_sample_joint_moments(joint):
    x, c = sample_joint(joint, 200_000, RngStream(5))
    assert np.mean(x) == pytest.approx(joint.mu_x, abs=0.02)
    assert np.var(c) == pytest.approx(joint.sigma_cc, rel=0.02)
    assert np.cov(x, c)[0, 1] == pytest.approx(joint.sigma_xc, abs=0.02)


def test_true_marginal_model_has_zero_loss(joint):
    loss = score_matching_loss(joint, true_marginal_model(joint), False, 10_000, RngStream(1))
    assert loss.total == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("model", [zero_model(), affine_model(0.3, -0.1), affine_model(-1.0, 2.0)])
def test_upper_bound_holds(joint, model):
    b = verify_upper_bound(joint, model, 50_000, RngStream(11))
    assert b.holds
    assert b.lhs <= b.rhs + 3 * b.pooled_se


def test_upper_bound_holds_with_schedule(joint):
    b = verify_upper_bound(joint, true_conditional_model(joint, 0.5, cosine_schedule(5)), 20_000,
                           RngStream(12), cosine_schedule(5))
    assert b.holds


def test_epsilon_estimates_match_closed_forms(joint):
    n = 400_000
    eps = epsilon_c(joint, n, RngStream(2))
    bar = epsilon_bar_c(joint, n, RngStream(3))
    marg = marginal_score_energy(joint, n, RngStream(4))
    assert abs(eps.value - epsilon_c_exact(joint)) <= 4 * eps.std_error
    assert abs(bar.value - epsilon_bar_c_exact(joint)) <= 4 * bar.std_error
    assert abs(marg.value - marginal_energy_exact(joint)) <= 4 * marg.std_error


def test_closed_forms_are_consistent(joint):
    assert epsilon_bar_c_exact(joint) - marginal_energy_exact(joint) == pytest.approx(epsilon_c_exact(joint))
    assert likelihood_energy_exact(joint) == pytest.approx(epsilon_c_exact(joint))


def test_control_term_conventions(joint):
    r = control_term_identity(joint, 0.5, 200_000, RngStream(8))
    assert r.rhs == pytest.approx(0.5 ** 4 * r.rhs_unscaled)
    se = np.hypot(r.lhs_std_error, r.rhs_unscaled_std_error)
    assert abs(r.lhs - r.rhs_unscaled) <= 4 * se


def test_control_term_rejects_zero_sigma(joint):
    with pytest.raises(ValueError):
        control_term_identity(joint, 0.0, 10, RngStream(0))


def test_tower_gap_is_centred(joint):
    g = tower_gap(joint, 0.7, 200_000, RngStream(9))
    assert abs(g.value) <= 4 * g.std_error


def _unit_joint():
    return GaussianJoint(mu_x=0.0, mu_c=0.0, sigma_xx=1.0, sigma_cc=1.0, sigma_xc=0.5)


def test_zero_model_loss_is_marginal_score_energy():
    loss = score_matching_loss(_unit_joint(), zero_model(), False, 200_000, RngStream(21))
    assert loss.learned_score_norm == 0.0 and loss.cross_term == 0.0
    assert abs(loss.total - 1.0) <= 4 * loss.std_error


def test_true_marginal_model_pays_for_ignoring_the_condition():
    j = _unit_joint()
    model = true_marginal_model(j)
    uncond = score_matching_loss(j, model, False, 100_000, RngStream(22))
    cond = score_matching_loss(j, model, True, 100_000, RngStream(22))
    assert cond.total - uncond.total > 4 * cond.std_error
    # E|d/dx log p(x|c) - d/dx log p(x)|^2 = 1/v - 1/sigma_xx
    assert abs(cond.total - epsilon_c_exact(j)) <= 4 * cond.std_error


def test_loss_breakdown_components_sum_to_total(joint):
    loss = score_matching_loss(joint, affine_model(0.4, -0.2), True, 5_000, RngStream(23), cosine_schedule(3))
    assert loss.total == pytest.approx(loss.true_score_norm + loss.learned_score_norm - 2.0 * loss.cross_term,
                                       rel=1e-12)
    assert loss.conditional and loss.n_samples == 5_000


def test_epsilon_c_is_conditional_minus_unconditional_zero_model_loss(joint):
    n = 50_000
    cond = score_matching_loss(joint, zero_model(), True, n, RngStream(24))
    uncond = score_matching_loss(joint, zero_model(), False, n, RngStream(24))
    eps = epsilon_c(joint, n, RngStream(24))
    assert eps.value == pytest.approx(cond.total - uncond.total, rel=1e-9)
