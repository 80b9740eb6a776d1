import numpy as np
import pytest

from core.models import GaussianJoint, NoiseSchedule
from core.rng import RngStream
from core.gaussian_lab import likelihood_score
from core.diffusion import (
    cosine_schedule, posterior_variance, forward_sample, forward_step, reverse_step, guided_reverse_step,
    gaussian_denoiser, identity_denoiser, ddim_trajectory, snr_and_noise
)


def test_cosine_schedule_shape_and_monotone():
    s = cosine_schedule(50)
    assert s.T == 50
    assert np.all(np.diff(s.alphas_bar) < 0.0)
    assert np.all((s.betas > 0.0) & (s.betas < 1.0))
    assert s.alpha_bar(0) == 1.0


def test_cosine_schedule_rejects_short():
    with pytest.raises(ValueError):
        cosine_schedule(1)


def test_schedule_rejects_bad_betas():
    with pytest.raises(ValueError):
        NoiseSchedule(betas=[0.1, 1.0])


def test_posterior_variance_bounds():
    s = cosine_schedule(20)
    for t in range(2, 21):
        assert 0.0 < posterior_variance(s, t) <= s.beta(t)


def test_forward_sample_moments():
    s = cosine_schedule(10)
    x0 = np.full(200_000, 2.0)
    xt = forward_sample(s, x0, 5, RngStream(3))
    ab = s.alpha_bar(5)
    assert xt.mean() == pytest.approx(np.sqrt(ab) * 2.0, abs=0.01)
    assert xt.var() == pytest.approx(1.0 - ab, rel=0.02)


def test_guidance_zero_reproduces_unguided(joint):
    s = cosine_schedule(10)
    x = np.linspace(-1.0, 1.0, 7)
    a = reverse_step(s, joint, x, 4, RngStream(1, 2))
    b = guided_reverse_step(s, joint, x, 0.3, 4, RngStream(1, 2), guidance_scale=0.0)
    assert np.array_equal(a, b)


def test_identity_denoiser_keeps_state():
    s = cosine_schedule(8)
    z = RngStream(4).normal(6)
    tr = ddim_trajectory(s, identity_denoiser, 0.0, z)
    assert all(np.array_equal(st, z) for st in tr.states)
    assert np.all(np.isinf(tr.snr))
    assert np.all(tr.noise_intensity == 0.0)


def test_ddim_trajectory_monotone_for_centred_gaussian():
    j = GaussianJoint(mu_x=0.0, mu_c=0.0, sigma_xx=1.0, sigma_cc=1.0, sigma_xc=0.9)
    s = cosine_schedule(50)
    tr = ddim_trajectory(s, gaussian_denoiser(s, j), 0.0, RngStream(6).normal(16))
    assert tr.T == 50 and len(tr.snr) == 50
    assert np.all(np.diff(tr.snr) >= -1e-12)
    assert np.all(np.diff(tr.noise_intensity) <= 1e-12)


def test_ddim_final_state_has_conditional_spread():
    # deterministic sampler maps N(0, I) starts onto p(x | c) in the Gaussian case
    j = GaussianJoint(mu_x=0.0, mu_c=0.0, sigma_xx=1.0, sigma_cc=1.0, sigma_xc=0.6)
    s = cosine_schedule(200)
    z0 = ddim_trajectory(s, gaussian_denoiser(s, j), 1.0, RngStream(7).normal(50_000)).final
    assert z0.mean() == pytest.approx(0.6, abs=0.02)
    assert z0.var() == pytest.approx(j.cond_var, rel=0.05)


def test_ddim_is_deterministic(joint):
    s = cosine_schedule(12)
    z = RngStream(9).normal(4)
    a = ddim_trajectory(s, gaussian_denoiser(s, joint), 0.2, z)
    b = ddim_trajectory(s, gaussian_denoiser(s, joint), 0.2, z)
    assert all(np.array_equal(x, y) for x, y in zip(a.states, b.states))


def test_snr_conventions():
    snr, noise = snr_and_noise([1.0, 1.0], [2.0, 0.0])
    assert snr == pytest.approx(4.0 / 2.0)
    assert noise == pytest.approx(np.sqrt(2.0) / np.sqrt(2.0))
    with pytest.raises(ValueError):
        snr_and_noise([1.0], [1.0, 2.0])


def test_iterated_kernel_matches_closed_form():
    s = cosine_schedule(10)
    x = np.full(200_000, 1.5)
    rng = RngStream(12)
    for t in range(1, 6):
        x = forward_step(s, x, t, rng)
    ab = s.alpha_bar(5)
    assert np.prod(1.0 - s.betas[:5]) == pytest.approx(ab, rel=1e-12)
    assert x.mean() == pytest.approx(np.sqrt(ab) * 1.5, abs=0.01)
    assert x.var() == pytest.approx(1.0 - ab, rel=0.02)


def test_guidance_shift_is_scaled_likelihood_score(joint):
    s = cosine_schedule(10)
    x = np.linspace(-2.0, 2.0, 9)
    c, t = 0.4, 6
    base = reverse_step(s, joint, x, t, RngStream(3, 1))
    one = guided_reverse_step(s, joint, x, c, t, RngStream(3, 1), guidance_scale=1.0)
    three = guided_reverse_step(s, joint, x, c, t, RngStream(3, 1), guidance_scale=3.0)
    shift = posterior_variance(s, t) * likelihood_score(joint.diffused(s.alpha_bar(t)), x, c)
    assert np.any(shift != 0.0)
    assert np.allclose(one - base, shift, rtol=1e-10, atol=1e-14)
    assert np.allclose(three - base, 3.0 * (one - base), rtol=1e-9, atol=1e-14)
