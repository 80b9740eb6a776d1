# core/diffusion.py

import numpy as np
from typing import Callable, Optional, Tuple

from core.models import NoiseSchedule, Trajectory, GaussianJoint
from core.gaussian_lab import likelihood_score
from core.measures import gaussian_conditional
from core.rng import RngStream
from core.constants import COSINE_OFFSET, MAX_BETA, SNR_RESIDUAL_FLOOR

# D_t(z, c, t) -> z_{t-1}
Denoiser = Callable[[np.ndarray, np.ndarray, int], np.ndarray]
# x0-predictor(z_t, c, t) -> estimate of z_0
X0Predictor = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


# ---------------- schedules ----------------

def cosine_schedule(T: int, s: float = COSINE_OFFSET) -> NoiseSchedule:
    if T < 2:
        raise ValueError("cosine_schedule needs T >= 2")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
    betas = np.minimum(1.0 - f[1:] / f[:-1], MAX_BETA)
    return NoiseSchedule(betas=betas)


def posterior_variance(sched: NoiseSchedule, t: int) -> float:
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t - 1)
    return sched.beta(t) * (1.0 - ab_prev) / (1.0 - ab_t)


# ---------------- forward process ----------------

def forward_sample(sched: NoiseSchedule, x0, t: int, rng: RngStream) -> np.ndarray:
    """Closed-form q(x_t | x_0)."""
    if t < 1:
        raise ValueError("forward_sample needs 1 <= t <= T")
    x0 = np.asarray(x0, dtype=np.float64)
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * rng.normal(x0.shape)


def forward_step(sched: NoiseSchedule, x_prev, t: int, rng: RngStream) -> np.ndarray:
    """Single kernel q(x_t | x_{t-1})."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    b = sched.beta(t)
    return np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * rng.normal(x_prev.shape)


# ---------------- reverse process (Gaussian toy) ----------------

def _x0_posterior_mean(m: float, v: float, ab: float, x_t):
    # E[x0 | x_t] for x0 ~ N(m, v)
    sa = np.sqrt(ab)
    return m + sa * v * (x_t - sa * m) / (ab * v + 1.0 - ab)


def _posterior_mean(sched: NoiseSchedule, x0_hat, x_t, t: int):
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t - 1)
    b = sched.beta(t)
    coef_x0 = np.sqrt(ab_prev) * b / (1.0 - ab_t)
    coef_xt = np.sqrt(1.0 - b) * (1.0 - ab_prev) / (1.0 - ab_t)
    return coef_x0 * x0_hat + coef_xt * x_t


def _step_sigma2(sched: NoiseSchedule, t: int, sigma2: Optional[float]) -> float:
    if sigma2 is None:
        return posterior_variance(sched, t)
    if sigma2 < 0.0:
        raise ValueError("sigma2 must be >= 0")
    return float(sigma2)


def reverse_step(sched: NoiseSchedule, j: GaussianJoint, x_t, t: int, rng: RngStream,
                 sigma2: Optional[float] = None):
    """Unconditional ancestral step on the x-marginal of j."""
    x_t = np.asarray(x_t, dtype=np.float64)
    ab = sched.alpha_bar(t)
    s2 = _step_sigma2(sched, t, sigma2)
    mu = _posterior_mean(sched, _x0_posterior_mean(j.mu_x, j.sigma_xx, ab, x_t), x_t, t)
    return mu + np.sqrt(s2) * rng.normal(x_t.shape)


def guided_reverse_step(sched: NoiseSchedule, j: GaussianJoint, x_t, c, t: int, rng: RngStream,
                        sigma2: Optional[float] = None, guidance_scale: float = 1.0):
    """
    x_{t-1} = mu(x_t) + sigma_t^2 * d/dx log p_t(c | x_t) + sigma_t * eps.
    The noise draw matches reverse_step, so guidance_scale=0 reproduces it sample-for-sample.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    ab = sched.alpha_bar(t)
    s2 = _step_sigma2(sched, t, sigma2)
    mu = _posterior_mean(sched, _x0_posterior_mean(j.mu_x, j.sigma_xx, ab, x_t), x_t, t)
    guide = guidance_scale * s2 * likelihood_score(j.diffused(ab), x_t, c)
    return mu + guide + np.sqrt(s2) * rng.normal(x_t.shape)


# ---------------- deterministic sampling ----------------

def ddim_denoiser(sched: NoiseSchedule, x0_predictor: X0Predictor) -> Denoiser:
    """Wraps an x0-predictor into the eta = 0 DDIM step z_t -> z_{t-1}."""
    def step(z, c, t: int):
        z = np.asarray(z, dtype=np.float64)
        ab_t = sched.alpha_bar(t)
        ab_prev = sched.alpha_bar(t - 1)
        x0 = np.asarray(x0_predictor(z, c, t), dtype=np.float64)
        eps = (z - np.sqrt(ab_t) * x0) / np.sqrt(1.0 - ab_t)
        return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
    return step


def gaussian_denoiser(sched: NoiseSchedule, j: GaussianJoint) -> Denoiser:
    """DDIM step with the exact posterior mean of x0 ~ p(x | c)."""
    def predictor(z, c, t: int):
        mean, var = gaussian_conditional(j, c)
        return _x0_posterior_mean(mean, var, sched.alpha_bar(t), z)
    return ddim_denoiser(sched, predictor)


def identity_denoiser(z, c, t: int):
    return np.asarray(z, dtype=np.float64)


def snr_and_noise(z_t, z0_ref) -> Tuple[float, float]:
    """
    snr = |ref|^2 / |z_t - ref|^2, noise = |z_t - ref| / sqrt(d).
    Both are fixed conventions; snr is +inf when the residual is below the floor.
    """
    z_t = np.asarray(z_t, dtype=np.float64).ravel()
    ref = np.asarray(z0_ref, dtype=np.float64).ravel()
    if z_t.shape != ref.shape:
        raise ValueError("z_t and z0_ref must have equal dimensions")
    resid = float(np.linalg.norm(z_t - ref))
    noise = resid / np.sqrt(ref.size)
    if resid < SNR_RESIDUAL_FLOOR:
        return float("inf"), noise
    return float(ref @ ref) / resid ** 2, noise


def trajectory_from_states(states, z0_ref=None) -> Trajectory:
    """Freezes z_T ... z_0 and records diagnostics against z0_ref (default: z_0)."""
    states = [np.array(s, dtype=np.float64) for s in states]
    ref = states[-1] if z0_ref is None else np.asarray(z0_ref, dtype=np.float64)
    diag = np.array([snr_and_noise(s, ref) for s in states[1:]])
    for s in states:
        s.setflags(write=False)
    return Trajectory(states=tuple(states), snr=diag[:, 0], noise_intensity=diag[:, 1])


def ddim_trajectory(sched: NoiseSchedule, denoiser: Denoiser, c, z_T,
                    z0_ref=None) -> Trajectory:
    """
    Runs z_T -> z_0 with denoiser and records (snr, noise) for z_{T-1} ... z_0.
    z0_ref defaults to the trajectory's own final state.
    Batches work too: z_T of shape (n, d) with c of shape (n, d_c).
    """
    z = np.array(z_T, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    states = [z]
    for t in range(sched.T, 0, -1):
        z = np.asarray(denoiser(z, c, t), dtype=np.float64)
        if z.shape != states[0].shape:
            raise ValueError("denoiser changed the latent shape")
        states.append(z)
    return trajectory_from_states(states, z0_ref)
