# core/gaussian_lab.py

import numpy as np
from typing import List, Optional, Tuple

from core.models import (
    GaussianJoint, ScoreModel, LossBreakdown, McEstimate, BoundCheck,
    ControlTermReport, NoiseSchedule
)
from core.measures import gaussian_conditional
from core.analysis import mean_and_se, pooled_se
from core.rng import RngStream
from core.constants import MC_SIGMA_BAND


# ---------------- closed-form scores ----------------

def conditional_score(j: GaussianJoint, x, c):
    """d/dx log p(x | c)."""
    mean, var = gaussian_conditional(j, c)
    if not var > 0.0:
        raise ValueError("degenerate conditional variance")
    return -(np.asarray(x, dtype=np.float64) - mean) / var


def marginal_score(j: GaussianJoint, x):
    return -(np.asarray(x, dtype=np.float64) - j.mu_x) / j.sigma_xx


def likelihood_score(j: GaussianJoint, x, c):
    """d/dx log p(c | x), the guidance direction."""
    x = np.asarray(x, dtype=np.float64)
    k = j.sigma_xc / j.sigma_xx
    m_c = j.mu_c + k * (x - j.mu_x)
    return k * (np.asarray(c, dtype=np.float64) - m_c) / j.cond_var_c


# closed forms with v = Var(x|c), w = Var(c|x)
def epsilon_bar_c_exact(j: GaussianJoint) -> float:
    return 1.0 / j.cond_var


def marginal_energy_exact(j: GaussianJoint) -> float:
    return 1.0 / j.sigma_xx


def epsilon_c_exact(j: GaussianJoint) -> float:
    return 1.0 / j.cond_var - 1.0 / j.sigma_xx


def likelihood_energy_exact(j: GaussianJoint) -> float:
    return (j.sigma_xc / j.sigma_xx) ** 2 / j.cond_var_c


# ---------------- score model families ----------------

def _slice_joint(j: GaussianJoint, schedule: Optional[NoiseSchedule], t) -> GaussianJoint:
    if schedule is None or int(t) == 0:
        return j
    return j.diffused(schedule.alpha_bar(int(t)))


def true_marginal_model(j: GaussianJoint, schedule: Optional[NoiseSchedule] = None) -> ScoreModel:
    return ScoreModel(fn=lambda x, t: marginal_score(_slice_joint(j, schedule, t), x),
                      descriptor=f"true-marginal(mu_x={j.mu_x!r}, sigma_xx={j.sigma_xx!r})")


def true_conditional_model(j: GaussianJoint, c: float, schedule: Optional[NoiseSchedule] = None) -> ScoreModel:
    return ScoreModel(fn=lambda x, t: conditional_score(_slice_joint(j, schedule, t), x, c),
                      descriptor=f"true-conditional(c={c!r})")


def zero_model() -> ScoreModel:
    return ScoreModel(fn=lambda x, t: np.zeros_like(x), descriptor="zero")


def affine_model(a: float, b: float) -> ScoreModel:
    return ScoreModel(fn=lambda x, t: a * x + b, descriptor=f"affine(a={a!r}, b={b!r})")


# ---------------- sampling ----------------

def sample_joint(j: GaussianJoint, n: int, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
    """
    x from its marginal, then c from p(c | x).
    Always consumes 2n normals so conditional and unconditional runs share x.
    """
    if n < 1:
        raise ValueError("n_samples must be >= 1")
    e = rng.normal((2, n))
    x = j.mu_x + np.sqrt(j.sigma_xx) * e[0]
    m_c = j.mu_c + j.sigma_xc / j.sigma_xx * (x - j.mu_x)
    c = m_c + np.sqrt(j.cond_var_c) * e[1]
    return x, c


def _slices(j: GaussianJoint, schedule: Optional[NoiseSchedule]) -> List[Tuple[int, GaussianJoint]]:
    if schedule is None:
        return [(0, j)]
    return [(t, j.diffused(schedule.alpha_bar(t))) for t in range(1, schedule.T + 1)]


def _average(per_slice: List[Tuple[float, float]]) -> Tuple[float, float]:
    T = len(per_slice)
    value = sum(v for v, _ in per_slice) / T
    se = pooled_se(*(s for _, s in per_slice)) / T
    return value, se


# ---------------- losses and error terms ----------------

def _loss_terms(js: GaussianJoint, s: ScoreModel, t, conditional: bool, x, c):
    target = conditional_score(js, x, c) if conditional else marginal_score(js, x)
    learned = s(x, t)
    return target ** 2, learned ** 2, target * learned


def score_matching_loss(j: GaussianJoint, s: ScoreModel, conditional: bool, n_samples: int,
                        rng: RngStream, schedule: Optional[NoiseSchedule] = None) -> LossBreakdown:
    parts = []
    for t, js in _slices(j, schedule):
        x, c = sample_joint(js, n_samples, rng)
        tt, ll, cr = _loss_terms(js, s, t, conditional, x, c)
        parts.append((tt.mean(), ll.mean(), cr.mean(), mean_and_se(tt + ll - 2.0 * cr)[1]))
    T = len(parts)
    true_n = sum(p[0] for p in parts) / T
    learned_n = sum(p[1] for p in parts) / T
    cross = sum(p[2] for p in parts) / T
    return LossBreakdown(
        true_score_norm=float(true_n),
        learned_score_norm=float(learned_n),
        cross_term=float(cross),
        total=float(true_n + learned_n - 2.0 * cross),
        std_error=pooled_se(*(p[3] for p in parts)) / T,
        n_samples=n_samples,
        conditional=conditional,
    )


def _estimate(j, n_samples, rng, schedule, integrand) -> McEstimate:
    per = []
    for _, js in _slices(j, schedule):
        x, c = sample_joint(js, n_samples, rng)
        per.append(mean_and_se(integrand(js, x, c)))
    value, se = _average(per)
    return McEstimate(value=value, std_error=se, n_samples=n_samples)


def epsilon_c(j: GaussianJoint, n_samples: int, rng: RngStream,
              schedule: Optional[NoiseSchedule] = None) -> McEstimate:
    return _estimate(j, n_samples, rng, schedule,
                     lambda js, x, c: conditional_score(js, x, c) ** 2 - marginal_score(js, x) ** 2)


def epsilon_bar_c(j: GaussianJoint, n_samples: int, rng: RngStream,
                  schedule: Optional[NoiseSchedule] = None) -> McEstimate:
    return _estimate(j, n_samples, rng, schedule,
                     lambda js, x, c: conditional_score(js, x, c) ** 2)


def marginal_score_energy(j: GaussianJoint, n_samples: int, rng: RngStream,
                          schedule: Optional[NoiseSchedule] = None) -> McEstimate:
    return _estimate(j, n_samples, rng, schedule,
                     lambda js, x, c: marginal_score(js, x) ** 2)


def tower_gap(j: GaussianJoint, x: float, n_samples: int, rng: RngStream) -> McEstimate:
    """E_{c|x}[d/dx log p(x|c)] - d/dx log p(x) at a fixed x; zero in expectation."""
    k = j.sigma_xc / j.sigma_xx
    c = j.mu_c + k * (x - j.mu_x) + np.sqrt(j.cond_var_c) * rng.normal(n_samples)
    value, se = mean_and_se(conditional_score(j, x, c) - marginal_score(j, x))
    return McEstimate(value=value, std_error=se, n_samples=n_samples)


# ---------------- bound and identity checks ----------------

def verify_upper_bound(j: GaussianJoint, s: ScoreModel, n_samples: int, rng: RngStream,
                       schedule: Optional[NoiseSchedule] = None,
                       n_sigma: float = MC_SIGMA_BAND) -> BoundCheck:
    """Unconditional loss vs conditional loss on shared draws."""
    lhs_parts, rhs_parts = [], []
    for t, js in _slices(j, schedule):
        x, c = sample_joint(js, n_samples, rng)
        learned = s(x, t)
        lhs_parts.append(mean_and_se((marginal_score(js, x) - learned) ** 2))
        rhs_parts.append(mean_and_se((conditional_score(js, x, c) - learned) ** 2))
    lhs, lhs_se = _average(lhs_parts)
    rhs, rhs_se = _average(rhs_parts)
    se = pooled_se(lhs_se, rhs_se)
    return BoundCheck(lhs=lhs, rhs=rhs, holds=bool(lhs <= rhs + n_sigma * se),
                      pooled_se=se, n_samples=n_samples)


def control_term_identity(j: GaussianJoint, sigma_t: float, n_samples: int,
                          rng: RngStream) -> ControlTermReport:
    """
    lhs = E|d log p(x|c)|^2 - E|d log p(x)|^2
    rhs = E|sigma_t^2 d log p(c|x)|^2 (sigma_t^2 inside the norm)
    rhs_unscaled = E|d log p(c|x)|^2 (sigma_t^4 cancelled)
    """
    if not sigma_t > 0.0:
        raise ValueError("sigma_t must be positive")
    x, c = sample_joint(j, n_samples, rng)
    lhs, lhs_se = mean_and_se(conditional_score(j, x, c) ** 2 - marginal_score(j, x) ** 2)
    g2 = likelihood_score(j, x, c) ** 2
    raw, raw_se = mean_and_se(g2)
    scale = sigma_t ** 4
    return ControlTermReport(
        lhs=lhs, lhs_std_error=lhs_se,
        rhs=scale * raw, rhs_std_error=scale * raw_se,
        rhs_unscaled=raw, rhs_unscaled_std_error=raw_se,
        sigma_t=float(sigma_t), n_samples=n_samples,
    )
