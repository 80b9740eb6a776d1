# core/analysis.py

import logging
import numpy as np
from typing import Iterable, Sequence, Tuple
from scipy import optimize, stats

from core.models import DecayFit, LogLinearFit
from core.constants import TV_BINS, DECAY_BETA_STARTS, DECAY_MIN_R2, FIT_PLATEAU

log = logging.getLogger(__name__)


# ---------------- Monte-Carlo statistics ----------------

def mean_and_se(values) -> Tuple[float, float]:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("mean_and_se needs at least one value")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def pooled_se(*errors: float) -> float:
    return float(np.sqrt(np.sum(np.square(errors))))


def within_band(diff: float, se: float, n_sigma: float, floor: float = 0.0) -> bool:
    return abs(diff) <= n_sigma * se + floor


# ---------------- fits ----------------

def log_linear_fit(k: Sequence[float], values: Sequence[float], floor: float = FIT_PLATEAU) -> LogLinearFit:
    """
    Regress log(values) on k; rate = exp(slope).
    Entries at or below `floor` are dropped (converged plateau).
    """
    k = np.asarray(k, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    keep = np.isfinite(y) & (y > floor)
    if int(keep.sum()) < 2:
        raise ValueError("log_linear_fit needs at least two values above the plateau")
    res = stats.linregress(k[keep], np.log(y[keep]))
    r2 = float(res.rvalue ** 2) if np.isfinite(res.rvalue) else 1.0
    return LogLinearFit(rate=float(np.exp(res.slope)), intercept=float(res.intercept),
                        r2=r2, n_points=int(keep.sum()))


def _r_squared(y: np.ndarray, fitted: np.ndarray) -> float:
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 0.0:
        return 1.0 if ss_res <= FIT_PLATEAU else 0.0
    return 1.0 - ss_res / ss_tot


def fit_geometric_envelope(i: Sequence[float], y: Sequence[float],
                           beta_starts: Iterable[float] = DECAY_BETA_STARTS,
                           min_r2: float = DECAY_MIN_R2) -> DecayFit:
    """
    Least-squares fit of y_i ~ M * beta**i + m with beta in [0, 1].
    Multi-start over beta; the lowest cost wins, ties go to the lowest beta.
    """
    i = np.asarray(i, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if i.shape != y.shape or i.size < 3:
        raise ValueError("fit_geometric_envelope needs at least three (i, y) pairs of equal length")

    def residuals(p):
        M, beta, m = p
        return M * np.power(beta, i) + m - y

    best = None
    for b0 in beta_starts:
        x0 = np.array([y[0] - y[-1], float(b0), y[-1]])
        try:
            res = optimize.least_squares(residuals, x0,
                                         bounds=([-np.inf, 0.0, -np.inf], [np.inf, 1.0, np.inf]))
        except (ValueError, np.linalg.LinAlgError) as e:
            log.debug("envelope fit start beta=%.2f failed: %s", b0, e)
            continue
        if best is None:
            best = res
            continue
        tie = abs(res.cost - best.cost) <= 1e-12 * max(1.0, best.cost)
        if (res.cost < best.cost and not tie) or (tie and res.x[1] < best.x[1]):
            best = res

    if best is None:
        log.warning("geometric envelope fit failed for every start")
        nan = float("nan")
        return DecayFit(M=nan, beta=nan, m=nan, r2=0.0, sigma_fit=nan, ci95={}, fit_failed=True)

    M, beta, m = (float(v) for v in best.x)
    fitted = M * np.power(beta, i) + m
    r2 = _r_squared(y, fitted)
    dof = max(i.size - 3, 1)
    sigma_fit = float(np.sqrt(np.sum((y - fitted) ** 2) / dof))

    J = best.jac
    cov = np.linalg.pinv(J.T @ J) * sigma_fit ** 2
    half = 1.96 * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    ci95 = {name: (float(v - h), float(v + h)) for name, v, h in zip(("M", "beta", "m"), best.x, half)}

    failed = (not best.success) or r2 < min_r2
    if failed:
        log.warning("geometric envelope fit rejected (R^2=%.4f)", r2)
    return DecayFit(M=M, beta=beta, m=m, r2=r2, sigma_fit=sigma_fit, ci95=ci95, fit_failed=failed)


# ---------------- total variation ----------------

def histogram_tv(a, b, bins: int = TV_BINS) -> float:
    """TV between two 1-D samples on a shared-range histogram."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        return 0.0
    ha, _ = np.histogram(a, bins=bins, range=(lo, hi))
    hb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    return float(0.5 * np.abs(ha / a.size - hb / b.size).sum())


def histogram_noise_floor(n: int, bins: int = TV_BINS) -> float:
    """Expected histogram TV between two size-n samples of one law, uniform-bin bound."""
    return float(np.sqrt(bins / (np.pi * n)))


def gaussian_tv(m1: float, s1: float, m2: float, s2: float) -> float:
    """Exact TV between N(m1, s1^2) and N(m2, s2^2); std 0 is a Dirac."""
    if s1 < 0 or s2 < 0:
        raise ValueError("standard deviations must be >= 0")
    if s1 == 0.0 or s2 == 0.0:
        if s1 == 0.0 and s2 == 0.0:
            return 0.0 if m1 == m2 else 1.0
        return 1.0
    if m1 == m2 and s1 == s2:
        return 0.0

    # density crossings solve A x^2 + B x + C = 0
    A = 0.5 / s1 ** 2 - 0.5 / s2 ** 2
    B = -m1 / s1 ** 2 + m2 / s2 ** 2
    C = 0.5 * m1 ** 2 / s1 ** 2 - 0.5 * m2 ** 2 / s2 ** 2 + np.log(s1 / s2)
    if A == 0.0:
        roots = np.array([-C / B])
    else:
        roots = np.roots([A, B, C])
        roots = np.sort(roots[np.isreal(roots)].real)

    edges = np.concatenate(([-np.inf], roots, [np.inf]))
    F1 = stats.norm.cdf(edges, loc=m1, scale=s1)
    F2 = stats.norm.cdf(edges, loc=m2, scale=s2)
    return float(0.5 * np.abs(np.diff(F1) - np.diff(F2)).sum())
