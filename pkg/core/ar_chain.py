# core/ar_chain.py

import logging
import numpy as np
from typing import Callable, Optional, Tuple, Union

from core.models import (
    ArModel, CompanionMatrix, SubspaceSpec, GaussianJoint, GaussianLaw,
    ErgodicityReport, GradientDecayReport, ExtraneousEnergy, RegularityWitness,
    LogLinearFit, companion_layout
)
from core.measures import gaussian_conditional, uniform_measure
from core.gaussian_lab import conditional_score
from core.analysis import (
    histogram_tv, histogram_noise_floor, gaussian_tv, log_linear_fit, fit_geometric_envelope
)
from core.ot import sinkhorn_divergence
from core.workers import run_sharded_concat
from core.rng import RngStream
from core.constants import TV_BINS, DEFAULT_SHARDS, DEFAULT_SINKHORN_TOL

log = logging.getLogger(__name__)

InitialLaw = Union[GaussianLaw, float]


# ---------------- state space ----------------

def companion(model: ArModel) -> CompanionMatrix:
    """
    Companion layout: first row = coeffs, ones on the subdiagonal.
    The spectral radius comes from the full eigen-decomposition, which also
    covers complex-conjugate dominant pairs.
    """
    A = companion_layout(model.coeffs)
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    if rho >= 1.0:
        raise ValueError(f"companion spectral radius {rho:.6g} >= 1")
    A.setflags(write=False)
    return CompanionMatrix(matrix=A, spectral_radius=rho)


def _initial_state(model: ArModel, c0) -> np.ndarray:
    """[c_0, c_-1, ..., c_-(p-1)]; missing lags are zero."""
    c0 = np.atleast_1d(np.asarray(c0, dtype=np.float64)).ravel()
    if c0.size > model.order:
        raise ValueError("c0 carries more lags than the model order")
    state = np.zeros(model.order)
    state[:c0.size] = c0
    return state


def simulate(model: ArModel, c0, n: int, rng: Optional[RngStream] = None,
             noise: Optional[np.ndarray] = None) -> np.ndarray:
    """
    c_{i+1} = sum_j a_j c_{i-j} + eps_{i+1}; returns c_0 ... c_n.
    `noise` overrides the N(0, sigma^2) draws (length n, already scaled).
    """
    if n < 1:
        raise ValueError("simulate needs n >= 1")
    if noise is None:
        if rng is None:
            if model.noise_std > 0.0:
                raise ValueError("simulate needs rng when noise_std > 0")
            noise = np.zeros(n)
        else:
            noise = model.noise_std * rng.normal(n)
    noise = np.asarray(noise, dtype=np.float64).ravel()
    if noise.size != n:
        raise ValueError("noise must have length n")

    a = np.asarray(model.coeffs)
    hist = list(_initial_state(model, c0))   # most recent first
    out = np.empty(n + 1)
    out[0] = hist[0]
    for i in range(n):
        nxt = float(np.dot(a, hist)) + noise[i]
        hist = [nxt] + hist[:-1]
        out[i + 1] = nxt
    return out


def simulate_companion(cm: CompanionMatrix, state0, noise: np.ndarray) -> np.ndarray:
    """Stacked-state recursion s_{i+1} = A s_i + e_1 eps; returns the first component."""
    A = cm.matrix
    s = np.asarray(state0, dtype=np.float64).copy()
    out = [s[0]]
    for eps in np.asarray(noise, dtype=np.float64).ravel():
        s = A @ s
        s[0] += eps
        out.append(s[0])
    return np.array(out)


def _draw_initial(law: InitialLaw, n_paths: int, rng: RngStream) -> np.ndarray:
    if isinstance(law, GaussianLaw):
        return law.mean + law.std * rng.normal(n_paths)
    return np.full(n_paths, float(law))


def simulate_ensemble(model: ArModel, init: InitialLaw, n_steps: int, n_paths: int,
                      rng: RngStream, n_shards: int = DEFAULT_SHARDS) -> np.ndarray:
    """
    (n_paths, n_steps + 1) array of c_0 ... c_n per path.
    c_0 ~ init, earlier lags zero; paths are sharded over split streams.
    """
    A = companion(model).matrix
    p = model.order

    def shard(count: int, stream: RngStream) -> np.ndarray:
        S = np.zeros((count, p))
        S[:, 0] = _draw_initial(init, count, stream)
        out = np.empty((count, n_steps + 1))
        out[:, 0] = S[:, 0]
        for i in range(n_steps):
            S = S @ A.T
            S[:, 0] += model.noise_std * stream.normal(count)
            out[:, i + 1] = S[:, 0]
        return out

    return run_sharded_concat(shard, n_paths, rng, n_shards)


def gaussian_law_path(model: ArModel, init: InitialLaw, n_steps: int) -> Tuple[np.ndarray, np.ndarray]:
    """Exact mean and std of c_i for i = 0..n_steps (the chain is linear-Gaussian)."""
    A = companion(model).matrix
    p = model.order
    m = np.zeros(p)
    P = np.zeros((p, p))
    if isinstance(init, GaussianLaw):
        m[0] = init.mean
        P[0, 0] = init.std ** 2
    else:
        m[0] = float(init)
    Q = np.zeros((p, p))
    Q[0, 0] = model.noise_std ** 2
    means, stds = [m[0]], [np.sqrt(P[0, 0])]
    for _ in range(n_steps):
        m = A @ m
        P = A @ P @ A.T + Q
        means.append(m[0])
        stds.append(np.sqrt(max(P[0, 0], 0.0)))
    return np.array(means), np.array(stds)


# ---------------- ergodicity ----------------

def _fit_or_none(steps, values, lo: float, hi: float) -> Optional[LogLinearFit]:
    keep = (values > lo) & (values < hi)
    if int(keep.sum()) < 2:
        return None
    return log_linear_fit(steps[keep], values[keep], floor=lo)


def ergodicity_check(model: ArModel, mu1: InitialLaw, mu2: InitialLaw, n_steps: int,
                     n_paths: int, rng: RngStream, bins: int = TV_BINS,
                     fit_below: float = 0.5, n_shards: int = DEFAULT_SHARDS) -> ErgodicityReport:
    """
    Histogram TV between the two evolving laws, plus the exact Gaussian-law TV.
    Log-linear fits use the geometric regime: TV under `fit_below` and above
    the noise floor (histogram) or 1e-12 (exact).
    """
    if n_paths < 1000:
        raise ValueError("ergodicity_check needs n_paths >= 1000")
    r1, r2 = rng.split(2)
    paths1 = simulate_ensemble(model, mu1, n_steps, n_paths, r1, n_shards)
    paths2 = simulate_ensemble(model, mu2, n_steps, n_paths, r2, n_shards)

    steps = np.arange(n_steps + 1)
    tv = np.array([histogram_tv(paths1[:, i], paths2[:, i], bins) for i in steps])
    m1, s1 = gaussian_law_path(model, mu1, n_steps)
    m2, s2 = gaussian_law_path(model, mu2, n_steps)
    tv_exact = np.array([gaussian_tv(m1[i], s1[i], m2[i], s2[i]) for i in steps])

    floor = histogram_noise_floor(n_paths, bins)
    fit = _fit_or_none(steps, tv, 2.0 * floor, fit_below)
    exact_fit = _fit_or_none(steps, tv_exact, 1e-12, fit_below)
    if fit is None:
        log.info("histogram TV never leaves the noise floor (%.3g); no histogram fit", floor)
    return ErgodicityReport(steps=steps, tv=tv, tv_exact=tv_exact, noise_floor=floor,
                            fit=fit, exact_fit=exact_fit)


# ---------------- gradient-norm decay ----------------

def gradient_norm_decay(model: ArModel, joint: GaussianJoint, x_grid, n_iters: int, n_paths: int,
                        rng: RngStream, c0: Optional[float] = None,
                        n_shards: int = DEFAULT_SHARDS) -> GradientDecayReport:
    """
    The chain runs on the deviation c_i - mu_c; each c_i conditions the joint.
    Per iteration: sup over x_grid of |d/dx log p(x | c_i)|, averaged (and
    maxed) over paths, then fitted with M * beta**i + m.
    """
    grid = np.asarray(x_grid, dtype=np.float64).ravel()
    if grid.size < 1:
        raise ValueError("x_grid must not be empty")
    if n_iters < 2:
        raise ValueError("gradient_norm_decay needs n_iters >= 2")
    start = joint.mu_c + 10.0 if c0 is None else float(c0)

    dev = simulate_ensemble(model, start - joint.mu_c, n_iters, n_paths, rng, n_shards)
    c = joint.mu_c + dev                                          # (paths, iters+1)
    # the score is affine in x, so the grid sup sits at an endpoint
    sup = np.maximum(np.abs(conditional_score(joint, grid.min(), c)),
                     np.abs(conditional_score(joint, grid.max(), c)))

    i = np.arange(n_iters + 1)
    mean_norm = sup.mean(axis=0)
    max_norm = sup.max(axis=0)
    fit = fit_geometric_envelope(i, mean_norm)
    envelope = fit_geometric_envelope(i, max_norm)
    return GradientDecayReport(i=i, mean_norm=mean_norm, max_norm=max_norm,
                               fit=fit, envelope_fit=envelope)


# ---------------- extraneous information ----------------

def project_extraneous(c, sub: SubspaceSpec) -> Tuple[np.ndarray, np.ndarray]:
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != sub.d:
        raise ValueError(f"condition dimension {c.shape[-1]} != subspace ambient dimension {sub.d}")
    ideal = (c @ sub.basis.T) @ sub.basis
    return ideal, c - ideal


def extraneous_energy(transition: Callable[[np.ndarray], np.ndarray], noise_cov,
                      sub: SubspaceSpec, c_prev_samples) -> ExtraneousEnergy:
    """
    E|(I - pi) Phi(c_prev)|^2 plus the noise trace, both as written (full trace)
    and restricted to the complement of the subspace.
    """
    samples = np.atleast_2d(np.asarray(c_prev_samples, dtype=np.float64))
    if samples.shape[0] < 1:
        raise ValueError("c_prev_samples must not be empty")
    S = np.atleast_2d(np.asarray(noise_cov, dtype=np.float64))
    if S.shape != (sub.d, sub.d):
        raise ValueError("noise_cov must be d x d")
    mapped = np.array([np.asarray(transition(c), dtype=np.float64).ravel() for c in samples])
    _, eta = project_extraneous(mapped, sub)
    Q = np.eye(sub.d) - sub.projector
    return ExtraneousEnergy(
        propagated=float(np.mean(np.sum(eta ** 2, axis=1))),
        noise_trace=float(np.trace(S)),
        noise_trace_projected=float(np.trace(Q @ S @ Q)),
    )


def inconsistency_divergence(j: GaussianJoint, c: float, c_star: float, n: int,
                             epsilon: float, rng: RngStream,
                             tol: float = DEFAULT_SINKHORN_TOL, max_iters: int = 2000) -> float:
    """Sinkhorn divergence between samples of p(x | c) and p(x | c*)."""
    m, v = gaussian_conditional(j, c)
    m_star, _ = gaussian_conditional(j, c_star)
    e = rng.normal((2, n))
    p = uniform_measure(m + np.sqrt(v) * e[0])
    q = uniform_measure(m_star + np.sqrt(v) * e[1])
    return sinkhorn_divergence(p, q, epsilon, max_iters=max_iters, tol=tol)


# ---------------- regularity ----------------

def conditional_density(j: GaussianJoint, x, c):
    mean, var = gaussian_conditional(j, c)
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def regularity_witnesses(j: GaussianJoint, x_grid, n_pairs: int, rng: RngStream,
                         c_range: Tuple[float, float] = (-3.0, 3.0)) -> RegularityWitness:
    """
    On the compact x_grid x c_range: min density, max |d/dx p|, max p, and the
    largest Lipschitz ratio in c of d/dx p(. | c) over random pairs.
    """
    x = np.asarray(x_grid, dtype=np.float64).ravel()
    lo, hi = c_range
    c_grid = np.linspace(lo, hi, x.size)
    P = conditional_density(j, x[:, None], c_grid[None, :])
    dP = P * conditional_score(j, x[:, None], c_grid[None, :])

    u = rng.uniform((2, n_pairs))
    c1 = lo + (hi - lo) * u[0]
    c2 = lo + (hi - lo) * u[1]
    keep = np.abs(c1 - c2) > 1e-12
    c1, c2 = c1[keep], c2[keep]

    def dens_grad(cs):
        p = conditional_density(j, x[:, None], cs[None, :])
        return p * conditional_score(j, x[:, None], cs[None, :])

    ratio = np.abs(dens_grad(c1) - dens_grad(c2)).max(axis=0) / np.abs(c1 - c2)
    return RegularityWitness(
        density_min=float(P.min()),
        lipschitz_max=float(ratio.max()) if ratio.size else 0.0,
        grad_bound=float(np.abs(dP).max()),
        density_bound=float(P.max()),
    )
