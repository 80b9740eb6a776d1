# core/aco.py

import logging
import numpy as np
from typing import Dict, List, Optional, Sequence, Tuple, Union

from core.models import (
    AcoConfig, AcoState, AcoDiagnostics, EmaBuffer, EmpiricalMeasure, LinearMap,
    LyapunovReport, Trajectory
)
from core.measures import uniform_measure
from core.diffusion import Denoiser, cosine_schedule, ddim_trajectory, trajectory_from_states
from core.ot import adaptive_epsilon, cost_matrix, sinkhorn, barycentric_projection
from core.wgf import w2_to, EXACT
from core.workers import map_threads, shard_sizes
from core.rng import RngStream

log = logging.getLogger(__name__)

TargetSource = Union[EmaBuffer, EmpiricalMeasure]

# buffer target weights below this are dropped before renormalizing
EMA_PRUNE = 1e-15


# ---------------- schedules ----------------

def lr_schedule(k: int, eta0: float, k_warm: int) -> float:
    """eta0 * min(1, sqrt(k_warm / k)); k = 0 maps to eta0."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return float(eta0)
    return float(eta0 * min(1.0, np.sqrt(k_warm / k)))


# ---------------- inverse-process alignment ----------------

def inverse_alignment(c, z0, t_inv: LinearMap, alpha: float) -> Tuple[float, np.ndarray]:
    """
    phi(c) = |c - t_inv(z0)|^2 + alpha * |d t_inv / dz|_F^2 and its c-gradient.
    The Jacobian term is constant in c for a linear map.
    """
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    mapped = np.atleast_1d(t_inv(np.atleast_1d(np.asarray(z0, dtype=np.float64))))
    if mapped.shape != c.shape:
        raise ValueError(f"condition shape {c.shape} != mapped latent shape {mapped.shape}")
    r = c - mapped
    return float(r @ r + alpha * t_inv.frobenius_sq), 2.0 * r


def _alignment_batch(C: np.ndarray, Z0: np.ndarray, t_inv: LinearMap, alpha: float):
    R = C - t_inv(Z0)
    return np.sum(R ** 2, axis=1) + alpha * t_inv.frobenius_sq, 2.0 * R


# ---------------- EMA target buffer ----------------

def _merge(points: np.ndarray, weights: np.ndarray) -> EmpiricalMeasure:
    keep = weights > EMA_PRUNE
    points, weights = points[keep], weights[keep]
    merged: Dict[bytes, int] = {}
    pts: List[np.ndarray] = []
    ws: List[float] = []
    for p, w in zip(points, weights):
        key = p.tobytes()
        if key in merged:
            ws[merged[key]] += float(w)
        else:
            merged[key] = len(pts)
            pts.append(p)
            ws.append(float(w))
    w = np.array(ws)
    return EmpiricalMeasure(points=np.array(pts), weights=w / w.sum())


def ema_update(buf: EmaBuffer, new_latents: Sequence) -> EmaBuffer:
    """
    Appends latents (oldest evicted past capacity), then
    target <- (1 - nu) * target + nu * uniform(buffer), duplicates merged.
    """
    new = [np.atleast_1d(np.asarray(z, dtype=np.float64)).ravel() for z in new_latents]
    latents = (tuple(buf.latents) + tuple(new))[-buf.capacity:]
    if not latents:
        return buf
    pts = np.array(latents)
    uni_w = np.full(len(latents), buf.nu / len(latents))
    if buf.target is None or buf.nu >= 1.0:
        target = _merge(pts, np.full(len(latents), 1.0 / len(latents)))
    else:
        if buf.target.d != pts.shape[1]:
            raise ValueError("new latents do not match the buffer dimension")
        target = _merge(np.vstack([buf.target.points, pts]),
                        np.concatenate([(1.0 - buf.nu) * buf.target.weights, uni_w]))
    return EmaBuffer(capacity=buf.capacity, nu=buf.nu, latents=latents, target=target)


# ---------------- the refinement loop ----------------

def _reference(target: EmpiricalMeasure, n: int, rng: RngStream) -> EmpiricalMeasure:
    """Full target when it fits the batch, otherwise a weighted draw without replacement."""
    batch = min(target.size, n)
    if batch == target.size:
        return target
    idx = np.sort(rng.choice(target.size, batch, replace=False, p=target.weights))
    return uniform_measure(target.points[idx])


def _mapped(measure: EmpiricalMeasure, t_inv: LinearMap) -> EmpiricalMeasure:
    return EmpiricalMeasure(points=t_inv(measure.points), weights=measure.weights)


def _run_trajectories(sched, denoiser: Denoiser, C: np.ndarray, ZT: np.ndarray, n_shards: int) -> Trajectory:
    if n_shards <= 1:
        return ddim_trajectory(sched, denoiser, C, ZT)
    sizes = shard_sizes(C.shape[0], n_shards)
    bounds = np.cumsum([0] + sizes)
    parts = map_threads(lambda i: ddim_trajectory(sched, denoiser, C[bounds[i]:bounds[i + 1]],
                                                  ZT[bounds[i]:bounds[i + 1]]), len(sizes))
    states = [np.vstack([p.states[t] for p in parts]) for t in range(sched.T + 1)]
    return trajectory_from_states(states)


def aco_run(cfg: AcoConfig, c0: EmpiricalMeasure, denoiser: Denoiser, t_inv: LinearMap,
            target_source: TargetSource, rng: RngStream) -> AcoState:
    """
    K outer iterations of: DDIM trajectory under c, composite-cost Sinkhorn
    against reference latents, OT + alignment gradient, per-particle clipping,
    c <- c - eta_k * grad. Particle m's condition generates latent m.
    Sinkhorn non-convergence is logged per iteration; only non-finite values abort.
    """
    if c0.size < 1:
        raise ValueError("c0 must not be empty")
    if t_inv.out_dim != c0.d:
        raise ValueError("t_inv output dimension must match the condition dimension")
    if cfg.K == 0:
        return AcoState(conditions=c0, latents=None, diagnostics=(),
                        buffer=target_source if isinstance(target_source, EmaBuffer) else None)

    sched = cosine_schedule(cfg.T)
    n = c0.size
    weights = c0.weights
    d_z = t_inv.in_dim
    ZT = rng.normal((n, d_z))   # one fixed start latent per particle
    buffer = target_source if isinstance(target_source, EmaBuffer) else None
    fixed = target_source if isinstance(target_source, EmpiricalMeasure) else None
    if fixed is not None and fixed.d != d_z:
        raise ValueError("target latent dimension must match t_inv input dimension")

    C = c0.points.copy()
    traj = None
    diags: List[AcoDiagnostics] = []
    for k in range(cfg.K):
        eps = adaptive_epsilon(k, cfg.K, cfg.eps_min, cfg.eps_max)
        eta = lr_schedule(k, cfg.eta0, cfg.k_warm)

        traj = _run_trajectories(sched, denoiser, C, ZT, cfg.n_shards)
        Z0 = np.asarray(traj.final)
        if not np.all(np.isfinite(Z0)):
            raise FloatingPointError(f"non-finite latents at iteration {k}")

        if buffer is not None:
            buffer = ema_update(buffer, list(Z0))
            target = buffer.target
        else:
            target = fixed
        ref = _reference(target, n, rng)

        z_meas = EmpiricalMeasure(points=Z0, weights=weights)
        c_meas = EmpiricalMeasure(points=C, weights=weights)
        cost = cost_matrix(z_meas, ref, c=c_meas, t_inv=t_inv, lam=cfg.lambda_cost)
        plan = sinkhorn(cost, weights, ref.weights, eps, max_iters=cfg.K_sink, tol=cfg.sinkhorn_tol)
        if not plan.converged:
            log.warning("iteration %d: Sinkhorn not converged (col err %.3g)", k, plan.marginal_errors[1])

        # row-mass normalized: (1/a_m) sum_n gamma_mn dC_mn/dc_m
        b = barycentric_projection(plan, t_inv(ref.points))
        grad_ot = 2.0 * cfg.lambda_cost * (C - b)
        phi, grad_align = _alignment_batch(C, Z0, t_inv, cfg.alpha)
        grad = grad_ot + cfg.lambda_reg * grad_align

        pre = np.linalg.norm(grad, axis=1)
        scale = np.where(pre > cfg.clip_tau, cfg.clip_tau / np.where(pre > 0.0, pre, 1.0), 1.0)
        grad = grad * scale[:, None]
        post = np.linalg.norm(grad, axis=1)

        C_next = C - eta * grad
        if not np.all(np.isfinite(C_next)):
            raise FloatingPointError(f"non-finite conditions at iteration {k}")

        policy = EXACT if c0.d == 1 else eps
        mapped_target = _mapped(target, t_inv)
        diags.append(AcoDiagnostics(
            k=k,
            epsilon=eps,
            eta=eta,
            ot_loss=plan.transport_cost,
            reg_loss=float(weights @ phi),
            grad_norm_preclip=float(pre.max()),
            grad_norm_postclip=float(post.max()),
            w2_to_target=w2_to(EmpiricalMeasure(points=C_next, weights=weights), mapped_target, policy),
            latent_w2=w2_to(z_meas, target, EXACT if d_z == 1 else eps),
            phi_mean=float(weights @ phi),
            sinkhorn_converged=plan.converged,
        ))
        log.debug("aco k=%d eps=%.4g eta=%.4g W2=%.6g", k, eps, eta, diags[-1].w2_to_target)
        C = C_next

    return AcoState(conditions=EmpiricalMeasure(points=C, weights=weights), latents=traj,
                    diagnostics=tuple(diags), buffer=buffer)


def lyapunov_trace(state: AcoState, lambda_reg: float, slack: float = 0.0,
                   tol: float = 1e-9) -> LyapunovReport:
    """V_k = W2(latents_k, target) + lambda_reg * E[phi(c_k)]; counts rises above tol + slack."""
    if state.iterations < 1:
        raise ValueError("lyapunov_trace needs at least one iteration")
    values = tuple((d.k, d.latent_w2 + lambda_reg * d.phi_mean) for d in state.diagnostics)
    v = np.array([val for _, val in values])
    increases = int(np.sum(np.diff(v) > tol + slack))
    return LyapunovReport(values=values, increases=increases, tolerance=tol + slack)
