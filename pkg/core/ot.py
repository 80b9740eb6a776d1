# core/ot.py

import logging
import numpy as np
from typing import Callable, Iterator, List, Optional, Sequence, Tuple
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, xlogy

from core.models import CostMatrix, TransportPlan, EmpiricalMeasure, SinkhornDecayReport
from core.analysis import log_linear_fit
from core.constants import DEFAULT_K_SINK, DEFAULT_SINKHORN_TOL, FIT_PLATEAU

log = logging.getLogger(__name__)


# ---------------- costs ----------------

def cost_matrix(z: EmpiricalMeasure, z_star: EmpiricalMeasure, c: Optional[EmpiricalMeasure] = None,
                t_inv: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                lam: float = 0.0) -> CostMatrix:
    """
    C_mn = |z_m - z*_n|^2 + lam * |c_m - t_inv(z*_n)|^2.
    Without c this is the plain squared-Euclidean cost.
    """
    if z.d != z_star.d:
        raise ValueError(f"latent dimensions differ ({z.d} vs {z_star.d})")
    C = cdist(z.points, z_star.points, "sqeuclidean")
    if c is None:
        return CostMatrix(entries=C, provenance="sqeuclidean")
    if t_inv is None:
        raise ValueError("condition term needs t_inv")
    if lam < 0.0:
        raise ValueError("lambda must be >= 0")
    if c.size != z.size:
        raise ValueError(f"particle counts differ ({c.size} conditions vs {z.size} latents)")
    mapped = np.atleast_2d(np.asarray(t_inv(z_star.points), dtype=np.float64))
    if mapped.shape != (z_star.size, c.d):
        raise ValueError("t_inv output does not match the condition dimension")
    C = C + lam * cdist(c.points, mapped, "sqeuclidean")
    return CostMatrix(entries=C, provenance=f"composite(lambda={lam!r})")


# ---------------- Sinkhorn ----------------

def adaptive_epsilon(k: int, K: int, eps_min: float, eps_max: float) -> float:
    """eps_max - (eps_max - eps_min) * k / K; K = 0 stays at eps_max."""
    if not 0.0 < eps_min <= eps_max:
        raise ValueError("need 0 < eps_min <= eps_max")
    if not 0 <= k <= max(K, 0):
        raise ValueError(f"k must lie in [0, K] (k={k}, K={K})")
    if K == 0:
        return float(eps_max)
    if k == K:
        return float(eps_min)
    return float(eps_max - (eps_max - eps_min) * k / K)


def _check_weights(w, n: int, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.shape != (n,):
        raise ValueError(f"{name} must have {n} entries")
    if np.any(w < 0.0) or abs(float(w.sum()) - 1.0) > 1e-9:
        raise ValueError(f"{name} must be a probability vector")
    return w


def _iterate(log_k: np.ndarray, log_a: np.ndarray, log_b: np.ndarray) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Log-domain scaling updates; yields (log_u, log_v) after each full v-then-u sweep."""
    f = np.zeros(log_a.size)
    while True:
        g = log_b - logsumexp(log_k + f[:, None], axis=0)
        f = log_a - logsumexp(log_k + g[None, :], axis=1)
        yield f, g


def _embed(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.full(mask.size, -np.inf)
    out[mask] = values
    return out


def _plan(cost: CostMatrix, a, b, epsilon, f, g, iters, converged) -> TransportPlan:
    C = cost.entries
    gamma = np.exp(f[:, None] - C / epsilon + g[None, :])
    errs = (float(np.abs(gamma.sum(axis=1) - a).sum()), float(np.abs(gamma.sum(axis=0) - b).sum()))
    return TransportPlan(gamma=gamma, log_u=f, log_v=g, epsilon=float(epsilon), iterations_used=iters,
                         marginal_errors=errs, converged=converged, cost=cost, a=a, b=b)


def sinkhorn(cost: CostMatrix, a, b, epsilon: float, max_iters: int = DEFAULT_K_SINK,
             tol: float = DEFAULT_SINKHORN_TOL) -> TransportPlan:
    """
    Entropic OT in the log domain. Stops once the column-marginal L1 error is
    below tol; rows are exact after every sweep. A plan is always returned,
    non-convergence is flagged and logged.
    """
    if not epsilon > 0.0:
        raise ValueError("epsilon must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    m, n = cost.shape
    a = _check_weights(a, m, "a")
    b = _check_weights(b, n, "b")
    ia, ib = a > 0.0, b > 0.0
    C = cost.entries[np.ix_(ia, ib)]

    # a Dirac on either side admits exactly one coupling
    if ia.sum() == 1 or ib.sum() == 1:
        if ia.sum() == 1:
            f = np.zeros(1)
            g = np.log(b[ib]) + C[0] / epsilon
        else:
            g = np.zeros(1)
            f = np.log(a[ia]) + C[:, 0] / epsilon
        return _plan(cost, a, b, epsilon, _embed(f, ia), _embed(g, ib), 0, True)

    log_k = -C / epsilon
    la, lb = np.log(a[ia]), np.log(b[ib])
    bs = b[ib]
    converged = False
    it = 0
    for it, (f, g) in enumerate(_iterate(log_k, la, lb), start=1):
        col = np.exp(log_k + f[:, None] + g[None, :]).sum(axis=0)
        if float(np.abs(col - bs).sum()) < tol:
            converged = True
            break
        if it >= max_iters:
            break
    if not converged:
        log.warning("Sinkhorn did not converge in %d iterations (eps=%.4g, tol=%.1e)", it, epsilon, tol)
    return _plan(cost, a, b, epsilon, _embed(f, ia), _embed(g, ib), it, converged)


def transport_cost(plan: TransportPlan) -> float:
    return plan.transport_cost


def regularized_cost(plan: TransportPlan) -> float:
    """<gamma, C> + eps * KL(gamma | a x b)."""
    g = plan.gamma
    kl = float(np.sum(xlogy(g, g)) - np.sum(xlogy(g, np.outer(plan.a, plan.b))))
    return plan.transport_cost + plan.epsilon * kl


def barycentric_projection(plan: TransportPlan, targets) -> np.ndarray:
    """Row-wise sum_n gamma_mn y_n / sum_n gamma_mn; empty rows fall back to the target mean."""
    Y = np.asarray(targets, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    mass = plan.gamma.sum(axis=1)
    out = plan.gamma @ Y
    empty = mass <= 0.0
    out[~empty] /= mass[~empty, None]
    if np.any(empty):
        out[empty] = plan.b @ Y
    return out


# ---------------- divergences ----------------

def entropic_ot(p: EmpiricalMeasure, q: EmpiricalMeasure, epsilon: float,
                max_iters: int = 5000, tol: float = 1e-9) -> Tuple[float, TransportPlan]:
    plan = sinkhorn(cost_matrix(p, q), p.weights, q.weights, epsilon, max_iters=max_iters, tol=tol)
    return regularized_cost(plan), plan


def sinkhorn_divergence(p: EmpiricalMeasure, q: EmpiricalMeasure, epsilon: float,
                        max_iters: int = 5000, tol: float = 1e-9) -> float:
    """
    S(p, q) = 1/2 (OT(p,q) + OT(q,p)) - 1/2 (OT(p,p) + OT(q,q)).
    Both halves are written symmetrically so swapping p and q is bit-exact.
    """
    if not epsilon > 0.0:
        raise ValueError("epsilon must be positive")
    pq, plan_pq = entropic_ot(p, q, epsilon, max_iters, tol)
    qp, plan_qp = entropic_ot(q, p, epsilon, max_iters, tol)
    pp, plan_pp = entropic_ot(p, p, epsilon, max_iters, tol)
    qq, plan_qq = entropic_ot(q, q, epsilon, max_iters, tol)
    for plan in (plan_pq, plan_qp, plan_pp, plan_qq):
        if not plan.converged:
            log.warning("sinkhorn_divergence uses a non-converged plan (eps=%.4g)", epsilon)
            break
    return 0.5 * (pq + qp) - 0.5 * (pp + qq)


# ---------------- exact 1-D oracle ----------------

def monotone_plan_1d(p: EmpiricalMeasure, q: EmpiricalMeasure) -> List[Tuple[int, int, float]]:
    """North-west corner rule on sorted supports; (i, j, mass) in original indices."""
    if p.d != 1 or q.d != 1:
        raise ValueError("monotone_plan_1d needs 1-D measures")
    ip = np.argsort(p.points[:, 0], kind="stable")
    iq = np.argsort(q.points[:, 0], kind="stable")
    wp = p.weights[ip].copy()
    wq = q.weights[iq].copy()
    out = []
    i = j = 0
    while i < wp.size and j < wq.size:
        mass = min(wp[i], wq[j])
        if mass > 0.0:
            out.append((int(ip[i]), int(iq[j]), float(mass)))
        wp[i] -= mass
        wq[j] -= mass
        # advance whichever side is exhausted; rounding leftovers go with it
        if wp[i] <= wq[j]:
            i += 1
        else:
            j += 1
    return out


def w2_exact_1d(p: EmpiricalMeasure, q: EmpiricalMeasure) -> float:
    if p.d != 1 or q.d != 1:
        raise ValueError("w2_exact_1d needs 1-D measures")
    x, y = p.points[:, 0], q.points[:, 0]
    total = sum(mass * (x[i] - y[j]) ** 2 for i, j, mass in monotone_plan_1d(p, q))
    return float(np.sqrt(max(total, 0.0)))


# ---------------- convergence of the scaling iterations ----------------

def sinkhorn_error_decay(cost: CostMatrix, a, b, epsilon: float, k_list: Sequence[int],
                         reference_factor: int = 10) -> SinkhornDecayReport:
    """
    Frobenius distance between the k-iteration plan and a reference plan run
    for reference_factor * max(k) iterations, plus a log-linear fit of the
    errors above the plateau.
    """
    ks = np.array(sorted(set(int(k) for k in k_list)))
    if ks.size == 0 or ks[0] < 1:
        raise ValueError("k_list must hold positive iteration counts")
    if not epsilon > 0.0:
        raise ValueError("epsilon must be positive")
    m, n = cost.shape
    a = _check_weights(a, m, "a")
    b = _check_weights(b, n, "b")
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise ValueError("sinkhorn_error_decay needs strictly positive weights")

    log_k = -cost.entries / epsilon
    n_ref = reference_factor * int(ks[-1])
    wanted = set(ks.tolist())
    snaps = {}
    for it, (f, g) in enumerate(_iterate(log_k, np.log(a), np.log(b)), start=1):
        if it in wanted:
            snaps[it] = np.exp(log_k + f[:, None] + g[None, :])
        if it >= n_ref:
            ref = np.exp(log_k + f[:, None] + g[None, :])
            break

    errors = np.array([float(np.linalg.norm(snaps[k] - ref)) for k in ks])
    try:
        fit = log_linear_fit(ks, errors, floor=FIT_PLATEAU)
    except ValueError:
        log.info("Sinkhorn errors reach the plateau too early for a rate fit (eps=%.4g)", epsilon)
        fit = None
    return SinkhornDecayReport(k=ks, errors=errors, fit=fit, epsilon=float(epsilon),
                               reference_iterations=n_ref)
