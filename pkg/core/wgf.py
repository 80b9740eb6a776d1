# core/wgf.py

import logging
import numpy as np
from typing import Callable, Sequence, Union

from core.models import EmpiricalMeasure, EnergyFunctional, Potential, FlowRecord, FlowTrace
from core.ot import (
    cost_matrix, sinkhorn, regularized_cost, barycentric_projection,
    monotone_plan_1d, w2_exact_1d
)
from core.analysis import log_linear_fit
from core.constants import FIT_PLATEAU

log = logging.getLogger(__name__)

# constant eps, "exact" (1-D monotone coupling) or k -> eps
EpsilonPolicy = Union[float, str, Callable[[int], float]]

EXACT = "exact"


def quadratic_potential(center) -> Potential:
    center = np.atleast_1d(np.asarray(center, dtype=np.float64))

    def value(c):
        c = np.atleast_2d(c)
        return np.sum((c - center) ** 2, axis=1)

    def grad(c):
        return 2.0 * (np.atleast_2d(c) - center)

    return Potential(value=value, grad=grad, descriptor=f"quadratic(center={center.tolist()!r})")


def epsilon_at(policy: EpsilonPolicy, k: int) -> Union[float, str]:
    if isinstance(policy, str):
        if policy != EXACT:
            raise ValueError(f"unknown epsilon policy {policy!r}")
        return EXACT
    eps = float(policy(k)) if callable(policy) else float(policy)
    if not eps > 0.0:
        raise ValueError("epsilon must be positive")
    return eps


def _phi_term(F: EnergyFunctional, P: EmpiricalMeasure) -> float:
    if F.lambda_reg == 0.0 or F.phi is None:
        return 0.0
    return F.lambda_reg * float(P.weights @ F.phi.value(P.points))


def _plan(F: EnergyFunctional, P: EmpiricalMeasure, epsilon: float, max_iters: int, tol: float):
    return sinkhorn(cost_matrix(P, F.target), P.weights, F.target.weights, epsilon,
                    max_iters=max_iters, tol=tol)


def energy(F: EnergyFunctional, P: EmpiricalMeasure, epsilon: Union[float, str],
           max_iters: int = 5000, tol: float = 1e-9) -> float:
    """1/2 W2^2(P, target) + lambda * E_P[phi]; entropic W2^2 unless epsilon == "exact"."""
    if epsilon == EXACT:
        w2sq = w2_exact_1d(P, F.target) ** 2
    else:
        w2sq = regularized_cost(_plan(F, P, float(epsilon), max_iters, tol))
    return 0.5 * w2sq + _phi_term(F, P)


def _barycenters(F: EnergyFunctional, P: EmpiricalMeasure, epsilon, max_iters: int, tol: float) -> np.ndarray:
    if epsilon == EXACT:
        Y = F.target.points
        out = np.zeros_like(P.points)
        for i, j, mass in monotone_plan_1d(P, F.target):
            out[i] += mass * Y[j]
        return out / P.weights[:, None]
    return barycentric_projection(_plan(F, P, float(epsilon), max_iters, tol), F.target.points)


def jko_step(F: EnergyFunctional, P_k: EmpiricalMeasure, eta_k: float, epsilon: Union[float, str],
             max_iters: int = 5000, tol: float = 1e-9) -> EmpiricalMeasure:
    """c_i <- c_i - eta * (2 (c_i - b_i) + lambda * grad phi(c_i)); weights unchanged."""
    if not eta_k > 0.0:
        raise ValueError("eta_k must be positive")
    if P_k.d != F.target.d:
        raise ValueError("measure and target dimensions differ")
    c = P_k.points
    grad = 2.0 * (c - _barycenters(F, P_k, epsilon, max_iters, tol))
    if F.lambda_reg > 0.0:
        grad = grad + F.lambda_reg * F.phi.grad(c)
    return EmpiricalMeasure(points=c - eta_k * grad, weights=P_k.weights)


def w2_to(P: EmpiricalMeasure, Q: EmpiricalMeasure, epsilon: Union[float, str],
          max_iters: int = 5000, tol: float = 1e-9) -> float:
    """Exact W2 in 1-D, otherwise sqrt of <gamma, C> under the entropic plan."""
    if P.d == 1:
        return w2_exact_1d(P, Q)
    eps = epsilon
    if eps == EXACT:
        eps = 0.01 * float(np.median(cost_matrix(P, Q).entries)) or 1e-3
    plan = sinkhorn(cost_matrix(P, Q), P.weights, Q.weights, float(eps), max_iters=max_iters, tol=tol)
    return float(np.sqrt(max(plan.transport_cost, 0.0)))


def run_flow(F: EnergyFunctional, P0: EmpiricalMeasure, schedule: Sequence[float],
             epsilon: EpsilonPolicy, fit_window: int = 0,
             max_iters: int = 5000, tol: float = 1e-9) -> FlowTrace:
    """
    Iterates jko_step over the step-size schedule, recording W2 to the target
    and the energy before the first step and after every step.
    rho_hat is exp(slope) of log W2 over the first fit_window steps (all if 0).
    """
    etas = [float(e) for e in schedule]
    if not etas:
        raise ValueError("schedule must not be empty")
    P = P0
    eps0 = epsilon_at(epsilon, 0)
    records = [FlowRecord(k=0, w2_to_target=w2_to(P, F.target, eps0, max_iters, tol),
                          energy=energy(F, P, eps0, max_iters, tol), step_size=0.0)]
    for k, eta in enumerate(etas):
        eps = epsilon_at(epsilon, k)
        P = jko_step(F, P, eta, eps, max_iters, tol)
        if not np.all(np.isfinite(P.points)):
            raise FloatingPointError(f"non-finite particles after step {k + 1}")
        eps_next = epsilon_at(epsilon, k + 1)
        records.append(FlowRecord(k=k + 1, w2_to_target=w2_to(P, F.target, eps_next, max_iters, tol),
                                  energy=energy(F, P, eps_next, max_iters, tol), step_size=eta))
        log.debug("flow k=%d W2=%.6g", k + 1, records[-1].w2_to_target)

    window = records if fit_window <= 0 else records[:fit_window + 1]
    ks = np.array([r.k for r in window], dtype=np.float64)
    w2 = np.array([r.w2_to_target for r in window])
    try:
        fit = log_linear_fit(ks, w2, floor=FIT_PLATEAU)
        rho, r2 = fit.rate, fit.r2
    except ValueError:
        log.info("W2 trace too short or flat for a contraction fit")
        rho, r2 = float("nan"), 0.0
    return FlowTrace(records=tuple(records), rho_hat=rho, r2=r2, final=P)
