# core/measures.py

import numpy as np
from typing import Tuple
from core.models import EmpiricalMeasure, GaussianJoint


def uniform_measure(points) -> EmpiricalMeasure:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    k = pts.shape[0]
    if k < 1:
        raise ValueError("uniform_measure needs at least one point")
    return EmpiricalMeasure(points=pts, weights=np.full(k, 1.0 / k))


def dirac(point) -> EmpiricalMeasure:
    return uniform_measure(np.atleast_2d(np.asarray(point, dtype=np.float64)))


def second_moment(m: EmpiricalMeasure) -> float:
    return float(m.weights @ np.einsum("ij,ij->i", m.points, m.points))


def gaussian_conditional(j: GaussianJoint, c) -> Tuple[np.ndarray, float]:
    """
    Mean and variance of x | c.
    c may be a scalar or an array; the mean broadcasts, the variance does not depend on c.
    """
    mean = j.mu_x + j.slope * (np.asarray(c, dtype=np.float64) - j.mu_c)
    return (float(mean) if np.ndim(mean) == 0 else mean), j.cond_var


def gaussian_log_density(j: GaussianJoint, x, c) -> np.ndarray:
    """log p(x | c)."""
    mean, var = gaussian_conditional(j, c)
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * np.log(2.0 * np.pi * var) - 0.5 * (x - mean) ** 2 / var
