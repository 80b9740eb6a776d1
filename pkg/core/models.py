# core/models.py

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple
import json
import numpy as np

from core.constants import (
    WEIGHT_SUM_TOL, PD_DET_TOL, ORTHONORMAL_TOL, CheckStatus
)


def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


# =============================================================================
# measures
# =============================================================================
@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    points: np.ndarray    # (k, d) float64
    weights: np.ndarray   # (k,) float64

    def __post_init__(self):
        pts = _frozen_array(self.points, 2)
        w = _frozen_array(self.weights, 1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError("EmpiricalMeasure needs at least one point of dimension >= 1")
        if w.shape != (pts.shape[0],):
            raise ValueError("weights must have one entry per point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if np.any(w < 0.0):
            raise ValueError("weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1 (got {float(w.sum())!r})")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return int(self.points.shape[1])

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def to_json(self) -> str:
        return json.dumps({
            "d": self.d,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "EmpiricalMeasure":
        obj = json.loads(text)
        pts = np.array(obj["points"], dtype=np.float64).reshape(-1, int(obj["d"]))
        return cls(points=pts, weights=np.array(obj["weights"], dtype=np.float64))


@dataclass(frozen=True)
class GaussianJoint:
    """Bivariate normal over (x, c) with scalar x and c."""
    mu_x: float
    mu_c: float
    sigma_xx: float   # variance
    sigma_cc: float   # variance
    sigma_xc: float   # covariance

    def __post_init__(self):
        if not (self.sigma_xx > 0.0 and self.sigma_cc > 0.0):
            raise ValueError("sigma_xx and sigma_cc must be positive")
        if self.det <= PD_DET_TOL:
            raise ValueError(f"covariance not positive definite (det={self.det!r})")

    @property
    def det(self) -> float:
        return self.sigma_xx * self.sigma_cc - self.sigma_xc ** 2

    @property
    def slope(self) -> float:
        return self.sigma_xc / self.sigma_cc

    @property
    def cond_var(self) -> float:
        """Var(x | c); independent of c."""
        return self.sigma_xx - self.sigma_xc ** 2 / self.sigma_cc

    @property
    def cond_var_c(self) -> float:
        """Var(c | x)."""
        return self.sigma_cc - self.sigma_xc ** 2 / self.sigma_xx

    def diffused(self, alpha_bar: float) -> "GaussianJoint":
        # joint of (x_t, c) with x_t = sqrt(ab) x + sqrt(1 - ab) eps
        sa = float(np.sqrt(alpha_bar))
        return GaussianJoint(
            mu_x=sa * self.mu_x,
            mu_c=self.mu_c,
            sigma_xx=alpha_bar * self.sigma_xx + (1.0 - alpha_bar),
            sigma_cc=self.sigma_cc,
            sigma_xc=sa * self.sigma_xc,
        )


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_samples: int

    def __float__(self):
        return float(self.value)


# =============================================================================
# gaussian_lab
# =============================================================================
@dataclass(frozen=True)
class ScoreModel:
    fn: Callable[[np.ndarray, float], np.ndarray]
    descriptor: str

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=np.float64), t), dtype=np.float64)


@dataclass(frozen=True)
class LossBreakdown:
    true_score_norm: float
    learned_score_norm: float
    cross_term: float
    total: float
    std_error: float
    n_samples: int
    conditional: bool


@dataclass(frozen=True)
class BoundCheck:
    lhs: float   # unconditional loss
    rhs: float   # conditional loss
    holds: bool
    pooled_se: float
    n_samples: int


@dataclass(frozen=True)
class ControlTermReport:
    lhs: float
    lhs_std_error: float
    rhs: float                # sigma_t^2 inside the norm
    rhs_std_error: float
    rhs_unscaled: float       # sigma_t^4 cancelled
    rhs_unscaled_std_error: float
    sigma_t: float
    n_samples: int


# =============================================================================
# diffusion
# =============================================================================
@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = _frozen_array(self.betas, 1)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("NoiseSchedule needs at least one beta")
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise ValueError("every beta must lie in (0, 1)")
        ab = np.cumprod(1.0 - b)
        if np.any(np.diff(ab) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        ab.setflags(write=False)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "_alphas_bar", ab)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    @property
    def alphas_bar(self) -> np.ndarray:
        """alpha_bar_t for t = 1..T (index t-1)."""
        return self._alphas_bar

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise ValueError(f"t must be in [0, {self.T}] (got {t})")
        return float(self._alphas_bar[t - 1])

    def beta(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise ValueError(f"t must be in [1, {self.T}] (got {t})")
        return float(self.betas[t - 1])


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: Tuple[np.ndarray, ...]   # z_T ... z_0
    snr: np.ndarray                  # one entry per step, states z_{T-1} ... z_0
    noise_intensity: np.ndarray

    def __post_init__(self):
        if len(self.states) < 2:
            raise ValueError("Trajectory needs at least two states")
        if len(self.snr) != len(self.states) - 1 or len(self.noise_intensity) != len(self.states) - 1:
            raise ValueError("diagnostics must have one entry per step")

    @property
    def T(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


# =============================================================================
# ar_chain
# =============================================================================
def companion_layout(coeffs) -> np.ndarray:
    """First row = coeffs, ones on the subdiagonal, zeros elsewhere."""
    a = np.asarray(coeffs, dtype=np.float64).ravel()
    p = a.size
    A = np.zeros((p, p))
    A[0, :] = a
    if p > 1:
        A[np.arange(1, p), np.arange(p - 1)] = 1.0
    return A


@dataclass(frozen=True)
class ArModel:
    coeffs: Tuple[float, ...]
    noise_std: float

    def __post_init__(self):
        a = tuple(float(v) for v in np.ravel(self.coeffs))
        if len(a) < 1:
            raise ValueError("ArModel needs at least one coefficient")
        if not np.all(np.isfinite(a)):
            raise ValueError("coefficients must be finite")
        if max(abs(v) for v in a) >= 1.0:
            raise ValueError("max |a_j| must be < 1")
        if not self.noise_std >= 0.0:
            raise ValueError("noise_std must be >= 0")
        rho = float(np.max(np.abs(np.linalg.eigvals(companion_layout(a)))))
        if rho >= 1.0:
            raise ValueError(f"companion spectral radius {rho:.6g} >= 1 (unstable)")
        object.__setattr__(self, "coeffs", a)

    @property
    def order(self) -> int:
        return len(self.coeffs)


@dataclass(frozen=True, eq=False)
class CompanionMatrix:
    matrix: np.ndarray
    spectral_radius: float


@dataclass(frozen=True, eq=False)
class SubspaceSpec:
    basis: np.ndarray   # (K, d), orthonormal rows

    def __post_init__(self):
        B = _frozen_array(self.basis, 2)
        if B.ndim == 2 and B.shape[0] == 0:
            raise ValueError("basis must contain at least one vector")
        K, d = B.shape
        if K > d:
            raise ValueError("K must not exceed the ambient dimension")
        if np.max(np.abs(B @ B.T - np.eye(K))) > ORTHONORMAL_TOL:
            raise ValueError("basis is not orthonormal")
        object.__setattr__(self, "basis", B)

    @property
    def d(self) -> int:
        return int(self.basis.shape[1])

    @property
    def K(self) -> int:
        return int(self.basis.shape[0])

    @property
    def projector(self) -> np.ndarray:
        return self.basis.T @ self.basis

    @classmethod
    def from_vectors(cls, vectors) -> "SubspaceSpec":
        V = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        q, _ = np.linalg.qr(V.T)
        return cls(basis=q.T)


@dataclass(frozen=True)
class GaussianLaw:
    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0.0:
            raise ValueError("std must be >= 0")


@dataclass(frozen=True)
class LogLinearFit:
    rate: float
    intercept: float
    r2: float
    n_points: int


@dataclass(frozen=True)
class DecayFit:
    M: float
    beta: float
    m: float
    r2: float
    sigma_fit: float
    ci95: Dict[str, Tuple[float, float]]
    fit_failed: bool

    @property
    def passed(self) -> bool:
        return (not self.fit_failed) and 0.0 < self.beta < 1.0

    def envelope(self, i) -> np.ndarray:
        return self.M * np.power(self.beta, np.asarray(i, dtype=np.float64)) + self.m


@dataclass(frozen=True, eq=False)
class ErgodicityReport:
    steps: np.ndarray
    tv: np.ndarray            # histogram estimate
    tv_exact: np.ndarray      # Gaussian-law oracle
    noise_floor: float
    fit: Optional[LogLinearFit]
    exact_fit: Optional[LogLinearFit]

    def rows(self):
        return [(int(k), float(a), float(b)) for k, a, b in zip(self.steps, self.tv, self.tv_exact)]


@dataclass(frozen=True, eq=False)
class GradientDecayReport:
    i: np.ndarray
    mean_norm: np.ndarray
    max_norm: np.ndarray
    fit: DecayFit            # on the path-averaged norm
    envelope_fit: DecayFit   # on the max-over-paths norm

    def envelope_holds(self, n_sigma: float = 3.0, slack: float = 1e-9) -> bool:
        f = self.envelope_fit
        if f.fit_failed:
            return False
        return bool(np.all(self.max_norm <= f.envelope(self.i) + n_sigma * f.sigma_fit + slack))


@dataclass(frozen=True)
class ExtraneousEnergy:
    propagated: float
    noise_trace: float
    noise_trace_projected: float

    @property
    def total(self) -> float:
        return self.propagated + self.noise_trace

    @property
    def total_projected(self) -> float:
        return self.propagated + self.noise_trace_projected


@dataclass(frozen=True)
class RegularityWitness:
    density_min: float
    lipschitz_max: float
    grad_bound: float
    density_bound: float


# =============================================================================
# ot
# =============================================================================
@dataclass(frozen=True, eq=False)
class CostMatrix:
    entries: np.ndarray
    provenance: str = "sqeuclidean"

    def __post_init__(self):
        C = np.array(self.entries, dtype=np.float64)
        if C.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if not np.all(np.isfinite(C)):
            raise ValueError("cost entries must be finite")
        if np.any(C < 0.0):
            raise ValueError("cost entries must be non-negative")
        C.setflags(write=False)
        object.__setattr__(self, "entries", C)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True, eq=False)
class TransportPlan:
    gamma: np.ndarray
    log_u: np.ndarray
    log_v: np.ndarray
    epsilon: float
    iterations_used: int
    marginal_errors: Tuple[float, float]   # (row L1, column L1)
    converged: bool
    cost: CostMatrix
    a: np.ndarray
    b: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return np.exp(self.log_u)

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.log_v)

    @property
    def transport_cost(self) -> float:
        return float(np.sum(self.gamma * self.cost.entries))

    def to_json_dict(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "epsilon": self.epsilon,
            "iterations_used": self.iterations_used,
            "marginal_errors": list(self.marginal_errors),
            "converged": self.converged,
        }


@dataclass(frozen=True, eq=False)
class SinkhornDecayReport:
    k: np.ndarray
    errors: np.ndarray      # Frobenius distance to the reference plan
    fit: Optional[LogLinearFit]
    epsilon: float
    reference_iterations: int

    def rows(self):
        return [(int(k), float(e)) for k, e in zip(self.k, self.errors)]


# =============================================================================
# wgf
# =============================================================================
@dataclass(frozen=True)
class Potential:
    value: Callable[[np.ndarray], np.ndarray]   # (n, d) -> (n,)
    grad: Callable[[np.ndarray], np.ndarray]    # (n, d) -> (n, d)
    descriptor: str


@dataclass(frozen=True)
class EnergyFunctional:
    target: EmpiricalMeasure
    lambda_reg: float = 0.0
    phi: Optional[Potential] = None

    def __post_init__(self):
        if self.lambda_reg < 0.0:
            raise ValueError("lambda_reg must be >= 0")
        if self.lambda_reg > 0.0 and self.phi is None:
            raise ValueError("lambda_reg > 0 needs a potential phi")


@dataclass(frozen=True)
class FlowRecord:
    k: int
    w2_to_target: float
    energy: float
    step_size: float


@dataclass(frozen=True)
class FlowTrace:
    records: Tuple[FlowRecord, ...]
    rho_hat: float
    r2: float
    final: EmpiricalMeasure

    @property
    def w2(self) -> np.ndarray:
        return np.array([r.w2_to_target for r in self.records])

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])


# =============================================================================
# aco
# =============================================================================
@dataclass(frozen=True)
class AcoConfig:
    K: int = 60
    T: int = 20
    lambda_cost: float = 1.0
    alpha: float = 0.0
    eps_min: float = 0.05
    eps_max: float = 0.5
    K_sink: int = 200
    eta0: float = 0.05
    k_warm: int = 100
    clip_tau: float = 50.0
    nu: float = 0.1
    buffer_B: int = 2048
    lambda_reg: float = 1.0
    sinkhorn_tol: float = 1e-6
    n_shards: int = 1

    def problems(self) -> List[Tuple[str, str]]:
        out = []
        if self.K < 0: out.append(("K", "must be >= 0"))
        if self.T < 2: out.append(("T", "must be >= 2"))
        if self.lambda_cost < 0: out.append(("lambda_cost", "must be >= 0"))
        if self.alpha < 0: out.append(("alpha", "must be >= 0"))
        if self.lambda_reg < 0: out.append(("lambda_reg", "must be >= 0"))
        if not self.eps_min > 0: out.append(("eps_min", "must be positive"))
        if self.eps_max < self.eps_min: out.append(("eps_max", "must be >= eps_min"))
        if self.K_sink < 1: out.append(("K_sink", "must be >= 1"))
        if not self.eta0 > 0: out.append(("eta0", "must be positive"))
        if self.k_warm < 1: out.append(("k_warm", "must be >= 1"))
        if not self.clip_tau > 0: out.append(("clip_tau", "must be positive"))
        if not 0.0 < self.nu <= 1.0: out.append(("nu", "must lie in (0, 1]"))
        if self.buffer_B < 1: out.append(("buffer_B", "must be >= 1"))
        if not self.sinkhorn_tol > 0: out.append(("sinkhorn_tol", "must be positive"))
        if self.n_shards < 1: out.append(("n_shards", "must be >= 1"))
        return out

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(f"{k}: {msg}" for k, msg in problems))


@dataclass(frozen=True, eq=False)
class LinearMap:
    """z -> matrix @ z + offset; the inverse-process map."""
    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.matrix, dtype=np.float64))
        b = np.atleast_1d(np.array(self.offset, dtype=np.float64)).ravel()
        if b.shape != (A.shape[0],):
            raise ValueError("offset length must equal the map's output dimension")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "offset", b)

    @classmethod
    def identity(cls, d: int) -> "LinearMap":
        return cls(matrix=np.eye(d), offset=np.zeros(d))

    @property
    def in_dim(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def frobenius_sq(self) -> float:
        return float(np.sum(self.matrix ** 2))

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.in_dim:
            raise ValueError(f"latent dimension {z.shape[-1]} != map input dimension {self.in_dim}")
        return z @ self.matrix.T + self.offset


@dataclass(frozen=True)
class EmaBuffer:
    capacity: int
    nu: float
    latents: Tuple[np.ndarray, ...] = ()
    target: Optional[EmpiricalMeasure] = None

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        if not 0.0 < self.nu <= 1.0:
            raise ValueError("nu must lie in (0, 1]")
        if len(self.latents) > self.capacity:
            raise ValueError("buffer holds more latents than its capacity")


@dataclass(frozen=True)
class AcoDiagnostics:
    k: int
    epsilon: float
    eta: float
    ot_loss: float
    reg_loss: float
    grad_norm_preclip: float
    grad_norm_postclip: float
    w2_to_target: float
    latent_w2: float
    phi_mean: float
    sinkhorn_converged: bool


@dataclass(frozen=True)
class AcoState:
    conditions: EmpiricalMeasure
    latents: Optional[Trajectory]
    diagnostics: Tuple[AcoDiagnostics, ...] = ()
    buffer: Optional[EmaBuffer] = None

    @property
    def iterations(self) -> int:
        return len(self.diagnostics)


@dataclass(frozen=True)
class LyapunovReport:
    values: Tuple[Tuple[int, float], ...]   # (k, V_k)
    increases: int
    tolerance: float

    @property
    def non_increasing_fraction(self) -> float:
        steps = len(self.values) - 1
        return 1.0 if steps <= 0 else 1.0 - self.increases / steps


# =============================================================================
# cli
# =============================================================================
@dataclass
class CheckResult:
    name: str
    status: CheckStatus
    measured: Dict[str, object] = field(default_factory=dict)
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status is CheckStatus.PASS


@dataclass
class RunManifest:
    experiment: str
    tool_version: str
    config_hash: str
    seed: int
    generator: str
    started: str
    finished: str = ""
    checks: List[CheckResult] = field(default_factory=list)
    artifacts: List[str] = field(default_factory=list)
    log: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "generator": self.generator,
            "started": self.started,
            "finished": self.finished,
            "passed": self.passed,
            "checks": [
                {"name": c.name, "status": c.status.value, "measured": c.measured, "detail": c.detail}
                for c in self.checks
            ],
            "artifacts": list(self.artifacts),
            "log": list(self.log),
        }


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    config_path: Optional[Path] = None
    seed: Optional[int] = None
    out_dir: Optional[Path] = None
    dump_states: bool = False


@dataclass
class SessionState:
    out_dir: Path
    log: List[str] = field(default_factory=list)

    def append_log(self, msg: str):
        self.log.append(msg)
