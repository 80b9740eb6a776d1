# core/repository.py

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import numpy as np

from core.models import (
    Trajectory, TransportPlan, FlowTrace, AcoState, EmpiricalMeasure, RunManifest,
    DecayFit, LogLinearFit
)
from core.constants import CSV_COMMENT_PREFIX, FLOAT_FMT, MANIFEST_NAME, PLAN_SIZE_GUARD


def _meta_to_header_lines(meta: Optional[Dict[str, object]]) -> List[str]:
    if not meta:
        return []
    return [f"{CSV_COMMENT_PREFIX}{key}: {meta[key]}" for key in sorted(meta)]


def write_table_csv(path: Path, columns: Sequence[str], rows, meta: Optional[Dict[str, object]] = None) -> Path:
    """
    First comment line holds the column names, then `# key: value` metadata.
    Every value is written with 17 significant digits.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, len(columns))
    if arr.size and arr.shape[1] != len(columns):
        raise ValueError(f"rows have {arr.shape[1]} columns, header names {len(columns)}")
    header_lines = [",".join(columns)]
    header_lines.extend(line[len(CSV_COMMENT_PREFIX):] for line in _meta_to_header_lines(meta))
    np.savetxt(str(path), arr.reshape(-1, len(columns)), delimiter=",", fmt=FLOAT_FMT,
               header="\n".join(header_lines), comments=CSV_COMMENT_PREFIX)
    return path


def read_table_csv(path: Path) -> Tuple[List[str], np.ndarray, Dict[str, str]]:
    """Loads a table written by write_table_csv: (columns, data, metadata)."""
    path = Path(path)
    columns: List[str] = []
    meta: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if not columns:
                columns = body.split(",")
            elif ": " in body:
                key, value = body.split(": ", 1)
                meta[key] = value
    data = np.loadtxt(str(path), delimiter=",", comments="#", ndmin=2)
    return columns, data, meta


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------- per-type exports ----------------

def save_trajectory_csv(traj: Trajectory, path: Path, meta: Optional[Dict[str, object]] = None) -> Path:
    # row r is the state after step r, i.e. z_t with t = T-1-r
    t = np.arange(traj.T - 1, -1, -1)
    meta = dict(meta or {})
    meta.setdefault("snr_convention", "|ref|^2/|z_t-ref|^2")
    meta.setdefault("noise_convention", "|z_t-ref|/sqrt(d)")
    return write_table_csv(path, ["t", "snr", "noise_intensity"],
                           np.column_stack((t, traj.snr, traj.noise_intensity)), meta)


def save_trajectory_json(traj: Trajectory, path: Path) -> Path:
    t = list(range(traj.T, -1, -1))
    return write_json(path, {
        "t": t,
        "states": [np.asarray(s).tolist() for s in traj.states],
        "snr": [float(v) for v in traj.snr],
        "noise_intensity": [float(v) for v in traj.noise_intensity],
    })


def save_plan_json(plan: TransportPlan, path: Path) -> Path:
    if plan.gamma.size > PLAN_SIZE_GUARD:
        raise ValueError(f"plan has {plan.gamma.size} entries, above the dense export guard {PLAN_SIZE_GUARD}")
    return write_json(path, plan.to_json_dict())


def save_flow_csv(trace: FlowTrace, path: Path, meta: Optional[Dict[str, object]] = None) -> Path:
    rows = [(r.k, r.w2_to_target, r.energy, r.step_size) for r in trace.records]
    return write_table_csv(path, ["k", "w2", "energy", "eta"], rows, meta)


def save_aco_csv(state: AcoState, path: Path, meta: Optional[Dict[str, object]] = None) -> Path:
    cols = ["k", "epsilon", "eta", "ot_loss", "reg_loss", "grad_norm_preclip", "grad_norm_postclip",
            "w2_to_target", "latent_w2", "phi_mean", "sinkhorn_converged"]
    rows = [tuple(float(getattr(d, c)) for c in cols) for d in state.diagnostics]
    return write_table_csv(path, cols, rows, meta)


def save_measure_json(measure: EmpiricalMeasure, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(measure.to_json() + "\n", encoding="utf-8")
    return path


def load_measure_json(path: Path) -> EmpiricalMeasure:
    return EmpiricalMeasure.from_json(Path(path).read_text(encoding="utf-8"))


def decay_fit_dict(fit: DecayFit) -> Dict[str, object]:
    return {
        "M": fit.M, "beta": fit.beta, "m": fit.m, "r2": fit.r2, "sigma_fit": fit.sigma_fit,
        "ci95": {k: list(v) for k, v in fit.ci95.items()}, "fit_failed": fit.fit_failed,
    }


def log_linear_dict(fit: Optional[LogLinearFit]) -> Optional[Dict[str, object]]:
    if fit is None:
        return None
    return {"rate": fit.rate, "intercept": fit.intercept, "r2": fit.r2, "n_points": fit.n_points}


def save_manifest(manifest: RunManifest, folder: Path) -> Path:
    return write_json(Path(folder) / MANIFEST_NAME, manifest.to_json_dict())
