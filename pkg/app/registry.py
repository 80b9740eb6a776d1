# app/registry.py

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np

from core.constants import CheckStatus, ExperimentName
from core.models import CheckResult
from core.repository import write_table_csv, write_json
from core.rng import RngStream


def plain(value):
    """numpy scalars/arrays -> JSON-friendly python values."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, np.ndarray):
        return [plain(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    return value


class RunContext:
    """
    What an experiment body sees: resolved params, its seeded stream, the
    output folder and the check ledger. Every declared check is recorded once.
    """

    def __init__(self, name: str, params, rng: RngStream, folder: Path, check_names: Sequence[str],
                 log: Callable[[str], None], dump_states: bool = False):
        self.name = name
        self.params = params
        self.rng = rng
        self.folder = Path(folder)
        self.check_names = tuple(check_names)
        self.dump_states = dump_states
        self.log = log
        self.results: Dict[str, CheckResult] = {}
        self.artifacts: List[str] = []

    def stream(self, stream_id: int) -> RngStream:
        """Independent stream for one part of the experiment, keyed by the run seed."""
        return RngStream(self.rng.seed, stream_id)

    # ---------------- checks ----------------

    def check(self, name: str, passed: bool, detail: str = "", **measured) -> bool:
        if name not in self.check_names:
            raise KeyError(f"{self.name}: undeclared check {name!r}")
        if name in self.results:
            raise KeyError(f"{self.name}: check {name!r} recorded twice")
        status = CheckStatus.PASS if passed else CheckStatus.FAIL
        self.results[name] = CheckResult(name=name, status=status, measured=plain(measured), detail=detail)
        level = "INFO" if passed else "WARNING"
        self.log(f"[{level}] {name}: {status.value} {detail}".rstrip())
        return bool(passed)

    def mark_remaining(self, status: CheckStatus, detail: str):
        for name in self.check_names:
            if name not in self.results:
                self.results[name] = CheckResult(name=name, status=status, detail=detail)

    def ordered_results(self) -> List[CheckResult]:
        return [self.results[n] for n in self.check_names if n in self.results]

    # ---------------- artifacts ----------------

    def _track(self, path: Path) -> Path:
        self.artifacts.append(path.relative_to(self.folder).as_posix())
        return path

    def write_csv(self, filename: str, columns: Sequence[str], rows, meta: Optional[dict] = None) -> Path:
        meta = dict(meta or {})
        meta.setdefault("experiment", self.name)
        return self._track(write_table_csv(self.folder / filename, columns, rows, meta))

    def write_json(self, filename: str, obj) -> Path:
        return self._track(write_json(self.folder / filename, plain(obj)))

    def saved(self, path: Path) -> Path:
        """Records an artifact written by a repository helper."""
        return self._track(Path(path))


@dataclass(frozen=True)
class Experiment:
    name: ExperimentName
    description: str
    anchor: str
    defaults: object
    checks: Tuple[str, ...]
    body: Callable[[RunContext], None]


_REGISTRY: Dict[str, Experiment] = {}


def register(name: ExperimentName, description: str, anchor: str, defaults, checks: Sequence[str]):
    def wrap(body: Callable[[RunContext], None]):
        if name.value in _REGISTRY:
            raise ValueError(f"experiment {name.value!r} registered twice")
        _REGISTRY[name.value] = Experiment(name=name, description=description, anchor=anchor,
                                           defaults=defaults, checks=tuple(checks), body=body)
        return body
    return wrap


def registered_names() -> List[str]:
    return sorted(_REGISTRY)


def get_experiment(name: str) -> Experiment:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown experiment {name!r}; registered: {', '.join(registered_names())}")


def list_experiments() -> List[Tuple[str, str, str]]:
    return [(n, _REGISTRY[n].description, _REGISTRY[n].anchor) for n in registered_names()]
