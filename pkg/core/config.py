# core/config.py

import dataclasses
import hashlib
from pathlib import Path
from typing import Dict, List, Optional, Tuple

# keys handled by the runner rather than the experiment parameters
RUNNER_KEYS = ("seed", "out")

_TRUE = ("true", "1", "yes", "on")
_FALSE = ("false", "0", "no", "off")


class ConfigError(ValueError):
    """Every problem carries its field path; str() lists them one per line."""

    def __init__(self, problems: List[Tuple[str, str]]):
        self.problems = list(problems)
        super().__init__("\n".join(f"{path}: {msg}" for path, msg in self.problems))


def parse_config_text(text: str) -> Dict[str, str]:
    """`key: value` per line, `#` starts a comment, blank lines ignored."""
    out: Dict[str, str] = {}
    problems = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            problems.append((f"line {lineno}", f"expected 'key: value', got {raw.strip()!r}"))
            continue
        key, value = (part.strip() for part in line.split(":", 1))
        if not key:
            problems.append((f"line {lineno}", "empty key"))
            continue
        if key in out:
            problems.append((key, f"duplicate key (line {lineno})"))
            continue
        out[key] = value
    if problems:
        raise ConfigError(problems)
    return out


def load_config_file(path: Path) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([("config", f"cannot read {path}: {e}")])
    return parse_config_text(text)


def _coerce(default, raw: str):
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if default and all(isinstance(v, int) and not isinstance(v, bool) for v in default):
            return tuple(int(s) for s in items)
        return tuple(float(s) for s in items)
    if isinstance(default, str) or default is None:
        return raw
    raise ValueError(f"unsupported field type {type(default).__name__}")


def _apply(obj, overrides: Dict[str, str], prefix: str, problems: List[Tuple[str, str]]):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    nested: Dict[str, Dict[str, str]] = {}
    for key, raw in overrides.items():
        head, _, rest = key.partition(".")
        path = f"{prefix}{head}"
        if head not in fields:
            problems.append((f"{prefix}{key}", "unknown key"))
            continue
        current = getattr(obj, head)
        if rest:
            if not dataclasses.is_dataclass(current):
                problems.append((f"{prefix}{key}", f"{path} has no sub-fields"))
                continue
            nested.setdefault(head, {})[rest] = raw
            continue
        if dataclasses.is_dataclass(current):
            problems.append((path, "is a section; set its fields with dotted keys"))
            continue
        try:
            changes[head] = _coerce(current, raw)
        except ValueError as e:
            problems.append((path, str(e)))
    for head, sub in nested.items():
        changes[head] = _apply(getattr(obj, head), sub, f"{prefix}{head}.", problems)
    if not changes:
        return obj
    # frozen sections validate in __post_init__; build unvalidated first to collect every problem
    candidate = object.__new__(type(obj))
    for f in dataclasses.fields(obj):
        object.__setattr__(candidate, f.name, changes.get(f.name, getattr(obj, f.name)))
    return candidate


def _validate(obj, prefix: str, problems: List[Tuple[str, str]]):
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            _validate(value, f"{prefix}{f.name}.", problems)
    if hasattr(obj, "problems"):
        problems.extend((f"{prefix}{name}", msg) for name, msg in obj.problems())


def _rebuild(obj):
    kwargs = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        kwargs[f.name] = _rebuild(value) if dataclasses.is_dataclass(value) else value
    return type(obj)(**kwargs)


def resolve(defaults, overrides: Dict[str, str]):
    """
    Applies dotted-key overrides to a parameter dataclass. Unknown keys,
    unparsable values and failed `problems()` checks are all collected
    into one ConfigError.
    """
    problems: List[Tuple[str, str]] = []
    candidate = _apply(defaults, {k: v for k, v in overrides.items() if k not in RUNNER_KEYS}, "", problems)
    if problems:
        raise ConfigError(problems)
    _validate(candidate, "", problems)
    if problems:
        raise ConfigError(problems)
    try:
        return _rebuild(candidate)
    except ValueError as e:
        raise ConfigError([("config", str(e))])


def runner_settings(overrides: Dict[str, str]) -> Tuple[Optional[int], Optional[str]]:
    seed = overrides.get("seed")
    out = overrides.get("out")
    if seed is not None:
        try:
            seed = int(seed)
        except ValueError:
            raise ConfigError([("seed", f"expected an integer, got {seed!r}")])
        if not 0 <= seed < 2 ** 64:
            raise ConfigError([("seed", "must be an unsigned 64-bit integer")])
    return seed, out


def flatten(params, prefix: str = "") -> List[Tuple[str, str]]:
    out = []
    for f in dataclasses.fields(params):
        value = getattr(params, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.extend(flatten(value, key + "."))
        elif isinstance(value, tuple):
            out.append((key, ", ".join(repr(v) for v in value)))
        elif isinstance(value, bool):
            out.append((key, "true" if value else "false"))
        else:
            out.append((key, repr(value) if isinstance(value, float) else str(value)))
    return sorted(out)


def render(params, seed: Optional[int] = None) -> str:
    lines = [f"{k}: {v}" for k, v in flatten(params)]
    if seed is not None:
        lines.append(f"seed: {seed}")
    return "\n".join(lines) + "\n"


def config_hash(params, seed: Optional[int] = None) -> str:
    """SHA-256 of the canonical rendering of the fully resolved parameters."""
    return hashlib.sha256(render(params, seed).encode("utf-8")).hexdigest()
