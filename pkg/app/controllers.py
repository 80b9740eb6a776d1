# app/controllers.py

import logging
import traceback
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Tuple

from core.constants import (
    TOOL_VERSION, TIME_FORMAT_ISO, DEFAULT_SEED, DEFAULT_OUT_DIR, CheckStatus
)
from core.config import load_config_file, resolve, runner_settings, config_hash
from core.models import ExperimentSpec, RunManifest, SessionState
from core.repository import save_manifest
from core.rng import RngStream
from app.registry import RunContext, get_experiment, list_experiments
import app.experiments  # noqa: F401  (populates the registry)

logger = logging.getLogger(__name__)

_LEVELS = {"DEBUG": logging.DEBUG, "INFO": logging.INFO, "WARNING": logging.WARNING, "ERROR": logging.ERROR}


class ExperimentController:
    def __init__(self, state: Optional[SessionState] = None):
        self.state = state or SessionState(out_dir=Path(DEFAULT_OUT_DIR))

    def log(self, text: str):
        """Session log line `[LEVEL] message`, mirrored to the module logger."""
        self.state.append_log(text)
        level = logging.INFO
        if text.startswith("["):
            level = _LEVELS.get(text[1:text.find("]")], logging.INFO)
        logger.log(level, text.split("] ", 1)[-1] if text.startswith("[") else text)

    # ---------------- registry ----------------

    def list_experiments(self) -> List[Tuple[str, str, str]]:
        return list_experiments()

    # ---------------- single run ----------------

    def run_experiment(self, spec: ExperimentSpec) -> RunManifest:
        """
        Resolves the config, runs the experiment into <out>/<name>/ and writes
        the manifest there. Config problems raise ConfigError before anything
        is written; failures inside the experiment end up in the manifest.
        """
        exp = get_experiment(spec.name)
        overrides = load_config_file(spec.config_path) if spec.config_path else {}
        params = resolve(exp.defaults, overrides)
        file_seed, file_out = runner_settings(overrides)

        seed = spec.seed if spec.seed is not None else (file_seed if file_seed is not None else DEFAULT_SEED)
        out = Path(spec.out_dir or file_out or self.state.out_dir)
        folder = out / exp.name.value
        folder.mkdir(parents=True, exist_ok=True)

        self.state.log.clear()
        manifest = RunManifest(
            experiment=exp.name.value,
            tool_version=TOOL_VERSION,
            config_hash=config_hash(params, seed),
            seed=seed,
            generator=RngStream.generator_name,
            started=datetime.now().strftime(TIME_FORMAT_ISO),
        )
        self.log(f"[INFO] Running {exp.name.value} (seed {seed}) → {folder}")

        ctx = RunContext(exp.name.value, params, RngStream(seed, 0), folder, exp.checks,
                         self.log, dump_states=spec.dump_states)
        try:
            exp.body(ctx)
        except Exception as e:
            self.log(f"[ERROR] {exp.name.value} aborted: {e!r}")
            logger.debug("%s", traceback.format_exc())
            self.state.append_log(traceback.format_exc().rstrip())
            ctx.mark_remaining(CheckStatus.ERROR, f"aborted: {e!r}")
        missing = [n for n in exp.checks if n not in ctx.results]
        if missing:
            self.log(f"[ERROR] checks never recorded: {', '.join(missing)}")
            ctx.mark_remaining(CheckStatus.ERROR, "not recorded by the experiment")

        manifest.checks = ctx.ordered_results()
        manifest.artifacts = list(ctx.artifacts)
        n_pass = sum(c.passed for c in manifest.checks)
        self.log(f"[{'INFO' if manifest.passed else 'WARNING'}] {exp.name.value}: "
                 f"{n_pass}/{len(manifest.checks)} checks passed")
        manifest.finished = datetime.now().strftime(TIME_FORMAT_ISO)
        manifest.log = list(self.state.log)
        path = save_manifest(manifest, folder)
        logger.info("Saved manifest → %s", path)
        return manifest
