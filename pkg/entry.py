# entry.py
import argparse
import logging
import sys
from pathlib import Path

# --- Ensure the project root is on sys.path ---
BASE_DIR = Path(__file__).resolve().parent
if str(BASE_DIR) not in sys.path:
    sys.path.insert(0, str(BASE_DIR))

from core.config import ConfigError
from core.models import ExperimentSpec
from app.controllers import ExperimentController

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="condlab",
                                description="Seeded numerical experiments for conditional diffusion, "
                                            "AR condition chains and entropic OT flows.")
    p.add_argument("--experiment", metavar="NAME", help="registered experiment to run")
    p.add_argument("--config", metavar="PATH", type=Path, help="key: value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", metavar="DIR", type=Path, help="output root (default: results)")
    p.add_argument("--list", action="store_true", help="list experiments and exit")
    p.add_argument("--dump-states", action="store_true", help="also write full latent trajectories as JSON")
    p.add_argument("--verbose", action="store_true", help="debug logging")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="[%(levelname)s] %(message)s")
    ctrl = ExperimentController()

    if args.list:
        rows = ctrl.list_experiments()
        w_name = max(len(r[0]) for r in rows) + 2
        w_anchor = max(len(r[2]) for r in rows) + 2
        for name, description, anchor in rows:
            print(f"{name:<{w_name}}{anchor:<{w_anchor}}{description}")
        return EXIT_OK
    if not args.experiment:
        logging.error("--experiment NAME is required (see --list)")
        return EXIT_USAGE
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        logging.error("seed: must be an unsigned 64-bit integer")
        return EXIT_USAGE

    spec = ExperimentSpec(name=args.experiment, config_path=args.config, seed=args.seed,
                          out_dir=args.out, dump_states=args.dump_states)
    try:
        manifest = ctrl.run_experiment(spec)
    except ConfigError as e:
        for path, msg in e.problems:
            logging.error("config %s: %s", path, msg)
        return EXIT_USAGE
    except ValueError as e:
        # unknown experiment name
        logging.error("%s", e)
        return EXIT_USAGE
    return EXIT_OK if manifest.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
