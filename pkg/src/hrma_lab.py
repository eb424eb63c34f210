#hrma_lab.py
# Command-line entry point: hrma-lab <converge|lifespan|ma-audit|spectral-cache> --config <file>
import argparse
import dataclasses
import logging
import os
import sys
import traceback
from typing import List, Optional

import numpy as np

from src import artifacts
from src.constants import Constants
from src.errors import ConfigError, HrmaLabError, QuadratureError
from src.study_config import StudyConfig, parse_config
from src.studies import run_convergence_study, run_lifespan_report, run_ma_audit, run_spectral_cache

# handlers installed by setup_logging, replaced on every run
_HANDLERS: List[logging.Handler] = []

STUDIES = {
    "converge": run_convergence_study,
    "lifespan": run_lifespan_report,
    "ma-audit": run_ma_audit,
    "spectral-cache": run_spectral_cache,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrma-lab",
                                     description="Toric HRMA geodesic rays and their Toeplitz quantization")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in STUDIES.items():
        p = sub.add_parser(name, help=(func.__doc__ or name).splitlines()[0])
        p.add_argument("--config", required=True, help="study file, or the name of a file in init/")
        p.add_argument("--out", help="output directory (default: the study file's 'output')")
        p.add_argument("--threads", type=int, default=1, help="joblib workers (results do not depend on it)")
        p.add_argument("--resolution", type=int, help="override the Legendre scan resolution")
        p.add_argument("--plots", action="store_true", help="also write PNG figures")
        p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def setup_logging(out_dir: str, level: str) -> None:
    root = logging.getLogger()
    for handler in _HANDLERS:
        root.removeHandler(handler)
        handler.close()
    _HANDLERS[:] = [
        logging.FileHandler(os.path.join(out_dir, Constants.LOG_FILE)),
        logging.StreamHandler(sys.stdout)
    ]
    formatter = logging.Formatter(Constants.LOG_FORMAT)
    for handler in _HANDLERS:
        handler.setFormatter(formatter)
        root.addHandler(handler)
    root.setLevel(getattr(logging, level))


def _apply_overrides(config: StudyConfig, args) -> StudyConfig:
    changes = {}
    if args.resolution is not None:
        if args.resolution < 8:
            raise ConfigError("--resolution must be at least 8", keys=["tolerances.legendre_resolution"])
        raw = dict(config.raw, tolerances=dict(config.raw["tolerances"], legendre_resolution=args.resolution))
        problem = dataclasses.replace(config.problem, resolution=args.resolution)
        changes.update(raw=raw, problem=problem, legendre_resolution=args.resolution)
    if args.plots:
        changes["plots"] = True
    return dataclasses.replace(config, **changes) if changes else config


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        config = _apply_overrides(config, args)
    except ConfigError as e:
        logging.basicConfig(level=logging.INFO, format=Constants.LOG_FORMAT)
        logging.error("Invalid configuration: %s (keys: %s)", e, ", ".join(e.keys) or "-")
        return Constants.EXIT_CONFIG

    out_dir = args.out or config.output
    try:
        artifacts.ensure_output_dir(out_dir)
        setup_logging(out_dir, args.log_level)
    except OSError as e:
        logging.basicConfig(level=logging.INFO, format=Constants.LOG_FORMAT)
        logging.error("Output directory %s is not usable. Reason = %s", out_dir, e)
        return Constants.EXIT_IO

    logging.info("hrma-lab %s starting with %s, output in %s", args.command, config.source, out_dir)
    try:
        with np.errstate(over="ignore", under="ignore"):
            files = STUDIES[args.command](config, out_dir, args.threads)
    except OSError as e:
        logging.error("I/O failure during %s. Reason = %s", args.command, e)
        return Constants.EXIT_IO
    except (HrmaLabError, FloatingPointError, np.linalg.LinAlgError) as e:
        logging.error("Numerical failure during %s: %s", args.command, e)
        payload = {"command": args.command, "config": config.source, "error": type(e).__name__,
                   "message": str(e), "traceback": traceback.format_exc()}
        if isinstance(e, QuadratureError):
            payload.update(estimate=e.estimate, error_estimate=e.error_estimate, rel_tol=e.rel_tol)
        artifacts.write_diagnostics(out_dir, payload)
        return Constants.EXIT_NUMERICAL
    for path in files:
        logging.info("wrote %s", path)
    return Constants.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
