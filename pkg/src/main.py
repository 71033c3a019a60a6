# main.py
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from src.fdi_detector import FDIDetector, inspect_model
from src.modules.detector import Hypothesis, detect, detect_dc, load_model, save_model
from src.modules.experiment_config import load_config
from src.modules.experiments import EXPERIMENTS
from src.modules.grid_model import FDIDetectionError, load_case
from src.modules.power_flow import ComplexState, solve_ac_with_info, solve_dc

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ATTACK = 2


def _print_json(data):
    print(json.dumps(data, indent=2))


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FDIDetectionError(f"Cannot read {path}: {e}") from e


def cmd_case_validate(args) -> int:
    case = load_case(args.file)
    _print_json({"name": case.name, "buses": case.size, "lines": len(case.lines), "slack": case.slack_id,
                 "valid": True})
    return EXIT_OK


def cmd_powerflow(args) -> int:
    case = load_case(args.file)
    if args.dc:
        angles = solve_dc(case)
        _print_json({"model": "dc", "buses": [{"id": bus.id, "angle_deg": float(np.degrees(angle))}
                                             for bus, angle in zip(case.buses, angles)]})
        return EXIT_OK
    state, info = solve_ac_with_info(case)
    logger.info(f"AC power flow converged in {info.iterations} iterations (mismatch {info.mismatch:.2e})")
    _print_json({"model": "ac", **state.to_dict()})
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = load_config(args.config)
    case = load_case(args.file)
    alpha_sigma = args.alpha_sigma if args.alpha_sigma is not None else config.alpha_sigmas[-1]
    detector = FDIDetector(case,
                           alpha_sigma=alpha_sigma,
                           alpha_sigma_s=config.alpha_sigma_s,
                           eps_r=config.eps_r,
                           eps_j=config.eps_j,
                           eps_dc=config.eps_dc,
                           threshold_mode=config.threshold_mode,
                           k_of_4=config.k_of_4)
    if args.dc:
        model = detector.calibrate_dc(config.load_sigma, config.n_historic, config.seed)
    else:
        model = detector.calibrate_from_scenarios(config.load_sigma, config.n_historic, config.seed,
                                                 config.estimation_sigma)
    save_model(model, args.output)
    return EXIT_OK


def _load_state(path: str) -> ComplexState:
    try:
        return ComplexState.from_dict(_read_json(path))
    except (KeyError, TypeError, ValueError) as e:
        raise FDIDetectionError(f"Malformed state file {path}: {e}") from e


def cmd_detect(args) -> int:
    model = load_model(args.model)
    state = _load_state(args.state)
    if model.mode == "dc":
        report = detect_dc(model, state.angle)
    else:
        report = detect(model, state)
    _print_json(report.to_dict())
    logger.info(f"Verdict {report.verdict.value}; triggers: {report.triggers or 'none'}")
    return EXIT_ATTACK if report.verdict is Hypothesis.H1 else EXIT_OK


def cmd_experiment(args) -> int:
    config = load_config(args.config)
    if args.workers:
        config.workers = args.workers
        config.validate()
    EXPERIMENTS[args.name](config, args.output)
    return EXIT_OK


def cmd_inspect(args) -> int:
    model = load_model(args.model)
    states = {"state": _load_state(args.state)} if args.state else None
    _print_json(inspect_model(model, states))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdi-detect",
                                     description="Graph-spectral detection of false data injection attacks")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    case = commands.add_parser("case", help="grid case utilities")
    case_commands = case.add_subparsers(dest="case_command", required=True)
    validate = case_commands.add_parser("validate", help="parse and validate a case file")
    validate.add_argument("file")
    validate.set_defaults(handler=cmd_case_validate)

    powerflow = commands.add_parser("powerflow", help="solve the power flow and print the state as JSON")
    powerflow.add_argument("file")
    powerflow.add_argument("--dc", action="store_true", help="DC approximation (angles only)")
    powerflow.set_defaults(handler=cmd_powerflow)

    calibrate = commands.add_parser("calibrate", help="calibrate a detector model from random load scenarios")
    calibrate.add_argument("file")
    calibrate.add_argument("--config", help="experiment config JSON (defaults apply when omitted)")
    calibrate.add_argument("-o", "--output", default="model.json")
    calibrate.add_argument("--alpha-sigma", type=float, help="threshold confidence scale")
    calibrate.add_argument("--dc", action="store_true", help="calibrate the DC angle detector")
    calibrate.set_defaults(handler=cmd_calibrate)

    detect_parser = commands.add_parser("detect", help="test a state; exit code 2 when an attack is detected")
    detect_parser.add_argument("model")
    detect_parser.add_argument("state")
    detect_parser.set_defaults(handler=cmd_detect)

    experiment = commands.add_parser("experiment", help="run a Monte Carlo experiment")
    experiment.add_argument("name", choices=sorted(EXPERIMENTS))
    experiment.add_argument("--config")
    experiment.add_argument("-o", "--output", help="output directory (overrides the config)")
    experiment.add_argument("--workers", type=int, help="worker processes")
    experiment.set_defaults(handler=cmd_experiment)

    inspect = commands.add_parser("inspect", help="print spectra and filter responses of a model")
    inspect.add_argument("model")
    inspect.add_argument("--state", help="state JSON whose spectra are included")
    inspect.set_defaults(handler=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run the command line interface and return the exit code."""
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        return args.handler(args)
    except FDIDetectionError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
