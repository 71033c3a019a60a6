import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.fdi_detector import FDIDetector, inspect_model
from src.modules.curve_aggregator import AttributionCounter, CurveAggregator
from src.modules.detector import (DetectionReport, DetectorModel, Hypothesis, baseline_norm, baseline_residual,
                                  calibrate_baseline_threshold, detect)
from src.modules.experiment_config import ExperimentConfig
from src.modules.grid_model import FDIDetectionError, GridCase, build_admittance_ac, laplacian_pair, load_case
from src.modules.gsp_core import total_variation
from src.modules.performance_tracker import PerformanceTracker
from src.modules.power_flow import ComplexState, SolverOptions, solve_ac, solve_dc
from src.modules.state_attack import (STREAM_PREVIOUS, STREAM_TRIAL, AttackSpec, NoiseSpec, apply_attack,
                                      apply_noise, scenario_case, solved_scenarios)

logger = logging.getLogger(__name__)

ATTACK_KINDS = ("angle", "magnitude")
# Confidence scale of the single-threshold studies (combined attack, baseline comparison, bus ranking).
REFERENCE_ALPHA = 2.0
DETECTION_TARGET = 0.9
# Smoothness table base; per-unit admittances scale with base_mva / SMOOTHNESS_BASE_MVA.
SMOOTHNESS_BASE_MVA = 1.0


class ExperimentError(FDIDetectionError):
    """Raised when an experiment's expected outcome does not hold."""


@dataclass(frozen=True)
class SweepTask:
    """One attacked bus of a sweep: every delta of the grid times `trials` fresh states."""
    bus: int
    kind: str
    deltas: Tuple[float, ...]
    sigma_e: float
    seed: int
    slack_bus: int
    load_sigma: float
    trials: int


@dataclass
class BusSweep:
    bus: int
    psi: Dict[float, CurveAggregator]
    smoothness: Dict[float, CurveAggregator]
    attribution: Dict[float, AttributionCounter]


@dataclass(frozen=True)
class ComparisonCell:
    """Current and previous estimator outputs of one (bus, delta, trial), clean and attacked."""
    delta: float
    clean_fired: bool
    attack_fired: bool
    clean: ComplexState
    previous: ComplexState
    attacked: ComplexState
    previous_attacked: ComplexState


def attack_spec(kind: str, bus: int, delta: float, slack_bus: int) -> AttackSpec:
    if kind == "angle":
        return AttackSpec.single(bus, delta_angle=delta, slack_bus=slack_bus)
    if kind == "magnitude":
        return AttackSpec.single(bus, delta_magnitude=delta, slack_bus=slack_bus)
    raise ValueError(f"Unknown attack kind '{kind}' (expected one of {ATTACK_KINDS})")


def trial_state(case: GridCase, load_sigma: float, seed: int, keys: Tuple[int, ...], sigma_e: float,
                opts: SolverOptions, stream_id: int = STREAM_TRIAL) -> ComplexState:
    """Estimator output of one sweep cell: a fresh load draw keyed by `keys`, plus PSSE error."""
    state = solved_scenarios(case, load_sigma, 1, seed, (stream_id, *keys), opts)[0]
    noise_keys = keys if stream_id == STREAM_TRIAL else (stream_id, *keys)
    return apply_noise(state, NoiseSpec(sigma_e, seed, noise_keys))


def verdicts(report: DetectionReport, model: DetectorModel) -> Tuple[bool, bool, bool, bool]:
    """Re-threshold a report under another model's thresholds: (psi, real part, imag part, smoothness)."""
    fired = [result.psi > term.threshold for result, term in zip(report.terms, model.terms)]
    psi_fired = sum(fired) >= model.k_of_4
    real = any(f for f, result in zip(fired, report.terms) if result.term.part == "real")
    imag = any(f for f, result in zip(fired, report.terms) if result.term.part == "imag")
    smooth = any(result.value > s.threshold for result, s in zip(report.smoothness, model.smoothness))
    return psi_fired, real, imag, smooth


def sweep_bus(task: SweepTask, model: DetectorModel, alphas: Sequence[float], case: GridCase,
              opts: SolverOptions) -> BusSweep:
    """Noise first, then the attack; Psi is evaluated once and re-thresholded per alpha."""
    models = {alpha: model.with_alpha(alpha, alpha) for alpha in alphas}
    result = BusSweep(task.bus,
                      {alpha: CurveAggregator() for alpha in alphas},
                      {alpha: CurveAggregator() for alpha in alphas},
                      {alpha: AttributionCounter() for alpha in alphas})
    for delta_index, delta in enumerate(task.deltas):
        spec = attack_spec(task.kind, task.bus, delta, task.slack_bus)
        for trial in range(task.trials):
            state = trial_state(case, task.load_sigma, task.seed, (task.bus, delta_index, trial), task.sigma_e,
                                opts)
            report = detect(model, apply_attack(state, spec))
            for alpha, alpha_model in models.items():
                psi_fired, real, imag, smooth = verdicts(report, alpha_model)
                result.psi[alpha].add(delta, psi_fired)
                result.smoothness[alpha].add(delta, smooth)
                if delta != 0 and psi_fired:
                    result.attribution[alpha].add(real, imag)
    return result


def compare_bus(task: SweepTask, model: DetectorModel, case: GridCase, opts: SolverOptions,
                ramp_steps: int) -> List[ComparisonCell]:
    """Angle sweep cells for the baselines; the previous output carries the attack one ramp step earlier."""
    earlier = (ramp_steps - 1) / ramp_steps
    cells = []
    for delta_index, delta in enumerate(task.deltas):
        spec = attack_spec("angle", task.bus, delta, task.slack_bus)
        keys = (task.bus, delta_index)
        for trial in range(task.trials):
            clean = trial_state(case, task.load_sigma, task.seed, (*keys, trial), task.sigma_e, opts)
            previous = trial_state(case, task.load_sigma, task.seed, (*keys, trial), task.sigma_e, opts,
                                   STREAM_PREVIOUS)
            attacked = apply_attack(clean, spec)
            cells.append(ComparisonCell(delta=delta,
                                        clean_fired=detect(model, clean).is_attack,
                                        attack_fired=detect(model, attacked).is_attack,
                                        clean=clean,
                                        previous=previous,
                                        attacked=attacked,
                                        previous_attacked=apply_attack(previous, spec.scaled(earlier))))
    return cells


def write_csv(frame: pd.DataFrame, output_dir: Path, name: str) -> Path:
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / name
    frame.to_csv(path, index=False, float_format="%.10g")
    logger.info(f"Wrote {path} ({len(frame)} rows)")
    return path


def run_tasks(function: Callable, tasks: Sequence, workers: int) -> List:
    """Map over tasks, in a process pool when workers > 1. Results keep task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [function(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(function, tasks))


class ExperimentRunner:
    """Shared state of one experiment run: case, calibrated detectors and the clean test pool."""

    def __init__(self, config: ExperimentConfig, output_dir: Optional[str] = None):
        self.config = config
        self.output_dir = Path(output_dir or config.output_dir)
        self.case: GridCase = load_case(config.case)
        self.detector = FDIDetector(self.case,
                                    alpha_sigma=config.alpha_sigmas[0],
                                    alpha_sigma_s=config.alpha_sigma_s,
                                    eps_r=config.eps_r,
                                    eps_j=config.eps_j,
                                    eps_dc=config.eps_dc,
                                    threshold_mode=config.threshold_mode,
                                    k_of_4=config.k_of_4)
        self.tracker = PerformanceTracker()
        self._models: Dict[float, DetectorModel] = {}
        self._pool: Optional[List[ComplexState]] = None

    @property
    def attacked_buses(self) -> List[int]:
        return [bus.id for bus in self.case.buses if bus.kind != "slack"]

    def model_for(self, sigma_e: float) -> DetectorModel:
        """Detector calibrated on historic outputs carrying the same PSSE error as the trials."""
        if sigma_e not in self._models:
            self._models[sigma_e] = self.detector.calibrate_from_scenarios(
                self.config.load_sigma, self.config.n_historic, self.config.seed, sigma_e)
        return self._models[sigma_e]

    @property
    def model(self) -> DetectorModel:
        return self.model_for(self.config.estimation_sigma)

    @property
    def pool(self) -> List[ComplexState]:
        """Clean estimator outputs for false alarm checks, drawn once."""
        if self._pool is None:
            states = solved_scenarios(self.case, self.config.load_sigma, self.config.trials,
                                      self.config.seed, (STREAM_TRIAL,), self.detector.solver_options)
            self._pool = [apply_noise(state, NoiseSpec(self.config.estimation_sigma, self.config.seed,
                                                       (STREAM_TRIAL, i)))
                          for i, state in enumerate(states)]
        return self._pool

    def grid(self, kind: str) -> Tuple[float, ...]:
        return tuple(self.config.angle_grid if kind == "angle" else self.config.magnitude_grid)

    def magnitudes(self, kind: str) -> List[float]:
        return self.config.angle_magnitudes if kind == "angle" else self.config.magnitude_magnitudes

    def tasks(self, kind: str, sigma_e: float) -> List[SweepTask]:
        return [SweepTask(bus, kind, self.grid(kind), sigma_e, self.config.seed, self.case.slack_id,
                          self.config.load_sigma, self.config.trials)
                for bus in self.attacked_buses]

    def sweep(self, kind: str, sigma_e: Optional[float] = None,
              alphas: Optional[Sequence[float]] = None) -> List[BusSweep]:
        sigma_e = self.config.estimation_sigma if sigma_e is None else sigma_e
        alphas = tuple(alphas or self.config.alpha_sigmas)
        tasks = self.tasks(kind, sigma_e)
        worker = partial(sweep_bus, model=self.model_for(sigma_e), alphas=alphas, case=self.case,
                         opts=self.detector.solver_options)
        results = run_tasks(worker, tasks, self.config.workers)
        self.tracker.increment_trials(len(tasks) * len(self.grid(kind)) * self.config.trials)
        return results

    def write_csv(self, frame: pd.DataFrame, name: str) -> Path:
        return write_csv(frame, self.output_dir, name)

    def write_json(self, data: Dict, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        path.write_text(json.dumps(data, indent=2, sort_keys=True))
        logger.info(f"Wrote {path}")
        return path

    def log_stats(self, name: str):
        stats = self.tracker.get_stats()
        logger.info(f"Experiment {name} finished: {stats['total_trials']} trials, "
                    f"{stats['runtime']:.1f}s runtime, {stats['trials_per_second']:.0f} trials/s")


def merged(sweeps: Sequence[BusSweep], attribute: str, alpha: float):
    items = [getattr(sweep, attribute)[alpha] for sweep in sweeps]
    total = type(items[0])()
    for item in items:
        total.merge(item)
    return total


def curve_rows(aggregator: CurveAggregator, magnitudes: Sequence[float], **labels) -> List[Dict]:
    return [{**labels, "delta": point.delta, "detection_probability": point.detection_probability,
             "exact_probability": point.exact_probability, "trials": point.trials,
             "false_alarm": point.false_alarm}
            for point in aggregator.curve(magnitudes)]


def run_tc1(config: ExperimentConfig, output_dir: Optional[str] = None) -> pd.DataFrame:
    """Total variation per bus of the nominal state, real part on Re Y and imaginary part on Im Y."""
    rows = []
    for path in [config.case, *config.extra_cases]:
        case = load_case(path)
        state = solve_ac(case)
        pair = laplacian_pair(case, "ac").on_base(case.base_mva, SMOOTHNESS_BASE_MVA)
        for part, matrix in (("real", "yr"), ("imag", "yj")):
            value, _ = total_variation(pair.matrix(matrix), state.part(part))
            rows.append({"case": case.name, "buses": case.size, "part": part, "s_over_m": value / case.size})
    frame = pd.DataFrame(rows, columns=["case", "buses", "part", "s_over_m"])
    write_csv(frame, Path(output_dir or config.output_dir), "tc1_smoothness.csv")
    return frame


def run_tc2(config: ExperimentConfig, output_dir: Optional[str] = None) -> Dict[str, pd.DataFrame]:
    """Single-bus angle and magnitude sweeps: Psi and smoothness curves plus term attribution."""
    runner = ExperimentRunner(config, output_dir)
    logger.info(f"Experiment tc2 started on '{runner.case.name}' ({config.trials} trials per point, "
                f"sigma_e={config.estimation_sigma})")
    frames = {}
    attribution_rows = []
    for kind in ATTACK_KINDS:
        sweeps = runner.sweep(kind)
        rows = []
        for alpha in config.alpha_sigmas:
            for detector in ("psi", "smoothness"):
                rows += curve_rows(merged(sweeps, detector, alpha), runner.magnitudes(kind),
                                   detector=detector, alpha_sigma=alpha)
            detected, both, real_only, imag_only = merged(sweeps, "attribution", alpha).as_row()
            attribution_rows.append({"kind": kind, "alpha_sigma": alpha, "detected": detected, "both": both,
                                     "real_only": real_only, "imag_only": imag_only})
        frames[kind] = pd.DataFrame(rows)
        runner.write_csv(frames[kind], f"tc2_{kind}_curves.csv")
    frames["attribution"] = pd.DataFrame(attribution_rows)
    runner.write_csv(frames["attribution"], "tc2_attribution.csv")
    runner.log_stats("tc2")
    return frames


def run_tc3(config: ExperimentConfig, output_dir: Optional[str] = None) -> pd.DataFrame:
    """The tc2 psi sweeps at every noise level, each calibrated on historic outputs with that noise."""
    runner = ExperimentRunner(config, output_dir)
    logger.info(f"Experiment tc3 started: noise sigmas {config.noise_sigmas}")
    rows = []
    for sigma_e in config.noise_sigmas:
        for kind in ATTACK_KINDS:
            sweeps = runner.sweep(kind, sigma_e)
            for alpha in config.alpha_sigmas:
                rows += curve_rows(merged(sweeps, "psi", alpha), runner.magnitudes(kind),
                                   kind=kind, sigma_e=sigma_e, alpha_sigma=alpha)
    frame = pd.DataFrame(rows)
    runner.write_csv(frame, "tc3_noise_curves.csv")
    runner.log_stats("tc3")
    return frame


def run_tc4(config: ExperimentConfig, output_dir: Optional[str] = None) -> Dict:
    """Combined angle and magnitude attack on several buses of the nominal state, with a zero control."""
    runner = ExperimentRunner(config, output_dir)
    model = runner.model.with_alpha(REFERENCE_ALPHA)
    clean = solve_ac(runner.case, runner.detector.solver_options)
    spec = AttackSpec.per_bus(config.tc4_buses, config.tc4_delta_angles, config.tc4_delta_magnitudes,
                              slack_bus=runner.case.slack_id)
    attacked = apply_attack(clean, spec)
    control = apply_attack(clean, AttackSpec.uniform(config.tc4_buses, 0.0, 0.0, runner.case.slack_id))

    report = detect(model, attacked)
    control_report = detect(model, control)
    result = {
        "buses": list(config.tc4_buses),
        "delta_angles": list(config.tc4_delta_angles),
        "delta_magnitudes": list(config.tc4_delta_magnitudes),
        "alpha_sigma": REFERENCE_ALPHA,
        "attack": report.to_dict(),
        "control": control_report.to_dict(),
    }
    runner.write_json(result, "tc4_report.json")
    runner.write_json(inspect_model(model, {"clean": clean, "attacked": attacked}), "tc4_spectra.json")
    runner.tracker.increment_trials(2)
    runner.log_stats("tc4")

    has_offsets = any(config.tc4_delta_angles) or any(config.tc4_delta_magnitudes)
    if has_offsets and not report.is_attack:
        raise ExperimentError(f"Combined attack on buses {list(config.tc4_buses)} was not detected")
    if control_report.is_attack:
        raise ExperimentError(f"Zero-offset control raised {control_report.triggers}")
    if has_offsets and not report.imag_part_fired:
        logger.warning(f"Combined attack detected only by {report.triggers}; no imaginary-part term fired")
    return result


def run_compare(config: ExperimentConfig, output_dir: Optional[str] = None) -> pd.DataFrame:
    """GSP detector against the state-norm and consecutive-residual checks at matched false alarm."""
    runner = ExperimentRunner(config, output_dir)
    model = runner.model.with_alpha(REFERENCE_ALPHA)
    worker = partial(compare_bus, model=model, case=runner.case, opts=runner.detector.solver_options,
                     ramp_steps=config.residual_ramp_steps)
    cells = [cell for cells in run_tasks(worker, runner.tasks("angle", config.estimation_sigma), config.workers)
             for cell in cells]
    runner.tracker.increment_trials(len(cells))

    false_alarm = float(np.mean([cell.clean_fired for cell in cells]))
    norm_threshold = calibrate_baseline_threshold([np.linalg.norm(cell.clean.v) for cell in cells], false_alarm)
    residual_threshold = calibrate_baseline_threshold(
        [np.linalg.norm(cell.clean.v - cell.previous.v) for cell in cells], false_alarm)
    logger.info(f"Matched false alarm {false_alarm:.3f}: norm threshold {norm_threshold:.6f}, "
                f"residual threshold {residual_threshold:.6f}")

    curves = {name: CurveAggregator() for name in ("gsp", "norm", "residual")}
    for cell in cells:
        curves["gsp"].add(cell.delta, cell.attack_fired)
        curves["norm"].add(cell.delta, baseline_norm(cell.attacked, norm_threshold) is Hypothesis.H1)
        curves["residual"].add(cell.delta, baseline_residual(cell.attacked, cell.previous_attacked,
                                                             residual_threshold) is Hypothesis.H1)

    rows = []
    for name, aggregator in curves.items():
        rows += curve_rows(aggregator, config.angle_magnitudes, method=name, matched_false_alarm=false_alarm)
    frame = pd.DataFrame(rows)
    runner.write_csv(frame, "compare_baselines.csv")
    runner.log_stats("compare")
    return frame


def run_diagonal_study(config: ExperimentConfig, output_dir: Optional[str] = None) -> pd.DataFrame:
    """Smallest attack angle reaching 90 % detection per bus, ranked by |Y_kk|."""
    runner = ExperimentRunner(config, output_dir)
    sweeps = runner.sweep("angle", alphas=(REFERENCE_ALPHA,))
    diagonal = np.abs(np.diag(build_admittance_ac(runner.case).y))
    rows = []
    for sweep in sweeps:
        aggregator = sweep.psi[REFERENCE_ALPHA]
        reached = [delta for delta in config.angle_magnitudes
                   if delta > 0 and aggregator.probability(delta) >= DETECTION_TARGET]
        rows.append({"bus": sweep.bus, "y_diagonal": float(diagonal[runner.case.index_of(sweep.bus)]),
                     "min_angle_deg": min(reached) if reached else float("nan"),
                     "max_probability": max(aggregator.probability(d) for d in config.angle_magnitudes)})
    frame = pd.DataFrame(rows).sort_values("y_diagonal", ascending=False, kind="mergesort")
    frame.insert(1, "rank", range(1, len(frame) + 1))
    runner.write_csv(frame, "diag_bus_detectability.csv")
    runner.log_stats("diag")
    return frame


def run_dc(config: ExperimentConfig, output_dir: Optional[str] = None) -> pd.DataFrame:
    """Single-term detector on DC power flow angles: false alarm and single-bus angle attacks."""
    runner = ExperimentRunner(config, output_dir)
    detector = runner.detector
    base = detector.calibrate_dc(config.load_sigma, config.n_historic, config.seed)
    models = {alpha: base.with_alpha(alpha) for alpha in config.alpha_sigmas}
    curves = {alpha: CurveAggregator() for alpha in config.alpha_sigmas}
    for bus in runner.attacked_buses:
        k = runner.case.index_of(bus)
        for delta_index, delta in enumerate(config.angle_grid):
            for trial in range(config.trials):
                angles = solve_dc(scenario_case(runner.case, config.load_sigma, config.seed, STREAM_TRIAL,
                                                bus, delta_index, trial))
                angles[k] += np.radians(delta)
                for alpha, model in models.items():
                    detector.model_dc = model
                    curves[alpha].add(delta, detector.detect_dc(angles).is_attack)
        runner.tracker.increment_trials(len(config.angle_grid) * config.trials)
    detector.model_dc = base
    rows = []
    for alpha, aggregator in curves.items():
        rows += curve_rows(aggregator, config.angle_magnitudes, alpha_sigma=alpha)
    frame = pd.DataFrame(rows)
    runner.write_csv(frame, "dc_curves.csv")
    runner.log_stats("dc")
    return frame


EXPERIMENTS: Dict[str, Callable] = {
    "tc1": run_tc1,
    "tc2": run_tc2,
    "tc3": run_tc3,
    "tc4": run_tc4,
    "compare": run_compare,
    "diag": run_diagonal_study,
    "dc": run_dc,
}
