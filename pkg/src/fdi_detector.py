# fdi_detector.py
import logging
from typing import Dict, List, Optional, Sequence

from src.modules.detector import (DetectionReport, DetectorModel, calibrate, calibrate_dc, detect,
                                  detect_dc, detect_smoothness, local_variation)
from src.modules.grid_model import GridCase, laplacian_pair
from src.modules.gsp_core import gft, normalized_frequencies, spectrum_dump
from src.modules.power_flow import ComplexState, SolverOptions, solve_dc
from src.modules.state_attack import LoadScenarioSpec, estimator_outputs, make_historic, random_scenarios

logger = logging.getLogger(__name__)


class FDIDetector:
    """Orchestrates the grid model, historic state generation, calibration and detection."""

    def __init__(self,
                 case: GridCase,
                 alpha_sigma: float = 2.0,
                 alpha_sigma_s: float = 2.0,
                 eps_r: float = 1e-4,
                 eps_j: float = 1e-3,
                 eps_dc: float = 1e-3,
                 threshold_mode: str = "averaged",
                 k_of_4: int = 1,
                 solver_options: SolverOptions = SolverOptions()):
        """Build both Laplacian pairs for the case; calibration happens separately."""
        self.case = case
        self.alpha_sigma = alpha_sigma
        self.alpha_sigma_s = alpha_sigma_s
        self.epsilons = (eps_r, eps_j)
        self.eps_dc = eps_dc
        self.threshold_mode = threshold_mode
        self.k_of_4 = k_of_4
        self.solver_options = solver_options

        self.pair = laplacian_pair(case, "ac")
        self.pair_dc = laplacian_pair(case, "dc")
        self.model: Optional[DetectorModel] = None
        self.model_dc: Optional[DetectorModel] = None

        logger.info(f"FDIDetector initialized for case '{case.name}' ({case.size} buses)")

    def historic_states(self, load_sigma: float, count: int, seed: int, sigma_e: float = 0.0) -> List[ComplexState]:
        return make_historic(self.case, LoadScenarioSpec(load_sigma, count, seed), self.solver_options, sigma_e)

    def calibrate(self, historic: Sequence[ComplexState],
                  cutoff_historic: Optional[Sequence[ComplexState]] = None) -> DetectorModel:
        self.model = calibrate(self.pair, historic, self.epsilons, self.alpha_sigma, self.alpha_sigma_s,
                               self.threshold_mode, self.k_of_4, cutoff_historic)
        return self.model

    def calibrate_from_scenarios(self, load_sigma: float = 0.05, count: int = 100, seed: int = 0,
                                 sigma_e: float = 0.0) -> DetectorModel:
        """Calibrate on estimator outputs with PSSE error sigma_e; use the same sigma_e at detection time."""
        clean = self.historic_states(load_sigma, count, seed)
        return self.calibrate(estimator_outputs(clean, sigma_e, seed), cutoff_historic=clean)

    def calibrate_dc(self, load_sigma: float = 0.05, count: int = 100, seed: int = 0) -> DetectorModel:
        scenarios = random_scenarios(self.case, LoadScenarioSpec(load_sigma, count, seed))
        angles = [solve_dc(scenario) for scenario in scenarios]
        self.model_dc = calibrate_dc(self.pair_dc, angles, self.eps_dc, self.alpha_sigma,
                                     self.alpha_sigma_s, self.threshold_mode)
        return self.model_dc

    def _require_model(self) -> DetectorModel:
        if self.model is None:
            raise RuntimeError("Detector is not calibrated; call calibrate() first")
        return self.model

    def detect(self, state: ComplexState) -> DetectionReport:
        return detect(self._require_model(), state)

    def detect_smoothness(self, state: ComplexState) -> DetectionReport:
        return detect_smoothness(self._require_model(), state)

    def detect_dc(self, angles) -> DetectionReport:
        if self.model_dc is None:
            raise RuntimeError("DC detector is not calibrated; call calibrate_dc() first")
        return detect_dc(self.model_dc, angles)


def inspect_model(model: DetectorModel, states: Optional[Dict[str, ComplexState]] = None) -> Dict:
    """Spectra and filter responses of every term, optionally with GFT dumps of given states."""
    report = {"mode": model.mode, "alpha_sigma": model.alpha_sigma, "threshold_mode": model.threshold_mode,
              "terms": [], "smoothness": [{"part": s.part, "mu": s.mu, "sigma": s.sigma, "tau_S": s.threshold}
                                          for s in model.smoothness]}
    for term in model.terms:
        entry = {
            "term": term.term.key,
            "label": term.term.label,
            "frequencies": normalized_frequencies(term.basis).tolist(),
            "eigenvalues": term.basis.eigenvalues.tolist(),
            "cutoff_index": term.design.cutoff_index,
            "cutoff_lambda": term.design.cutoff_lambda,
            "response": term.design.response.astype(int).tolist(),
            "threshold": term.threshold,
            "mu": term.mu,
            "sigma": term.sigma,
        }
        if states and model.mode == "ac":
            entry["spectra"] = {}
            for name, state in states.items():
                spectrum = gft(term.basis, state.part(term.term.part))
                filtered = spectrum.coeffs * term.design.response
                entry["spectra"][name] = {
                    "gft": spectrum_dump(term.basis, spectrum),
                    "filtered": [{"frequency": p["frequency"], "coefficient": float(c)}
                                 for p, c in zip(spectrum_dump(term.basis, spectrum), filtered)],
                }
        report["terms"].append(entry)
    if states and model.mode == "ac":
        report["local_variation"] = {name: {part: values.tolist()
                                            for part, values in local_variation(model, state).items()}
                                     for name, state in states.items()}
    return report
