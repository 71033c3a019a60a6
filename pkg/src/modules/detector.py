import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.modules.grid_model import FDIDetectionError, LaplacianPair
from src.modules.gsp_core import (GhpfDesign, SpectralBasis, design_poly_filter, filter_and_stat,
                                  gft, select_cutoff, spectral_basis, total_variation)
from src.modules.power_flow import ComplexState

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
THRESHOLD_MODES = ("averaged", "max")

# (matrix, part) in the order of the four-term decision rule
AC_TERMS = (("yr", "real"), ("yj", "real"), ("yj", "imag"), ("yr", "imag"))
DC_TERMS = (("yr", "angle"),)
SMOOTHNESS_MATRIX = {"real": "yr", "imag": "yj", "angle": "yr"}


class CalibrationError(FDIDetectionError):
    """Raised when a detector cannot be calibrated from the given historic states."""


class ModelFormatError(FDIDetectionError):
    """Raised for unreadable or unsupported model files."""


class BisectionError(FDIDetectionError):
    """Raised when a baseline threshold search does not converge."""


class Hypothesis(str, Enum):
    H0 = "H0"
    H1 = "H1"


@dataclass(frozen=True)
class TermId:
    matrix: str
    part: str

    @property
    def key(self) -> str:
        return f"{self.matrix}/{self.part}"

    @property
    def label(self) -> str:
        """Psi_<matrix>^<part> in R/J notation, e.g. 'psi_J^R' for (yj, real)."""
        matrix = "R" if self.matrix == "yr" else "J"
        part = {"real": "R", "imag": "J"}.get(self.part, self.part)
        return f"psi_{matrix}^{part}"

    @classmethod
    def from_key(cls, key: str) -> "TermId":
        matrix, part = key.split("/")
        return cls(matrix, part)


@dataclass(frozen=True)
class TermModel:
    term: TermId
    basis: SpectralBasis
    design: GhpfDesign
    mu: float
    sigma: float
    psi_max: float
    threshold: float

    def to_dict(self) -> Dict:
        return {"matrix": self.term.matrix, "part": self.term.part,
                "basis": self.basis.to_dict(), "design": self.design.to_dict(),
                "mu": self.mu, "sigma": self.sigma, "psi_max": self.psi_max,
                "threshold": self.threshold}

    @classmethod
    def from_dict(cls, data: Dict) -> "TermModel":
        return cls(term=TermId(data["matrix"], data["part"]),
                   basis=SpectralBasis.from_dict(data["basis"]),
                   design=GhpfDesign.from_dict(data["design"]),
                   mu=float(data["mu"]), sigma=float(data["sigma"]),
                   psi_max=float(data["psi_max"]), threshold=float(data["threshold"]))


@dataclass(frozen=True)
class SmoothnessModel:
    part: str
    mu: float
    sigma: float
    threshold: float


@dataclass(frozen=True)
class DetectorModel:
    """Calibrated cutoffs, filters and thresholds. Immutable; use with_alpha for new thresholds."""
    terms: Tuple[TermModel, ...]
    smoothness: Tuple[SmoothnessModel, ...]
    pair: LaplacianPair
    alpha_sigma: float
    alpha_sigma_s: float
    n_historic: int
    threshold_mode: str = "averaged"
    k_of_4: int = 1

    @property
    def mode(self) -> str:
        return self.pair.mode

    @property
    def size(self) -> int:
        return self.pair.size

    def term(self, key: str) -> TermModel:
        for term in self.terms:
            if term.term.key == key:
                return term
        raise KeyError(f"Model has no term '{key}'")

    def with_alpha(self, alpha_sigma: Optional[float] = None,
                   alpha_sigma_s: Optional[float] = None,
                   threshold_mode: Optional[str] = None) -> "DetectorModel":
        """Same calibration, thresholds recomputed for other confidence scales."""
        alpha_sigma = self.alpha_sigma if alpha_sigma is None else alpha_sigma
        alpha_sigma_s = self.alpha_sigma_s if alpha_sigma_s is None else alpha_sigma_s
        threshold_mode = threshold_mode or self.threshold_mode
        terms = tuple(replace(t, threshold=_threshold(t.mu, t.sigma, t.psi_max, alpha_sigma, threshold_mode))
                      for t in self.terms)
        smoothness = tuple(replace(s, threshold=s.mu + alpha_sigma_s * s.sigma) for s in self.smoothness)
        return replace(self, terms=terms, smoothness=smoothness, alpha_sigma=alpha_sigma,
                       alpha_sigma_s=alpha_sigma_s, threshold_mode=threshold_mode)

    def to_dict(self) -> Dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "mode": self.mode,
            "alpha_sigma": self.alpha_sigma,
            "alpha_sigma_s": self.alpha_sigma_s,
            "n_historic": self.n_historic,
            "threshold_mode": self.threshold_mode,
            "k_of_4": self.k_of_4,
            "yr": self.pair.yr.tolist(),
            "yj": self.pair.yj.tolist(),
            "terms": [t.to_dict() for t in self.terms],
            "smoothness": [{"part": s.part, "mu": s.mu, "sigma": s.sigma, "threshold": s.threshold}
                           for s in self.smoothness],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "DetectorModel":
        version = data.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise ModelFormatError(f"Unsupported model format version {version!r} "
                                   f"(expected {MODEL_FORMAT_VERSION})")
        try:
            pair = LaplacianPair(np.asarray(data["yr"], dtype=float), np.asarray(data["yj"], dtype=float),
                                 data["mode"])
            return cls(terms=tuple(TermModel.from_dict(t) for t in data["terms"]),
                       smoothness=tuple(SmoothnessModel(s["part"], float(s["mu"]), float(s["sigma"]),
                                                        float(s["threshold"])) for s in data["smoothness"]),
                       pair=pair,
                       alpha_sigma=float(data["alpha_sigma"]),
                       alpha_sigma_s=float(data["alpha_sigma_s"]),
                       n_historic=int(data["n_historic"]),
                       threshold_mode=data.get("threshold_mode", "averaged"),
                       k_of_4=int(data.get("k_of_4", 1)))
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFormatError(f"Malformed model: {e}") from e


@dataclass(frozen=True)
class TermResult:
    term: TermId
    psi: float
    tau: float

    @property
    def exceeded(self) -> bool:
        return self.psi > self.tau


@dataclass(frozen=True)
class SmoothnessResult:
    part: str
    value: float
    tau: float

    @property
    def exceeded(self) -> bool:
        return self.value > self.tau


@dataclass(frozen=True)
class DetectionReport:
    verdict: Hypothesis
    terms: Tuple[TermResult, ...] = ()
    smoothness: Tuple[SmoothnessResult, ...] = ()

    @property
    def triggers(self) -> List[str]:
        return [t.term.key for t in self.terms if t.exceeded]

    @property
    def real_part_fired(self) -> bool:
        return any(t.exceeded for t in self.terms if t.term.part == "real")

    @property
    def imag_part_fired(self) -> bool:
        return any(t.exceeded for t in self.terms if t.term.part == "imag")

    @property
    def is_attack(self) -> bool:
        return self.verdict is Hypothesis.H1

    def to_dict(self) -> Dict:
        return {
            "verdict": self.verdict.value,
            "triggers": self.triggers,
            "terms": [{"term": t.term.key, "label": t.term.label, "psi": t.psi, "tau": t.tau,
                       "exceeded": t.exceeded} for t in self.terms],
            "smoothness": [{"part": s.part, "S": s.value, "tau_S": s.tau, "exceeded": s.exceeded}
                           for s in self.smoothness],
        }


def _threshold(mu: float, sigma: float, psi_max: float, alpha_sigma: float, mode: str) -> float:
    if mode == "averaged":
        return mu + alpha_sigma * sigma
    if mode == "max":
        return psi_max
    raise ValueError(f"Unknown threshold mode '{mode}' (expected one of {THRESHOLD_MODES})")


def _stats(values: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=float)
    return float(np.mean(values)), float(np.std(values, ddof=1))


def _calibrate_term(term: TermId, basis: SpectralBasis, signals: Sequence[np.ndarray], epsilon: float,
                    alpha_sigma: float, threshold_mode: str,
                    cutoff_signals: Optional[Sequence[np.ndarray]] = None) -> TermModel:
    """Cutoff from `cutoff_signals` (default `signals`), Psi statistics from `signals`."""
    spectra = [gft(basis, s) for s in (signals if cutoff_signals is None else cutoff_signals)]
    design = design_poly_filter(basis, select_cutoff(basis, spectra, epsilon))
    psis = [filter_and_stat(basis, design, s)[1] for s in signals]
    mu, sigma = _stats(psis)
    psi_max = float(np.max(psis))
    threshold = _threshold(mu, sigma, psi_max, alpha_sigma, threshold_mode)
    logger.debug(f"Term {term.label}: gamma={design.cutoff_index}, mu={mu:.4e}, sigma={sigma:.4e}, "
                 f"tau={threshold:.4e}")
    return TermModel(term, basis, design, mu, sigma, psi_max, threshold)


def _check_historic(count: int, sizes: Sequence[int], expected: int):
    if count < 2:
        raise CalibrationError(f"Calibration needs at least 2 historic states, got {count}")
    bad = [i for i, size in enumerate(sizes) if size != expected]
    if bad:
        raise CalibrationError(f"Historic states {bad} do not match the grid size {expected}")


def calibrate(pair: LaplacianPair, historic: Sequence[ComplexState], epsilons: Tuple[float, float] = (1e-4, 1e-3),
              alpha_sigma: float = 2.0, alpha_sigma_s: float = 2.0, threshold_mode: str = "averaged",
              k_of_4: int = 1, cutoff_historic: Optional[Sequence[ComplexState]] = None) -> DetectorModel:
    """Four-term calibration: cutoffs per (matrix, part), Psi statistics and thresholds.

    `cutoff_historic` are the noiseless load-flow states behind noisy `historic` estimator outputs; when
    given, the cutoffs come from them and only the Psi statistics see the PSSE error.
    """
    _check_historic(len(historic), [s.size for s in historic], pair.size)
    design_states = historic if cutoff_historic is None else cutoff_historic
    _check_historic(len(design_states), [s.size for s in design_states], pair.size)
    if not 1 <= k_of_4 <= len(AC_TERMS):
        raise CalibrationError(f"k_of_4 must be in 1..{len(AC_TERMS)}, got {k_of_4}")
    epsilon = {"real": epsilons[0], "imag": epsilons[1]}
    bases = {name: spectral_basis(pair.matrix(name), source=f"{pair.mode}/{name}") for name in ("yr", "yj")}

    terms = tuple(_calibrate_term(TermId(matrix, part), bases[matrix], [s.part(part) for s in historic],
                                  epsilon[part], alpha_sigma, threshold_mode,
                                  [s.part(part) for s in design_states])
                  for matrix, part in AC_TERMS)

    smoothness = []
    for part in ("real", "imag"):
        laplacian = pair.matrix(SMOOTHNESS_MATRIX[part])
        mu, sigma = _stats([total_variation(laplacian, s.part(part))[0] for s in historic])
        smoothness.append(SmoothnessModel(part, mu, sigma, mu + alpha_sigma_s * sigma))

    logger.info(f"Detector calibrated on {len(historic)} historic states "
                f"(alpha_sigma={alpha_sigma}, mode={threshold_mode})")
    return DetectorModel(terms=terms, smoothness=tuple(smoothness), pair=pair, alpha_sigma=alpha_sigma,
                         alpha_sigma_s=alpha_sigma_s, n_historic=len(historic),
                         threshold_mode=threshold_mode, k_of_4=k_of_4)


def calibrate_dc(pair: LaplacianPair, historic_angles: Sequence[np.ndarray], epsilon: float = 1e-3,
                 alpha_sigma: float = 2.0, alpha_sigma_s: float = 2.0,
                 threshold_mode: str = "averaged") -> DetectorModel:
    """Single-term calibration on the DC Laplacian with angle signals (radians)."""
    if pair.mode != "dc":
        raise CalibrationError("calibrate_dc needs a DC Laplacian pair")
    angles = [np.asarray(a, dtype=float) for a in historic_angles]
    _check_historic(len(angles), [a.shape[0] for a in angles], pair.size)
    basis = spectral_basis(pair.yr, source="dc/yr")
    term = _calibrate_term(TermId("yr", "angle"), basis, angles, epsilon, alpha_sigma, threshold_mode)
    mu, sigma = _stats([total_variation(pair.yr, a)[0] for a in angles])
    smoothness = (SmoothnessModel("angle", mu, sigma, mu + alpha_sigma_s * sigma),)
    logger.info(f"DC detector calibrated on {len(angles)} historic angle vectors")
    return DetectorModel(terms=(term,), smoothness=smoothness, pair=pair, alpha_sigma=alpha_sigma,
                         alpha_sigma_s=alpha_sigma_s, n_historic=len(angles),
                         threshold_mode=threshold_mode, k_of_4=1)


def _smoothness_results(model: DetectorModel, signals: Dict[str, np.ndarray]) -> Tuple[SmoothnessResult, ...]:
    results = []
    for s in model.smoothness:
        value = total_variation(model.pair.matrix(SMOOTHNESS_MATRIX[s.part]), signals[s.part])[0]
        results.append(SmoothnessResult(s.part, value, s.threshold))
    return tuple(results)


def _term_results(model: DetectorModel, signals: Dict[str, np.ndarray]) -> Tuple[TermResult, ...]:
    return tuple(TermResult(t.term, filter_and_stat(t.basis, t.design, signals[t.term.part])[1], t.threshold)
                 for t in model.terms)


def _check_size(model: DetectorModel, size: int):
    if size != model.size:
        raise CalibrationError(f"State has {size} buses, model was calibrated for {model.size}")


def detect(model: DetectorModel, state: ComplexState) -> DetectionReport:
    """Four-term decision rule: H1 when at least k_of_4 terms exceed their thresholds."""
    _check_size(model, state.size)
    signals = {"real": state.real, "imag": state.imag}
    terms = _term_results(model, signals)
    fired = sum(t.exceeded for t in terms)
    verdict = Hypothesis.H1 if fired >= model.k_of_4 else Hypothesis.H0
    return DetectionReport(verdict, terms, _smoothness_results(model, signals))


def detect_smoothness(model: DetectorModel, state: ComplexState) -> DetectionReport:
    """H1 when the total variation of either signal part exceeds its smoothness threshold."""
    _check_size(model, state.size)
    smoothness = _smoothness_results(model, {"real": state.real, "imag": state.imag})
    verdict = Hypothesis.H1 if any(s.exceeded for s in smoothness) else Hypothesis.H0
    return DetectionReport(verdict, (), smoothness)


def detect_dc(model_dc: DetectorModel, angle_state) -> DetectionReport:
    angles = np.asarray(angle_state, dtype=float)
    _check_size(model_dc, angles.shape[0])
    signals = {"angle": angles}
    terms = _term_results(model_dc, signals)
    verdict = Hypothesis.H1 if any(t.exceeded for t in terms) else Hypothesis.H0
    return DetectionReport(verdict, terms, _smoothness_results(model_dc, signals))


def local_variation(model: DetectorModel, state: ComplexState) -> Dict[str, np.ndarray]:
    """Per-bus local variation of each signal part (node colouring of the grid graph)."""
    return {part: total_variation(model.pair.matrix(SMOOTHNESS_MATRIX[part]), state.part(part))[1]
            for part in ("real", "imag")}


def baseline_norm(state: ComplexState, threshold: float) -> Hypothesis:
    """'Energy residue' heuristic: H1 when ||v_t|| exceeds the threshold."""
    return Hypothesis.H1 if float(np.linalg.norm(state.v)) > threshold else Hypothesis.H0


def baseline_residual(state_t: ComplexState, state_prev: ComplexState, threshold: float) -> Hypothesis:
    """Consecutive-state residual: H1 when ||v_t - v_{t-1}|| exceeds the threshold."""
    return Hypothesis.H1 if float(np.linalg.norm(state_t.v - state_prev.v)) > threshold else Hypothesis.H0


def calibrate_baseline_threshold(clean_statistics: Sequence[float], target_rate: float,
                                 tol: float = 1e-12, max_iter: int = 200) -> float:
    """Bisection for the smallest threshold whose clean exceedance rate is <= target_rate."""
    if not 0.0 <= target_rate <= 1.0:
        raise ValueError(f"Target false alarm rate must be in [0, 1], got {target_rate}")
    values = np.asarray(clean_statistics, dtype=float)
    if values.size == 0:
        raise BisectionError("No clean statistics to calibrate against")

    def rate(threshold: float) -> float:
        return float(np.mean(values > threshold))

    low = float(values.min()) - 1.0
    high = float(values.max())
    width = max(1.0, abs(high))
    for iteration in range(max_iter):
        if high - low <= tol * width:
            logger.debug(f"Baseline bisection converged after {iteration} steps: "
                         f"threshold={high:.6e}, rate={rate(high):.3f}")
            return high
        middle = 0.5 * (low + high)
        if rate(middle) > target_rate:
            low = middle
        else:
            high = middle
    raise BisectionError(f"Baseline threshold bisection did not converge in {max_iter} steps")


def save_model(model: DetectorModel, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), indent=2))
    logger.info(f"Model written to {path}")


def load_model(path: Union[str, Path]) -> DetectorModel:
    path = Path(path)
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"Cannot read model {path}: {e}") from e
    return DetectorModel.from_dict(data)
