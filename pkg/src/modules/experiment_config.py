import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from src.modules.grid_model import FDIDetectionError, bundled_case_path

logger = logging.getLogger(__name__)


class ConfigError(FDIDetectionError):
    """Raised for invalid experiment configuration files."""


def _grid(start: float, stop: float, step: float, digits: int) -> List[float]:
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, digits) for i in range(count)]


@dataclass
class ExperimentConfig:
    """Monte Carlo experiment settings; mirrors the JSON config file one-to-one."""

    # Grid
    case: str = str(bundled_case_path("ieee14"))
    extra_cases: List[str] = field(default_factory=list)

    # Historic data and trials
    load_sigma: float = 0.05
    n_historic: int = 100
    trials: int = 100

    # Attack sweeps
    angle_grid: List[float] = field(default_factory=lambda: _grid(-12.0, 12.0, 1.0, 6))
    magnitude_grid: List[float] = field(default_factory=lambda: _grid(-0.2, 0.2, 0.02, 6))
    # PSSE error of every estimator output (historic and trial states); tc3 overrides it per noise level
    estimation_sigma: float = 0.001
    noise_sigmas: List[float] = field(default_factory=lambda: [0.0, 0.001, 0.005, 0.01])

    # Detector
    alpha_sigmas: List[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    alpha_sigma_s: float = 2.0
    eps_r: float = 1e-4
    eps_j: float = 1e-3
    eps_dc: float = 1e-3
    threshold_mode: str = "averaged"
    k_of_4: int = 1

    # Test case 4
    tc4_buses: List[int] = field(default_factory=lambda: [6, 9, 10, 11, 12, 13, 14])
    # Per-bus offsets, same order as tc4_buses
    tc4_delta_angles: List[float] = field(default_factory=lambda: [4.0, -8.0, 4.0, -4.0, 4.0, -4.0, 4.0])
    tc4_delta_magnitudes: List[float] = field(default_factory=lambda: [0.02, -0.02, 0.02, -0.02, 0.02, -0.02, 0.02])

    # Baseline comparison: estimator cycles over which the attacker ramps the offset in
    residual_ramp_steps: int = 10

    # Run control
    seed: int = 2019
    workers: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("angle_grid", "magnitude_grid", "noise_sigmas", "alpha_sigmas", "tc4_buses"):
            if not getattr(self, name):
                raise ConfigError(f"'{name}' must not be empty")
        if self.trials < 1:
            raise ConfigError(f"'trials' must be >= 1, got {self.trials}")
        if self.n_historic < 2:
            raise ConfigError(f"'n_historic' must be >= 2, got {self.n_historic}")
        if self.load_sigma < 0:
            raise ConfigError(f"'load_sigma' must be >= 0, got {self.load_sigma}")
        if any(s < 0 for s in self.noise_sigmas):
            raise ConfigError("'noise_sigmas' must be >= 0")
        if self.estimation_sigma < 0:
            raise ConfigError(f"'estimation_sigma' must be >= 0, got {self.estimation_sigma}")
        for name in ("tc4_delta_angles", "tc4_delta_magnitudes"):
            if len(getattr(self, name)) != len(self.tc4_buses):
                raise ConfigError(f"'{name}' needs one entry per bus of 'tc4_buses'")
        if self.residual_ramp_steps < 1:
            raise ConfigError(f"'residual_ramp_steps' must be >= 1, got {self.residual_ramp_steps}")
        for name in ("eps_r", "eps_j", "eps_dc"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"'{name}' must be positive")
        if self.threshold_mode not in ("averaged", "max"):
            raise ConfigError(f"'threshold_mode' must be 'averaged' or 'max', got {self.threshold_mode!r}")
        if not 1 <= self.k_of_4 <= 4:
            raise ConfigError(f"'k_of_4' must be in 1..4, got {self.k_of_4}")
        if self.workers < 1:
            raise ConfigError(f"'workers' must be >= 1, got {self.workers}")

    @property
    def angle_magnitudes(self) -> List[float]:
        """Distinct |delta| values of the angle sweep, ascending."""
        return sorted(set(abs(d) for d in self.angle_grid))

    @property
    def magnitude_magnitudes(self) -> List[float]:
        return sorted(set(round(abs(d), 12) for d in self.magnitude_grid))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"Invalid config: {e}") from e


def load_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """Load a JSON config; relative case paths resolve against the config file's directory."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")

    for key in ("case",):
        if key in data and not Path(data[key]).is_absolute():
            data[key] = str((path.parent / data[key]).resolve())
    if "extra_cases" in data:
        data["extra_cases"] = [c if Path(c).is_absolute() else str((path.parent / c).resolve())
                               for c in data["extra_cases"]]
    config = ExperimentConfig.from_dict(data)
    logger.info(f"Experiment config loaded from {path}")
    return config
