import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from src.modules.grid_model import FDIDetectionError, GridCase
from src.modules.power_flow import ComplexState, PowerFlowError, SolverOptions, solve_ac

logger = logging.getLogger(__name__)

# Stream identifiers mixed into every SeedSequence so that scenario, noise and
# trial draws never share a stream even under the same user seed.
STREAM_SCENARIO = 1
STREAM_NOISE = 2
STREAM_TRIAL = 3
STREAM_PREVIOUS = 4


class AttackSpecError(FDIDetectionError):
    """Raised for attacks on unknown buses or on the slack bus."""


class ScenarioError(FDIDetectionError):
    """Raised when too many load scenarios fail to converge."""


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent PCG64 generator for (seed, keys...); identical on every platform."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True)
class NoiseSpec:
    sigma_e: float = 0.0
    seed: int = 0
    stream_keys: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.sigma_e < 0:
            raise ValueError(f"sigma_e must be >= 0, got {self.sigma_e}")


@dataclass(frozen=True)
class AttackTarget:
    bus: int
    delta_angle: float = 0.0
    delta_magnitude: float = 0.0


@dataclass(frozen=True)
class AttackSpec:
    """Polar offsets per target bus. Angles in degrees, magnitudes in p.u."""
    targets: Tuple[AttackTarget, ...] = ()
    slack_bus: int = 1

    @classmethod
    def single(cls, bus: int, delta_angle: float = 0.0, delta_magnitude: float = 0.0,
               slack_bus: int = 1) -> "AttackSpec":
        return cls((AttackTarget(bus, delta_angle, delta_magnitude),), slack_bus)

    @classmethod
    def uniform(cls, buses: Iterable[int], delta_angle: float, delta_magnitude: float,
                slack_bus: int = 1) -> "AttackSpec":
        return cls(tuple(AttackTarget(bus, delta_angle, delta_magnitude) for bus in buses), slack_bus)

    @classmethod
    def per_bus(cls, buses: Sequence[int], delta_angles: Sequence[float], delta_magnitudes: Sequence[float],
                slack_bus: int = 1) -> "AttackSpec":
        if not len(buses) == len(delta_angles) == len(delta_magnitudes):
            raise AttackSpecError("Need one angle and one magnitude offset per attacked bus")
        return cls(tuple(AttackTarget(bus, float(a), float(m))
                         for bus, a, m in zip(buses, delta_angles, delta_magnitudes)), slack_bus)

    def scaled(self, factor: float) -> "AttackSpec":
        """The same attack with every offset multiplied by `factor` (an earlier step of a ramp)."""
        return AttackSpec(tuple(AttackTarget(t.bus, t.delta_angle * factor, t.delta_magnitude * factor)
                                for t in self.targets), self.slack_bus)

    @property
    def is_empty(self) -> bool:
        return len(self.targets) == 0

    def validate(self, size: int):
        for target in self.targets:
            if target.bus == self.slack_bus:
                raise AttackSpecError(f"Attack targets the slack bus {target.bus}")
            if not 1 <= target.bus <= size:
                raise AttackSpecError(f"Attack targets unknown bus {target.bus} (grid has buses 1..{size})")


@dataclass(frozen=True)
class LoadScenarioSpec:
    sigma: float = 0.05
    count: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"Load sigma must be >= 0, got {self.sigma}")
        if self.count < 1:
            raise ValueError(f"Scenario count must be >= 1, got {self.count}")


def scenario_case(case: GridCase, sigma: float, seed: int, *keys: int) -> GridCase:
    """One random load draw: P_k = P0_k |y_P|, Q_k = Q0_k |y_Q| at every pq bus."""
    rng = stream(seed, *keys)
    pq = case.pq_indices
    y_p = np.abs(rng.normal(1.0, sigma, size=pq.size))
    y_q = np.abs(rng.normal(1.0, sigma, size=pq.size))
    p = case.p_set
    q = case.q_set
    p[pq] *= y_p
    q[pq] *= y_q
    return case.with_setpoints(p, q)


def random_scenarios(case: GridCase, spec: LoadScenarioSpec) -> List[GridCase]:
    """`spec.count` randomly scaled copies of the case; scenario i uses stream (seed, i)."""
    return [scenario_case(case, spec.sigma, spec.seed, STREAM_SCENARIO, i) for i in range(spec.count)]


def solved_scenarios(case: GridCase, sigma: float, count: int, seed: int, keys: Sequence[int],
                     opts: SolverOptions = SolverOptions()) -> List[ComplexState]:
    """Solve `count` random scenarios, redrawing non-convergent ones (cap 10 x count draws)."""
    states: List[ComplexState] = []
    index = 0
    cap = 10 * count
    while len(states) < count:
        if index >= cap:
            raise ScenarioError(f"Only {len(states)} of {count} scenarios converged within {cap} draws")
        scenario = scenario_case(case, sigma, seed, *keys, index)
        index += 1
        try:
            states.append(solve_ac(scenario, opts))
        except PowerFlowError as e:
            logger.warning(f"Dropping scenario {index - 1}: {e}")
    return states


def make_historic(case: GridCase, spec: LoadScenarioSpec, opts: SolverOptions = SolverOptions(),
                  sigma_e: float = 0.0) -> List[ComplexState]:
    """Historic estimator outputs: AC power flow over random load scenarios plus PSSE error sigma_e."""
    states = solved_scenarios(case, spec.sigma, spec.count, spec.seed, (STREAM_SCENARIO,), opts)
    logger.info(f"Generated {len(states)} historic states (sigma={spec.sigma}, sigma_e={sigma_e})")
    return estimator_outputs(states, sigma_e, spec.seed)


def estimator_outputs(states: Sequence[ComplexState], sigma_e: float, seed: int) -> List[ComplexState]:
    """Historic state i plus PSSE error drawn from stream (seed, noise, scenario, i)."""
    if sigma_e == 0:
        return list(states)
    return [apply_noise(state, NoiseSpec(sigma_e, seed, (STREAM_SCENARIO, i))) for i, state in enumerate(states)]


def apply_noise(v: ComplexState, spec: NoiseSpec) -> ComplexState:
    """Add zero-mean Gaussian PSSE error with std sigma_e to the real and imaginary parts."""
    if spec.sigma_e == 0:
        return ComplexState(v.v, "noisy")
    rng = stream(spec.seed, STREAM_NOISE, *spec.stream_keys)
    noise = rng.normal(0.0, spec.sigma_e, size=v.size) + 1j * rng.normal(0.0, spec.sigma_e, size=v.size)
    return ComplexState(v.v + noise, "noisy")


def apply_attack(v: ComplexState, spec: AttackSpec) -> ComplexState:
    """Shift magnitude and angle of every target bus; other entries are copied untouched."""
    spec.validate(v.size)
    attacked = np.array(v.v, copy=True)
    for target in spec.targets:
        k = target.bus - 1
        magnitude = abs(attacked[k]) + target.delta_magnitude
        if magnitude <= 0:
            raise AttackSpecError(f"Attack on bus {target.bus} drives |v| to {magnitude:.4f} <= 0")
        if target.delta_angle == 0 and target.delta_magnitude == 0:
            continue
        angle = np.angle(attacked[k]) + np.radians(target.delta_angle)
        attacked[k] = magnitude * np.exp(1j * angle)
    result = ComplexState(attacked, "attacked")
    if logger.isEnabledFor(logging.DEBUG) and not spec.is_empty:
        c = attack_vector(v, result)
        logger.debug(f"Attack on buses {[t.bus for t in spec.targets]}: |c|_max = {np.max(np.abs(c)):.4e}")
    return result


def attack_vector(original: ComplexState, attacked: ComplexState) -> np.ndarray:
    """The additive attack c = v_FDI - v implied by a polar attack."""
    return attacked.v - original.v
