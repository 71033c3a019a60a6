import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg

from src.modules.grid_model import (FDIDetectionError, GridCase, build_admittance_ac,
                                    build_admittance_dc)

logger = logging.getLogger(__name__)

PROVENANCES = ("clean", "noisy", "attacked")


class PowerFlowError(FDIDetectionError):
    """Raised when a power flow cannot be solved."""


class ConvergenceError(PowerFlowError):
    def __init__(self, iterations: int, mismatch: float):
        super().__init__(f"Newton-Raphson did not converge in {iterations} iterations "
                         f"(final mismatch {mismatch:.3e} p.u.)")
        self.iterations = iterations
        self.mismatch = mismatch


class SingularJacobianError(PowerFlowError):
    """Raised when the Jacobian (or the reduced DC matrix) is singular."""


@dataclass(frozen=True)
class ComplexState:
    """Bus-voltage vector v (p.u.) tagged with where it came from."""
    v: np.ndarray
    provenance: str = "clean"

    def __post_init__(self):
        v = np.array(self.v, dtype=complex, copy=True)
        if v.ndim != 1:
            raise ValueError(f"State must be a vector, got shape {v.shape}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"Unknown provenance '{self.provenance}' (expected one of {PROVENANCES})")
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    @property
    def size(self) -> int:
        return self.v.shape[0]

    @property
    def real(self) -> np.ndarray:
        return self.v.real

    @property
    def imag(self) -> np.ndarray:
        return self.v.imag

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def angle(self) -> np.ndarray:
        return np.angle(self.v)

    def part(self, name: str) -> np.ndarray:
        if name == "real":
            return self.real
        if name == "imag":
            return self.imag
        raise KeyError(f"Unknown signal part '{name}' (expected 'real' or 'imag')")

    @classmethod
    def from_polar(cls, magnitude, angle_rad, provenance: str = "clean") -> "ComplexState":
        return cls(np.asarray(magnitude) * np.exp(1j * np.asarray(angle_rad)), provenance)

    def to_dict(self) -> Dict:
        return {
            "provenance": self.provenance,
            "buses": [{"id": k + 1, "v": float(abs(value)), "angle_deg": float(np.degrees(np.angle(value)))}
                      for k, value in enumerate(self.v)],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ComplexState":
        """Accepts either the polar per-bus form of to_dict or {'real': [...], 'imag': [...]}."""
        provenance = data.get("provenance", "clean")
        if "buses" in data:
            buses = sorted(data["buses"], key=lambda entry: entry["id"])
            magnitude = np.array([entry["v"] for entry in buses], dtype=float)
            angle = np.radians([entry["angle_deg"] for entry in buses])
            return cls.from_polar(magnitude, angle, provenance)
        if "real" in data and "imag" in data:
            return cls(np.asarray(data["real"], dtype=float) + 1j * np.asarray(data["imag"], dtype=float),
                       provenance)
        raise ValueError("State JSON needs either 'buses' or 'real'/'imag' fields")


@dataclass(frozen=True)
class PowerInjection:
    """Complex bus injections s (p.u.), generation positive."""
    s: np.ndarray

    def __post_init__(self):
        s = np.array(self.s, dtype=complex, copy=True)
        if not np.all(np.isfinite(s)):
            raise ValueError("Power injections must be finite")
        s.flags.writeable = False
        object.__setattr__(self, "s", s)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 20
    flat_start: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"Solver tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True)
class SolveInfo:
    iterations: int
    mismatch: float
    converged: bool = field(default=True)


def _apparent_power(y: np.ndarray, v: np.ndarray) -> np.ndarray:
    return v * np.conj(y @ v)


def _ds_dv(y: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of s = diag(v) conj(Y v) w.r.t. magnitudes and angles."""
    current = y @ v
    diag_v = np.diag(v)
    diag_current = np.diag(current)
    diag_v_norm = np.diag(v / np.abs(v))
    ds_dvm = diag_v @ np.conj(y @ diag_v_norm) + np.conj(diag_current) @ diag_v_norm
    ds_dva = 1j * diag_v @ np.conj(diag_current - y @ diag_v)
    return ds_dvm, ds_dva


def _initial_voltage(case: GridCase, opts: SolverOptions, initial: Optional[ComplexState]) -> np.ndarray:
    if not opts.flat_start and initial is not None:
        v = np.array(initial.v, dtype=complex)
    else:
        v = np.ones(case.size, dtype=complex)
    magnitude = np.abs(v)
    angle = np.angle(v)
    for k, bus in enumerate(case.buses):
        if bus.kind in ("slack", "pv"):
            magnitude[k] = bus.v_set
    angle[case.slack_index] = 0.0
    return magnitude * np.exp(1j * angle)


def solve_ac_with_info(case: GridCase, opts: SolverOptions = SolverOptions(),
                       initial: Optional[ComplexState] = None) -> Tuple[ComplexState, SolveInfo]:
    """Polar Newton-Raphson AC power flow; returns the clean state and iteration statistics."""
    y = build_admittance_ac(case).y
    pv = case.pv_indices
    pq = case.pq_indices
    pvpq = np.sort(np.concatenate((pv, pq)))
    s_spec = case.p_set + 1j * case.q_set

    v = _initial_voltage(case, opts, initial)
    magnitude = np.abs(v)
    angle = np.angle(v)

    def mismatch_vector(voltage: np.ndarray) -> np.ndarray:
        mis = _apparent_power(y, voltage) - s_spec
        return np.concatenate((mis.real[pvpq], mis.imag[pq]))

    f = mismatch_vector(v)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    iterations = 0
    while norm >= opts.tol:
        if iterations >= opts.max_iter:
            raise ConvergenceError(iterations, norm)
        ds_dvm, ds_dva = _ds_dv(y, v)
        jacobian = np.block([
            [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
            [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
        ])
        try:
            dx = scipy.linalg.solve(jacobian, -f)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
            raise SingularJacobianError(
                f"Singular Jacobian at iteration {iterations + 1}: degenerate operating point") from e
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError(f"Non-finite Newton step at iteration {iterations + 1}")
        angle[pvpq] += dx[:len(pvpq)]
        magnitude[pq] += dx[len(pvpq):]
        v = magnitude * np.exp(1j * angle)
        f = mismatch_vector(v)
        norm = float(np.max(np.abs(f)))
        iterations += 1
        logger.debug(f"NR iteration {iterations}: mismatch {norm:.3e}")

    if np.any(magnitude <= 0):
        raise PowerFlowError("Power flow converged to a non-physical state with |v| <= 0")
    return ComplexState(v, "clean"), SolveInfo(iterations=iterations, mismatch=norm)


def solve_ac(case: GridCase, opts: SolverOptions = SolverOptions(),
             initial: Optional[ComplexState] = None) -> ComplexState:
    """Solve the AC power flow s = diag(v) conj(Y v) for the true grid state."""
    state, _ = solve_ac_with_info(case, opts, initial)
    return state


def solve_dc(case: GridCase) -> np.ndarray:
    """Solve p = Y_DC phi with the slack angle pinned to zero. Returns angles in radians."""
    y_dc = build_admittance_dc(case).yr
    slack = case.slack_index
    keep = np.array([k for k in range(case.size) if k != slack], dtype=int)
    p = case.p_set
    reduced = y_dc[np.ix_(keep, keep)]
    try:
        reduced_angles = scipy.linalg.solve(reduced, p[keep], assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise SingularJacobianError("Reduced DC matrix is singular (disconnected grid?)") from e
    angles = np.zeros(case.size)
    angles[keep] = reduced_angles
    residual = float(np.max(np.abs(reduced @ reduced_angles - p[keep]))) if keep.size else 0.0
    if residual >= 1e-10:
        logger.warning(f"DC power flow residual {residual:.3e} above 1e-10")
    return angles


def injections_from_state(case: GridCase, v: ComplexState) -> PowerInjection:
    """Evaluate s = diag(v) conj(Y v)."""
    if v.size != case.size:
        raise ValueError(f"State has {v.size} entries, case has {case.size} buses")
    y = build_admittance_ac(case).y
    return PowerInjection(_apparent_power(y, v.v))


def max_mismatch(case: GridCase, v: ComplexState) -> float:
    """Largest power mismatch over the specified quantities (P at pv/pq, Q at pq)."""
    s = injections_from_state(case, v).s - (case.p_set + 1j * case.q_set)
    pvpq = np.sort(np.concatenate((case.pv_indices, case.pq_indices)))
    parts = np.concatenate((np.abs(s.real[pvpq]), np.abs(s.imag[case.pq_indices])))
    return float(parts.max()) if parts.size else 0.0
