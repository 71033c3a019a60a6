"""Graph-signal tools on real Laplacians: spectral basis, GFT, total variation,
cutoff selection and graph high-pass filtering."""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from src.modules.grid_model import FDIDetectionError, LaplacianError

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-10
TIE_TOLERANCE = 1e-9
POLY_MAX_SIZE = 24
POLY_RESIDUAL_TOLERANCE = 1e-6


class CutoffSelectionError(FDIDetectionError):
    def __init__(self, message: str, state_index: Optional[int] = None):
        super().__init__(message)
        self.state_index = state_index


class FilterDesignError(FDIDetectionError):
    """Raised when no polynomial can realise the requested frequency response."""


def _frozen(array, dtype=float) -> np.ndarray:
    array = np.array(array, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class SpectralBasis:
    """Ascending eigenvalues and orthonormal eigenvectors (columns) of a real Laplacian."""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _frozen(self.eigenvectors))

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def laplacian(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T

    def tie_classes(self) -> List[List[int]]:
        """Groups of indices whose eigenvalues coincide within tolerance."""
        scale = max(1.0, float(np.max(np.abs(self.eigenvalues))))
        classes = [[0]]
        for i in range(1, self.size):
            if self.eigenvalues[i] - self.eigenvalues[classes[-1][-1]] <= TIE_TOLERANCE * scale:
                classes[-1].append(i)
            else:
                classes.append([i])
        return classes

    def to_dict(self) -> Dict:
        return {"source": self.source,
                "eigenvalues": self.eigenvalues.tolist(),
                "eigenvectors": self.eigenvectors.tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> "SpectralBasis":
        return cls(np.asarray(data["eigenvalues"], dtype=float),
                   np.asarray(data["eigenvectors"], dtype=float),
                   data.get("source", ""))


@dataclass(frozen=True)
class Spectrum:
    """GFT coefficients of one real signal, ordered by ascending graph frequency."""
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _frozen(self.coeffs))

    @property
    def energy(self) -> np.ndarray:
        return self.coeffs ** 2

    def tail_energy(self, gamma: int) -> float:
        """Energy of the coefficients gamma..M (1-based)."""
        return float(np.sum(self.energy[gamma - 1:]))


@dataclass(frozen=True)
class GhpfDesign:
    """Graph high-pass filter: response_i = 1 iff lambda_i > cutoff_lambda."""
    cutoff_index: int
    cutoff_lambda: float
    response: np.ndarray
    poly_coeffs: Optional[np.ndarray] = None
    poly_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "response", _frozen(self.response))
        if self.poly_coeffs is not None:
            object.__setattr__(self, "poly_coeffs", _frozen(self.poly_coeffs))

    @property
    def scaled_coeffs(self) -> np.ndarray:
        """Coefficients of the same polynomial in the normalised variable lambda / poly_scale."""
        if self.poly_coeffs is None:
            raise FilterDesignError("Filter has no polynomial realisation")
        return self.poly_coeffs * self.poly_scale ** np.arange(self.poly_coeffs.size)

    def evaluate(self, lambdas) -> np.ndarray:
        """Evaluate h(lambda) = h_0 + h_1 lambda + ... + h_L lambda^L."""
        x = np.asarray(lambdas, dtype=float) / self.poly_scale
        return np.polynomial.polynomial.polyval(x, self.scaled_coeffs)

    def to_dict(self) -> Dict:
        return {"cutoff_index": self.cutoff_index,
                "cutoff_lambda": self.cutoff_lambda,
                "response": self.response.astype(int).tolist(),
                "poly_coeffs": None if self.poly_coeffs is None else self.poly_coeffs.tolist(),
                "poly_scale": self.poly_scale}

    @classmethod
    def from_dict(cls, data: Dict) -> "GhpfDesign":
        coeffs = data.get("poly_coeffs")
        return cls(cutoff_index=int(data["cutoff_index"]),
                   cutoff_lambda=float(data["cutoff_lambda"]),
                   response=np.asarray(data["response"], dtype=float),
                   poly_coeffs=None if coeffs is None else np.asarray(coeffs, dtype=float),
                   poly_scale=float(data.get("poly_scale", 1.0)))


def spectral_basis(l: np.ndarray, source: str = "") -> SpectralBasis:
    """Eigendecomposition L = U diag(lambda) U^T with a deterministic sign per eigenvector."""
    l = np.asarray(l, dtype=float)
    if l.ndim != 2 or l.shape[0] != l.shape[1]:
        raise LaplacianError(f"Laplacian must be square, got shape {l.shape}")
    asymmetry = float(np.max(np.abs(l - l.T))) if l.size else 0.0
    if asymmetry > SYMMETRY_TOLERANCE:
        raise LaplacianError(f"Laplacian is not symmetric (max asymmetry {asymmetry:.3e})")

    eigenvalues, eigenvectors = scipy.linalg.eigh(l)
    eigenvalues[np.abs(eigenvalues) < TIE_TOLERANCE] = 0.0

    # Largest-magnitude entry positive; ties go to the lowest index.
    for i in range(eigenvectors.shape[1]):
        column = eigenvectors[:, i]
        magnitudes = np.abs(column)
        pivot = int(np.flatnonzero(magnitudes >= magnitudes.max() - 1e-12)[0])
        if column[pivot] < 0:
            eigenvectors[:, i] = -column

    logger.debug(f"Spectral basis {source or '(unnamed)'}: lambda range "
                 f"[{eigenvalues[0]:.3e}, {eigenvalues[-1]:.3e}]")
    return SpectralBasis(eigenvalues, eigenvectors, source)


def gft(basis: SpectralBasis, signal) -> Spectrum:
    """Graph Fourier transform U^T s."""
    signal = np.asarray(signal, dtype=float)
    if signal.shape != (basis.size,):
        raise ValueError(f"Signal has shape {signal.shape}, basis has size {basis.size}")
    return Spectrum(basis.eigenvectors.T @ signal)


def inverse_gft(basis: SpectralBasis, coeffs) -> np.ndarray:
    return basis.eigenvectors @ np.asarray(coeffs, dtype=float)


def normalized_frequencies(basis: SpectralBasis) -> np.ndarray:
    """lambda_i / |lambda_max|, all in [0, 1]."""
    peak = float(np.max(np.abs(basis.eigenvalues)))
    if peak == 0:
        return np.zeros(basis.size)
    return np.clip(basis.eigenvalues / peak, 0.0, 1.0)


def total_variation(l: np.ndarray, signal) -> Tuple[float, np.ndarray]:
    """Total variation S and the per-vertex local variation, weights taken as -L_kl."""
    l = np.asarray(l, dtype=float)
    signal = np.asarray(signal, dtype=float)
    weights = -(l - np.diag(np.diag(l)))
    differences = signal[:, None] - signal[None, :]
    local = np.sum(weights * differences ** 2, axis=1)
    return 0.5 * float(np.sum(local)), local


def _cutoff_for_spectrum(spectrum: Spectrum, epsilon: float) -> Optional[int]:
    tails = np.cumsum(spectrum.energy[::-1])[::-1]
    passing = np.flatnonzero(tails <= epsilon)
    if passing.size == 0:
        return None
    return int(passing[0]) + 1


def select_cutoff(basis: SpectralBasis, historic_spectra: Sequence[Spectrum],
                  epsilon: float) -> GhpfDesign:
    """Smallest gamma keeping every historic state's energy from gamma upwards <= epsilon."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not historic_spectra:
        raise CutoffSelectionError("At least one historic spectrum is required")

    gamma = 2
    for index, spectrum in enumerate(historic_spectra):
        state_gamma = _cutoff_for_spectrum(spectrum, epsilon)
        if state_gamma is None:
            raise CutoffSelectionError(
                f"Historic state {index}: last coefficient energy {spectrum.energy[-1]:.3e} "
                f"exceeds epsilon {epsilon:.3e}", state_index=index)
        gamma = max(gamma, state_gamma)

    # A tie class must not straddle the cutoff; push gamma past it.
    for tie_class in basis.tie_classes():
        first, last = tie_class[0] + 1, tie_class[-1] + 1
        if first < gamma <= last:
            gamma = last + 1
    if gamma > basis.size:
        raise CutoffSelectionError(
            f"Cutoff index {gamma} exceeds the number of frequencies {basis.size}")

    lambdas = basis.eigenvalues
    cutoff_lambda = 0.5 * (lambdas[gamma - 2] + lambdas[gamma - 1])
    response = (lambdas > cutoff_lambda).astype(float)
    logger.debug(f"Cutoff {basis.source}: gamma={gamma}, lambda_cut={cutoff_lambda:.4e}")
    return GhpfDesign(cutoff_index=gamma, cutoff_lambda=float(cutoff_lambda), response=response)


def _refined_solve(matrix: np.ndarray, rhs: np.ndarray, square: bool) -> np.ndarray:
    def solve(b):
        if square:
            return scipy.linalg.solve(matrix, b)
        return scipy.linalg.lstsq(matrix, b)[0]

    solution = solve(rhs)
    # Iterative refinement with the residual accumulated in extended precision.
    wide_matrix = matrix.astype(np.longdouble)
    wide_rhs = rhs.astype(np.longdouble)
    for _ in range(2):
        residual = wide_rhs - wide_matrix @ solution.astype(np.longdouble)
        solution = solution + solve(residual.astype(float))
    return solution


def design_poly_filter(basis: SpectralBasis, design: GhpfDesign) -> GhpfDesign:
    """Degree M-1 polynomial reproducing the 0/1 response at every graph frequency."""
    size = basis.size
    if size > POLY_MAX_SIZE:
        logger.warning(f"Polynomial filter skipped for M={size} > {POLY_MAX_SIZE}: "
                       f"Vandermonde system too ill-conditioned, spectral path only")
        return replace(design, poly_coeffs=None, poly_scale=1.0)

    nodes, targets = [], []
    for tie_class in basis.tie_classes():
        responses = set(design.response[tie_class].tolist())
        if len(responses) > 1:
            raise FilterDesignError(
                f"Frequencies {[i + 1 for i in tie_class]} coincide but ask for different responses")
        nodes.append(float(np.mean(basis.eigenvalues[tie_class])))
        targets.append(responses.pop())

    scale = float(np.max(np.abs(basis.eigenvalues))) or 1.0
    vandermonde = np.vander(np.asarray(nodes) / scale, size, increasing=True)
    try:
        scaled = _refined_solve(vandermonde, np.asarray(targets), square=len(nodes) == size)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise FilterDesignError(f"Vandermonde system could not be solved: {e}") from e

    residual = float(np.max(np.abs(vandermonde @ scaled - np.asarray(targets))))
    if residual > POLY_RESIDUAL_TOLERANCE:
        logger.warning(f"Polynomial filter residual {residual:.3e} above {POLY_RESIDUAL_TOLERANCE}")
    coeffs = scaled / scale ** np.arange(size)
    return replace(design, poly_coeffs=coeffs, poly_scale=scale)


def filter_and_stat(basis: SpectralBasis, design: GhpfDesign, signal) -> Tuple[Spectrum, float]:
    """High-pass filter in the spectral domain; psi is the max-norm of the filtered spectrum."""
    filtered = Spectrum(design.response * gft(basis, signal).coeffs)
    psi = float(np.max(np.abs(filtered.coeffs))) if basis.size else 0.0
    return filtered, psi


def vertex_filter(basis: SpectralBasis, design: GhpfDesign, signal) -> np.ndarray:
    """psi = h(L) s evaluated by Horner's rule on L / poly_scale (vertex domain)."""
    coeffs = design.scaled_coeffs
    shift = basis.laplacian / design.poly_scale
    signal = np.asarray(signal, dtype=float)
    output = coeffs[-1] * signal
    for coefficient in coeffs[-2::-1]:
        output = coefficient * signal + shift @ output
    return output


def spectrum_dump(basis: SpectralBasis, spectrum: Spectrum) -> List[Dict[str, float]]:
    """(normalised frequency, coefficient) pairs for plotting."""
    return [{"frequency": float(f), "coefficient": float(c)}
            for f, c in zip(normalized_frequencies(basis), spectrum.coeffs)]
