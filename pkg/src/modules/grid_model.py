import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)

BUS_KINDS = ("slack", "pv", "pq")
OFF_DIAGONAL_TOLERANCE = 1e-12


class FDIDetectionError(Exception):
    """Base class for every error raised by the detection package."""


class CaseFormatError(FDIDetectionError):
    """Raised when a case file violates the schema or a grid invariant."""


class LaplacianError(FDIDetectionError):
    """Raised when a matrix is not a valid (real, symmetric) Laplacian."""


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Bus:
    """A grid bus. Powers are injections in p.u. (generation positive, load negative)."""
    id: int
    kind: str
    p_set: float = 0.0
    q_set: float = 0.0
    v_set: Optional[float] = None


@dataclass(frozen=True)
class Line:
    """A transmission line (or transformer branch) between two buses."""
    from_bus: int
    to_bus: int
    r: float
    x: float

    @property
    def admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    @property
    def key(self) -> Tuple[int, int]:
        return (min(self.from_bus, self.to_bus), max(self.from_bus, self.to_bus))


@dataclass(frozen=True)
class GridCase:
    """Physical grid description. Buses are stored sorted by id, so bus k sits at index k - 1."""
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    base_mva: float = 100.0
    name: str = "case"

    @property
    def size(self) -> int:
        return len(self.buses)

    @property
    def slack_index(self) -> int:
        return next(i for i, bus in enumerate(self.buses) if bus.kind == "slack")

    @property
    def slack_id(self) -> int:
        return self.buses[self.slack_index].id

    @property
    def pv_indices(self) -> np.ndarray:
        return np.array([i for i, bus in enumerate(self.buses) if bus.kind == "pv"], dtype=int)

    @property
    def pq_indices(self) -> np.ndarray:
        return np.array([i for i, bus in enumerate(self.buses) if bus.kind == "pq"], dtype=int)

    @property
    def p_set(self) -> np.ndarray:
        return np.array([bus.p_set for bus in self.buses], dtype=float)

    @property
    def q_set(self) -> np.ndarray:
        return np.array([bus.q_set for bus in self.buses], dtype=float)

    def index_of(self, bus_id: int) -> int:
        if not 1 <= bus_id <= self.size:
            raise CaseFormatError(f"Unknown bus id {bus_id} (case has buses 1..{self.size})")
        return bus_id - 1

    def with_setpoints(self, p_set: Iterable[float], q_set: Iterable[float]) -> "GridCase":
        """Copy of the case with new active/reactive setpoints (topology untouched)."""
        buses = tuple(replace(bus, p_set=float(p), q_set=float(q))
                      for bus, p, q in zip(self.buses, p_set, q_set))
        return replace(self, buses=buses)

    def to_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(bus.id for bus in self.buses)
        for line in self.lines:
            graph.add_edge(line.from_bus, line.to_bus, r=line.r, x=line.x)
        return graph

    def to_dict(self) -> Dict:
        buses = []
        for bus in self.buses:
            entry = {"id": bus.id, "kind": bus.kind, "p": bus.p_set, "q": bus.q_set}
            if bus.v_set is not None:
                entry["v"] = bus.v_set
            buses.append(entry)
        lines = [{"from": l.from_bus, "to": l.to_bus, "r": l.r, "x": l.x} for l in self.lines]
        return {"name": self.name, "base_mva": self.base_mva, "buses": buses, "lines": lines}


@dataclass(frozen=True)
class ComplexAdmittance:
    """Complex admittance matrix Y, a weighted Laplacian of the grid graph."""
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=complex)))

    @property
    def size(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class LaplacianPair:
    """The two real Laplacians Y^R = Re Y and Y^J = -Im Y (yj is all zeros in dc mode)."""
    yr: np.ndarray
    yj: np.ndarray
    mode: str = "ac"

    def __post_init__(self):
        object.__setattr__(self, "yr", _frozen(np.asarray(self.yr, dtype=float)))
        object.__setattr__(self, "yj", _frozen(np.asarray(self.yj, dtype=float)))

    @property
    def size(self) -> int:
        return self.yr.shape[0]

    def matrix(self, name: str) -> np.ndarray:
        if name == "yr":
            return self.yr
        if name == "yj":
            return self.yj
        raise KeyError(f"Unknown Laplacian '{name}' (expected 'yr' or 'yj')")

    def on_base(self, from_mva: float, to_mva: float) -> "LaplacianPair":
        """The same Laplacians with per-unit admittances moved from one MVA base to another."""
        if from_mva <= 0 or to_mva <= 0:
            raise ValueError(f"MVA bases must be positive, got {from_mva} and {to_mva}")
        factor = from_mva / to_mva
        return LaplacianPair(yr=self.yr * factor, yj=self.yj * factor, mode=self.mode)


def _require(entry: Dict, key: str, location: str):
    if key not in entry:
        raise CaseFormatError(f"{location}: missing required field '{key}'")
    return entry[key]


def _number(value, location: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseFormatError(f"{location}: expected a number, got {value!r}")
    if not np.isfinite(value):
        raise CaseFormatError(f"{location}: value must be finite")
    return float(value)


def _parse_bus(entry, location: str) -> Bus:
    if not isinstance(entry, dict):
        raise CaseFormatError(f"{location}: expected an object")
    bus_id = _require(entry, "id", location)
    if isinstance(bus_id, bool) or not isinstance(bus_id, int):
        raise CaseFormatError(f"{location}.id: expected an integer, got {bus_id!r}")
    kind = _require(entry, "kind", location)
    if kind not in BUS_KINDS:
        raise CaseFormatError(f"{location}.kind: expected one of {BUS_KINDS}, got {kind!r}")
    p_set = _number(entry.get("p", 0.0), f"{location}.p")
    q_set = _number(entry.get("q", 0.0), f"{location}.q")
    v_set = None
    if "v" in entry:
        v_set = _number(entry["v"], f"{location}.v")
        if v_set <= 0:
            raise CaseFormatError(f"{location}.v: voltage setpoint must be positive, got {v_set}")
    elif kind in ("slack", "pv"):
        raise CaseFormatError(f"{location}: {kind} bus requires a voltage setpoint 'v'")
    return Bus(id=bus_id, kind=kind, p_set=p_set, q_set=q_set, v_set=v_set)


def _parse_line(entry, location: str) -> Line:
    if not isinstance(entry, dict):
        raise CaseFormatError(f"{location}: expected an object")
    from_bus = _require(entry, "from", location)
    to_bus = _require(entry, "to", location)
    for key, value in (("from", from_bus), ("to", to_bus)):
        if isinstance(value, bool) or not isinstance(value, int):
            raise CaseFormatError(f"{location}.{key}: expected an integer bus id, got {value!r}")
    r = _number(_require(entry, "r", location), f"{location}.r")
    x = _number(_require(entry, "x", location), f"{location}.x")
    if from_bus == to_bus:
        raise CaseFormatError(f"{location}: line connects bus {from_bus} to itself")
    if x == 0:
        raise CaseFormatError(f"{location}: zero reactance on line ({from_bus},{to_bus})")
    if x < 0:
        raise CaseFormatError(f"{location}: negative reactance on line ({from_bus},{to_bus})")
    if r < 0:
        raise CaseFormatError(f"{location}: negative resistance on line ({from_bus},{to_bus})")
    return Line(from_bus=from_bus, to_bus=to_bus, r=r, x=x)


def _merge_parallel(lines: List[Line]) -> Tuple[Line, ...]:
    """Merge parallel lines by adding their admittances."""
    merged: Dict[Tuple[int, int], complex] = {}
    for line in lines:
        merged[line.key] = merged.get(line.key, 0j) + line.admittance
    result = []
    for (k, l), admittance in merged.items():
        impedance = 1.0 / admittance
        result.append(Line(from_bus=k, to_bus=l, r=max(impedance.real, 0.0), x=impedance.imag))
    if len(result) < len(lines):
        logger.debug(f"Merged {len(lines) - len(result)} parallel line(s)")
    return tuple(sorted(result, key=lambda line: line.key))


def parse_case(text: str, source: str = "<string>") -> GridCase:
    """Parse and validate a JSON case file."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseFormatError(f"{source}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise CaseFormatError(f"{source}: top level must be an object")

    base_mva = _number(data.get("base_mva", 100.0), f"{source}: base_mva")
    raw_buses = _require(data, "buses", source)
    raw_lines = _require(data, "lines", source)
    if not isinstance(raw_buses, list) or not isinstance(raw_lines, list):
        raise CaseFormatError(f"{source}: 'buses' and 'lines' must be arrays")

    buses = [_parse_bus(entry, f"{source}: buses[{i}]") for i, entry in enumerate(raw_buses)]
    if len(buses) < 2:
        raise CaseFormatError(f"{source}: a case needs at least 2 buses, got {len(buses)}")

    seen = set()
    for i, bus in enumerate(buses):
        if bus.id in seen:
            raise CaseFormatError(f"{source}: buses[{i}]: duplicate bus id {bus.id}")
        seen.add(bus.id)
    if seen != set(range(1, len(buses) + 1)):
        raise CaseFormatError(f"{source}: bus ids must be exactly 1..{len(buses)}, got {sorted(seen)}")

    slack_count = sum(1 for bus in buses if bus.kind == "slack")
    if slack_count == 0:
        raise CaseFormatError(f"{source}: no slack bus")
    if slack_count > 1:
        raise CaseFormatError(f"{source}: {slack_count} slack buses, exactly one required")

    lines = [_parse_line(entry, f"{source}: lines[{i}]") for i, entry in enumerate(raw_lines)]
    for i, line in enumerate(lines):
        for bus_id in (line.from_bus, line.to_bus):
            if bus_id not in seen:
                raise CaseFormatError(f"{source}: lines[{i}]: unknown bus id {bus_id}")

    case = GridCase(buses=tuple(sorted(buses, key=lambda bus: bus.id)),
                    lines=_merge_parallel(lines),
                    base_mva=base_mva,
                    name=str(data.get("name", Path(source).stem if source != "<string>" else "case")))

    graph = case.to_graph()
    if not nx.is_connected(graph):
        islands = [sorted(c) for c in nx.connected_components(graph)]
        raise CaseFormatError(f"{source}: grid graph is disconnected, islands {islands}")

    logger.debug(f"Parsed case '{case.name}': {case.size} buses, {len(case.lines)} lines")
    return case


def load_case(path: Union[str, Path]) -> GridCase:
    """Read and parse a case file from disk."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise CaseFormatError(f"Cannot read case file {path}: {e}") from e
    case = parse_case(text, source=str(path))
    logger.info(f"Case '{case.name}' loaded from {path}: {case.size} buses, {len(case.lines)} lines")
    return case


def bundled_case_path(name: str = "ieee14") -> Path:
    return Path(__file__).resolve().parent.parent / "data" / f"{name}.json"


def _weighted_laplacian(size: int, edges: Iterable[Tuple[int, int, complex]], dtype) -> np.ndarray:
    # -w on the off-diagonal, row sums on the diagonal
    matrix = np.zeros((size, size), dtype=dtype)
    for k, l, weight in edges:
        matrix[k, l] -= weight
        matrix[l, k] -= weight
        matrix[k, k] += weight
        matrix[l, l] += weight
    return matrix


def build_admittance_ac(case: GridCase) -> ComplexAdmittance:
    """Complex admittance Laplacian with line weights y = 1/(r + jx); shunts and taps ignored."""
    edges = ((line.from_bus - 1, line.to_bus - 1, line.admittance) for line in case.lines)
    return ComplexAdmittance(_weighted_laplacian(case.size, edges, complex))


def _check_laplacian(matrix: np.ndarray, name: str):
    off_diagonal = matrix - np.diag(np.diag(matrix))
    worst = off_diagonal.max() if matrix.size else 0.0
    if worst > OFF_DIAGONAL_TOLERANCE:
        k, l = np.unravel_index(np.argmax(off_diagonal), matrix.shape)
        raise LaplacianError(
            f"{name} has positive off-diagonal {worst:.3e} at buses ({k + 1},{l + 1}); check line parameters")


def decompose(y: ComplexAdmittance) -> LaplacianPair:
    """Split Y into Y^R = Re(Y) and Y^J = -Im(Y), both real Laplacians."""
    yr = np.real(y.y).copy()
    yj = -np.imag(y.y)
    _check_laplacian(yr, "Y^R")
    _check_laplacian(yj, "Y^J")
    return LaplacianPair(yr=yr, yj=yj, mode="ac")


def build_admittance_dc(case: GridCase) -> LaplacianPair:
    """DC-model Laplacian with weights 1/x (resistance neglected)."""
    edges = ((line.from_bus - 1, line.to_bus - 1, 1.0 / line.x) for line in case.lines)
    yr = _weighted_laplacian(case.size, edges, float)
    return LaplacianPair(yr=yr, yj=np.zeros_like(yr), mode="dc")


def laplacian_pair(case: GridCase, mode: str = "ac") -> LaplacianPair:
    if mode == "ac":
        return decompose(build_admittance_ac(case))
    if mode == "dc":
        return build_admittance_dc(case)
    raise ValueError(f"Unknown model mode '{mode}' (expected 'ac' or 'dc')")
