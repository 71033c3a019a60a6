from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple


def _key(delta: float) -> float:
    return round(abs(float(delta)), 9)


@dataclass(frozen=True)
class CurvePoint:
    """Detection probability for attacks whose size is at least `delta`."""
    delta: float
    detection_probability: float
    trials: int
    exact_probability: float
    false_alarm: float


class CurveAggregator:
    """Summed detection counters keyed by |delta|; merging is order-independent."""

    def __init__(self):
        self.trials: Dict[float, int] = defaultdict(int)
        self.detections: Dict[float, int] = defaultdict(int)

    def add(self, delta: float, detected: bool):
        key = _key(delta)
        self.trials[key] += 1
        self.detections[key] += int(detected)

    def merge(self, other: "CurveAggregator") -> "CurveAggregator":
        for key, trials in other.trials.items():
            self.trials[key] += trials
            self.detections[key] += other.detections[key]
        return self

    def probability(self, delta: float) -> float:
        key = _key(delta)
        return self.detections[key] / self.trials[key] if self.trials.get(key) else 0.0

    @property
    def false_alarm(self) -> float:
        return self.probability(0.0)

    def curve(self, deltas: Iterable[float]) -> List[CurvePoint]:
        """Point at 0 reports zero-attack trials only; points above 0 pool every attack with |d| >= delta."""
        points = []
        false_alarm = self.false_alarm
        for delta in sorted(set(_key(d) for d in deltas)):
            if delta == 0.0:
                trials, detections = self.trials.get(0.0, 0), self.detections.get(0.0, 0)
            else:
                keys = [k for k in self.trials if k >= delta and k > 0.0]
                trials = sum(self.trials[k] for k in keys)
                detections = sum(self.detections[k] for k in keys)
            probability = detections / trials if trials else 0.0
            points.append(CurvePoint(delta=delta, detection_probability=probability, trials=trials,
                                     exact_probability=self.probability(delta), false_alarm=false_alarm))
        return points


class AttributionCounter:
    """Which signal part detected an attack: both, real part only, imaginary part only."""

    COLUMNS = ("both", "real_only", "imag_only")

    def __init__(self):
        self.counts: Dict[str, int] = {column: 0 for column in self.COLUMNS}

    def add(self, real_fired: bool, imag_fired: bool):
        if real_fired and imag_fired:
            self.counts["both"] += 1
        elif real_fired:
            self.counts["real_only"] += 1
        elif imag_fired:
            self.counts["imag_only"] += 1

    def merge(self, other: "AttributionCounter") -> "AttributionCounter":
        for column in self.COLUMNS:
            self.counts[column] += other.counts[column]
        return self

    @property
    def detected(self) -> int:
        return sum(self.counts.values())

    def percentages(self) -> Dict[str, float]:
        total = self.detected
        return {column: (100.0 * count / total if total else 0.0) for column, count in self.counts.items()}

    def as_row(self) -> Tuple[int, float, float, float]:
        shares = self.percentages()
        return (self.detected, shares["both"], shares["real_only"], shares["imag_only"])
