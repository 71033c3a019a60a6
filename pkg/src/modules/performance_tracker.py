import time
from typing import Dict


class PerformanceTracker:
    """Tracks Monte Carlo throughput for experiment logs."""

    def __init__(self):
        self.trial_count = 0
        self.start_time = time.time()

    @property
    def total_trials(self):
        return self.trial_count

    def increment_trials(self, count: int = 1):
        """Add completed trials (a trial is one detector evaluation)."""
        self.trial_count += count

    def get_stats(self) -> Dict[str, float]:
        """Get throughput statistics."""
        elapsed_time = time.time() - self.start_time
        rate = self.trial_count / elapsed_time if elapsed_time > 0 else 0
        return {
            'trials_per_second': rate,
            'total_trials': self.trial_count,
            'runtime': elapsed_time
        }
