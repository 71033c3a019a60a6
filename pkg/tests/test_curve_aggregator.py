import unittest
import sys
import os

# Add the repository root to the path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.modules.curve_aggregator import AttributionCounter, CurveAggregator

class TestCurveAggregator(unittest.TestCase):
    """Test cases for detection-probability curves."""
    
    def setUp(self):
        self.aggregator = CurveAggregator()
        # 0: 1 of 4 false alarms, |1|: 2 of 4 detected, |2|: 4 of 4 detected
        for detected in (True, False, False, False):
            self.aggregator.add(0.0, detected)
        for delta, detected in ((1.0, True), (-1.0, True), (1.0, False), (-1.0, False)):
            self.aggregator.add(delta, detected)
        for delta in (2.0, -2.0, 2.0, -2.0):
            self.aggregator.add(delta, True)
    
    def test_zero_point_is_false_alarm(self):
        """The curve starts at the zero-attack detection rate."""
        point = self.aggregator.curve([0.0])[0]
        self.assertEqual(point.trials, 4)
        self.assertAlmostEqual(point.detection_probability, 0.25)
        self.assertAlmostEqual(point.false_alarm, 0.25)
    
    def test_exceedance_aggregation(self):
        """Points above zero pool every attack at least that large, both signs."""
        points = {p.delta: p for p in self.aggregator.curve([0.0, 1.0, 2.0])}
        self.assertEqual(points[1.0].trials, 8)
        self.assertAlmostEqual(points[1.0].detection_probability, 6 / 8)
        self.assertAlmostEqual(points[1.0].exact_probability, 0.5)
        self.assertEqual(points[2.0].trials, 4)
        self.assertAlmostEqual(points[2.0].detection_probability, 1.0)
    
    def test_merge_is_order_independent(self):
        left, right = CurveAggregator(), CurveAggregator()
        left.add(1.0, True)
        right.add(-1.0, False)
        for _ in range(3):
            right.add(0.0, False)
        merged_a = CurveAggregator().merge(left).merge(right)
        merged_b = CurveAggregator().merge(right).merge(left)
        self.assertEqual(merged_a.curve([0.0, 1.0]), merged_b.curve([0.0, 1.0]))
    
    def test_unseen_delta(self):
        point = self.aggregator.curve([5.0])[0]
        self.assertEqual(point.trials, 0)
        self.assertEqual(point.detection_probability, 0.0)


class TestAttributionCounter(unittest.TestCase):
    """Test cases for the real/imaginary attribution split."""
    
    def test_percentages(self):
        counter = AttributionCounter()
        counter.add(True, True)
        counter.add(True, False)
        counter.add(False, True)
        counter.add(False, True)
        counter.add(False, False)
        detected, both, real_only, imag_only = counter.as_row()
        self.assertEqual(detected, 4)
        self.assertAlmostEqual(both, 25.0)
        self.assertAlmostEqual(real_only, 25.0)
        self.assertAlmostEqual(imag_only, 50.0)
    
    def test_empty(self):
        self.assertEqual(AttributionCounter().percentages(), {"both": 0.0, "real_only": 0.0, "imag_only": 0.0})


if __name__ == '__main__':
    unittest.main()
