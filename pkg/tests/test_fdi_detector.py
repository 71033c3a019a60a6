import unittest
import sys
import os

import numpy as np

# Add the repository root to the path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.fdi_detector import FDIDetector, inspect_model
from src.modules.power_flow import solve_ac, solve_dc
from src.modules.state_attack import AttackSpec, apply_attack
from tests.test_config import ieee14


class TestFDIDetectorIntegration(unittest.TestCase):
    """Integration tests for the complete FDIDetector."""

    @classmethod
    def setUpClass(cls):
        cls.detector = FDIDetector(ieee14())
        cls.model = cls.detector.calibrate_from_scenarios(load_sigma=0.05, count=20, seed=3)
        cls.clean = solve_ac(cls.detector.case)

    def test_initialization(self):
        """Both Laplacian pairs are built up front."""
        detector = FDIDetector(ieee14(), alpha_sigma=1.0)
        self.assertEqual(detector.pair.mode, "ac")
        self.assertEqual(detector.pair_dc.mode, "dc")
        self.assertIsNone(detector.model)
        self.assertEqual(detector.alpha_sigma, 1.0)

    def test_detect_requires_calibration(self):
        with self.assertRaises(RuntimeError):
            FDIDetector(ieee14()).detect(self.clean)
        with self.assertRaises(RuntimeError):
            FDIDetector(ieee14()).detect_dc(np.zeros(14))

    def test_calibrated_model(self):
        self.assertIs(self.detector.model, self.model)
        self.assertEqual(self.model.n_historic, 20)
        self.assertEqual(self.model.alpha_sigma, 2.0)

    def test_detect_attack(self):
        attacked = apply_attack(self.clean, AttackSpec.single(5, delta_angle=20.0))
        self.assertTrue(self.detector.detect(attacked).is_attack)
        self.assertTrue(self.detector.detect_smoothness(attacked).smoothness)

    def test_dc_calibration(self):
        model_dc = self.detector.calibrate_dc(load_sigma=0.05, count=20, seed=3)
        self.assertEqual(model_dc.mode, "dc")
        angles = np.array(solve_dc(self.detector.case), copy=True)
        angles[4] += np.radians(20.0)
        self.assertTrue(self.detector.detect_dc(angles).is_attack)

    def test_inspect_model(self):
        """Spectra dumps carry one entry per bus for every term and state."""
        attacked = apply_attack(self.clean, AttackSpec.single(9, delta_angle=10.0))
        report = inspect_model(self.model, {"clean": self.clean, "attacked": attacked})
        self.assertEqual(len(report["terms"]), 4)
        for term in report["terms"]:
            self.assertEqual(len(term["frequencies"]), 14)
            self.assertEqual(len(term["spectra"]["attacked"]["filtered"]), 14)
            self.assertEqual(term["response"][0], 0)
        self.assertEqual(len(report["local_variation"]["clean"]["imag"]), 14)

    def test_inspect_without_states(self):
        report = inspect_model(self.model)
        self.assertNotIn("local_variation", report)
        self.assertNotIn("spectra", report["terms"][0])


if __name__ == '__main__':
    unittest.main()
