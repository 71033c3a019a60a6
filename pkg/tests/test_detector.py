import unittest
import sys
import os
import json
import tempfile

import numpy as np

# Add the repository root to the path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.modules.detector import (AC_TERMS, BisectionError, CalibrationError, Hypothesis, ModelFormatError,
                                  TermId, baseline_norm, baseline_residual, calibrate,
                                  calibrate_baseline_threshold, calibrate_dc, detect, detect_dc,
                                  detect_smoothness, load_model, local_variation, save_model)
from src.modules.grid_model import laplacian_pair
from src.modules.gsp_core import filter_and_stat, gft
from src.modules.power_flow import ComplexState, solve_ac, solve_dc
from src.modules.state_attack import (AttackSpec, LoadScenarioSpec, apply_attack, estimator_outputs, make_historic,
                                      random_scenarios)
from tests.test_config import ieee14, two_bus_case


class TestDetector(unittest.TestCase):
    """Test cases for calibration and the four-term decision rule."""

    @classmethod
    def setUpClass(cls):
        cls.case = ieee14()
        cls.pair = laplacian_pair(cls.case)
        cls.historic = make_historic(cls.case, LoadScenarioSpec(sigma=0.05, count=30, seed=2019))
        cls.model = calibrate(cls.pair, cls.historic)
        cls.clean = solve_ac(cls.case)

    def test_term_order_and_labels(self):
        self.assertEqual([t.term.key for t in self.model.terms], ["yr/real", "yj/real", "yj/imag", "yr/imag"])
        self.assertEqual(TermId("yj", "real").label, "psi_J^R")
        self.assertEqual(TermId.from_key("yr/imag"), TermId("yr", "imag"))

    def test_averaged_thresholds(self):
        """tau = mu + alpha * sample standard deviation of historic Psi."""
        term = self.model.term("yj/imag")
        psis = [filter_and_stat(term.basis, term.design, s.imag)[1] for s in self.historic]
        self.assertAlmostEqual(term.mu, float(np.mean(psis)), places=12)
        self.assertAlmostEqual(term.sigma, float(np.std(psis, ddof=1)), places=12)
        self.assertAlmostEqual(term.threshold, term.mu + 2.0 * term.sigma, places=12)
        self.assertAlmostEqual(term.psi_max, max(psis), places=12)

    def test_calibration_energy_bound(self):
        """Every historic state keeps its energy above the cutoff within epsilon."""
        epsilon = {"real": 1e-4, "imag": 1e-3}
        for term in self.model.terms:
            self.assertGreaterEqual(term.design.cutoff_index, 2)
            self.assertEqual(term.design.response[0], 0.0)
            for state in self.historic:
                spectrum = gft(term.basis, state.part(term.term.part))
                self.assertLessEqual(spectrum.tail_energy(term.design.cutoff_index),
                                     epsilon[term.term.part] + 1e-15)

    def test_alpha_monotonicity(self):
        """Raising alpha never raises the false alarm rate."""
        rates = []
        for alpha in (0.5, 1.0, 2.0, 3.0):
            model = self.model.with_alpha(alpha)
            rates.append(np.mean([detect(model, s).is_attack for s in self.historic]))
        self.assertTrue(all(a >= b for a, b in zip(rates, rates[1:])))

    def test_max_mode_never_fires_on_calibration_data(self):
        model = self.model.with_alpha(threshold_mode="max")
        for term in model.terms:
            self.assertEqual(term.threshold, term.psi_max)
        self.assertFalse(any(detect(model, s).is_attack for s in self.historic))

    def test_strong_attack_detected(self):
        """A 20 degree angle attack on bus 5 fires an imaginary-part term."""
        attacked = apply_attack(self.clean, AttackSpec.single(5, delta_angle=20.0))
        report = detect(self.model, attacked)
        self.assertIs(report.verdict, Hypothesis.H1)
        self.assertTrue(report.imag_part_fired)
        self.assertTrue(report.triggers)

    def test_bus9_angle_attack_fires_imaginary_part(self):
        report = detect(self.model, apply_attack(self.clean, AttackSpec.single(9, delta_angle=10.0)))
        self.assertIs(report.verdict, Hypothesis.H1)
        self.assertTrue(report.imag_part_fired)

    def test_magnitude_attack_fires_real_part(self):
        """A 0.2 p.u. magnitude attack on bus 4 fires a real-part term."""
        report = detect(self.model, apply_attack(self.clean, AttackSpec.single(4, delta_magnitude=0.2)))
        self.assertIs(report.verdict, Hypothesis.H1)
        self.assertTrue(report.real_part_fired)

    def test_identical_historic_states(self):
        """Two copies of one state give zero spread, so every threshold equals that state's Psi."""
        model = calibrate(self.pair, [self.historic[0], self.historic[0]])
        for term in model.terms:
            psi = filter_and_stat(term.basis, term.design, self.historic[0].part(term.term.part))[1]
            self.assertEqual(term.sigma, 0.0)
            self.assertAlmostEqual(term.mu, psi, places=15)
            self.assertAlmostEqual(term.threshold, psi, places=15)

    def test_zero_alpha_threshold_is_mean(self):
        model = self.model.with_alpha(0.0)
        self.assertEqual(model.alpha_sigma, 0.0)
        for term in model.terms:
            self.assertEqual(term.threshold, term.mu)

    def test_cutoff_from_noiseless_states(self):
        """Noisy estimator outputs keep the noiseless cutoffs and only shift the Psi statistics."""
        noisy = estimator_outputs(self.historic, 0.01, 2019)
        model = calibrate(self.pair, noisy, cutoff_historic=self.historic)
        for term, reference in zip(model.terms, self.model.terms):
            self.assertEqual(term.design.cutoff_index, reference.design.cutoff_index)
            psis = [filter_and_stat(term.basis, term.design, s.part(term.term.part))[1] for s in noisy]
            self.assertAlmostEqual(term.mu, float(np.mean(psis)), places=12)

    def test_k_of_4_rule(self):
        model = calibrate(self.pair, self.historic, k_of_4=4)
        attacked = apply_attack(self.clean, AttackSpec.single(5, delta_angle=20.0))
        report = detect(model, attacked)
        self.assertEqual(report.is_attack, len(report.triggers) == len(AC_TERMS))

    def test_invalid_k_of_4(self):
        with self.assertRaises(CalibrationError):
            calibrate(self.pair, self.historic, k_of_4=5)

    def test_calibration_needs_two_states(self):
        with self.assertRaises(CalibrationError):
            calibrate(self.pair, self.historic[:1])

    def test_calibration_size_mismatch(self):
        other = ComplexState(np.ones(3))
        with self.assertRaises(CalibrationError):
            calibrate(self.pair, [self.historic[0], other])

    def test_detect_size_mismatch(self):
        with self.assertRaises(CalibrationError):
            detect(self.model, solve_ac(two_bus_case()))

    def test_smoothness_rises_under_attack(self):
        attacked = apply_attack(self.clean, AttackSpec.single(5, delta_angle=20.0))
        clean_report = detect_smoothness(self.model, self.clean)
        attacked_report = detect_smoothness(self.model, attacked)
        clean_value = {s.part: s.value for s in clean_report.smoothness}
        attacked_value = {s.part: s.value for s in attacked_report.smoothness}
        self.assertGreater(attacked_value["imag"], clean_value["imag"])
        self.assertEqual(clean_report.terms, ())

    def test_local_variation(self):
        local = local_variation(self.model, self.clean)
        self.assertEqual(set(local), {"real", "imag"})
        total = {s.part: s.value for s in detect_smoothness(self.model, self.clean).smoothness}
        self.assertAlmostEqual(float(np.sum(local["imag"])), 2.0 * total["imag"], places=10)

    def test_report_dict(self):
        data = detect(self.model, self.clean).to_dict()
        self.assertIn(data["verdict"], ("H0", "H1"))
        self.assertEqual(len(data["terms"]), 4)
        self.assertEqual(len(data["smoothness"]), 2)

    def test_model_file_round_trip(self):
        """A saved model gives the same statistics as the in-memory one."""
        attacked = apply_attack(self.clean, AttackSpec.single(5, delta_angle=20.0))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "model.json")
            save_model(self.model, path)
            loaded = load_model(path)
        expected = detect(self.model, attacked)
        actual = detect(loaded, attacked)
        self.assertEqual(actual.verdict, expected.verdict)
        for a, b in zip(actual.terms, expected.terms):
            self.assertAlmostEqual(a.psi, b.psi, places=12)
            self.assertAlmostEqual(a.tau, b.tau, places=12)

    def test_model_version_checked(self):
        data = self.model.to_dict()
        data["format_version"] = 99
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "model.json")
            with open(path, "w") as f:
                json.dump(data, f)
            with self.assertRaises(ModelFormatError):
                load_model(path)

    def test_unreadable_model(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "model.json")
            with open(path, "w") as f:
                f.write("not json")
            with self.assertRaises(ModelFormatError):
                load_model(path)


class TestDCDetector(unittest.TestCase):
    """Test cases for the single-term DC angle detector."""

    @classmethod
    def setUpClass(cls):
        cls.case = ieee14()
        scenarios = random_scenarios(cls.case, LoadScenarioSpec(sigma=0.05, count=30, seed=4))
        cls.angles = [solve_dc(s) for s in scenarios]
        cls.model = calibrate_dc(laplacian_pair(cls.case, "dc"), cls.angles)

    def test_single_term(self):
        self.assertEqual(self.model.mode, "dc")
        self.assertEqual([t.term.key for t in self.model.terms], ["yr/angle"])

    def test_constant_shift_invariance(self):
        """A shift of every angle lies in the zero-frequency eigenspace."""
        base = detect_dc(self.model, self.angles[0])
        shifted = detect_dc(self.model, self.angles[0] + 0.3)
        self.assertAlmostEqual(shifted.terms[0].psi, base.terms[0].psi, places=10)
        self.assertEqual(shifted.verdict, base.verdict)

    def test_large_single_bus_offset_detected(self):
        angles = np.array(solve_dc(self.case), copy=True)
        angles[4] += np.radians(20.0)
        self.assertIs(detect_dc(self.model, angles).verdict, Hypothesis.H1)

    def test_ten_degree_offset_detected(self):
        angles = np.array(solve_dc(self.case), copy=True)
        angles[8] += np.radians(10.0)
        self.assertIs(detect_dc(self.model, angles).verdict, Hypothesis.H1)

    def test_ac_pair_rejected(self):
        with self.assertRaises(CalibrationError):
            calibrate_dc(laplacian_pair(self.case, "ac"), self.angles)


class TestBaselines(unittest.TestCase):
    """Test cases for the norm and residual baselines and their threshold search."""

    def test_identical_states_have_zero_residual(self):
        state = ComplexState(np.array([1.0, 0.9 - 0.1j]))
        self.assertIs(baseline_residual(state, state, 1e-9), Hypothesis.H0)

    def test_norm_baseline(self):
        state = ComplexState(np.array([3.0, 4.0]))
        self.assertIs(baseline_norm(state, 4.9), Hypothesis.H1)
        self.assertIs(baseline_norm(state, 5.1), Hypothesis.H0)

    def test_bisection_finds_smallest_threshold(self):
        threshold = calibrate_baseline_threshold([1.0, 2.0, 3.0, 4.0], 0.25)
        self.assertAlmostEqual(threshold, 3.0, places=6)
        self.assertLessEqual(np.mean(np.array([1.0, 2.0, 3.0, 4.0]) > threshold), 0.25)

    def test_bisection_zero_rate(self):
        threshold = calibrate_baseline_threshold([0.5, 1.5, 2.5], 0.0)
        self.assertAlmostEqual(threshold, 2.5, places=6)

    def test_bisection_input_checked(self):
        with self.assertRaises(ValueError):
            calibrate_baseline_threshold([1.0], 1.5)
        with self.assertRaises(BisectionError):
            calibrate_baseline_threshold([], 0.1)


if __name__ == '__main__':
    unittest.main()
