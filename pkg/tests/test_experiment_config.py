import unittest
import sys
import os
import json
import tempfile

# Add the repository root to the path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.modules.experiment_config import ConfigError, ExperimentConfig, load_config


class TestExperimentConfig(unittest.TestCase):
    """Test cases for the experiment configuration file."""

    def test_default_sweeps(self):
        """Angles -12..12 degrees in steps of 1, magnitudes -0.2..0.2 p.u. in steps of 0.02."""
        config = ExperimentConfig()
        self.assertEqual(len(config.angle_grid), 25)
        self.assertEqual(config.angle_grid[0], -12.0)
        self.assertEqual(config.angle_grid[-1], 12.0)
        self.assertEqual(len(config.magnitude_grid), 21)
        self.assertIn(0.0, config.magnitude_grid)
        self.assertAlmostEqual(config.magnitude_grid[-1], 0.2)
        self.assertEqual(config.angle_magnitudes, [float(d) for d in range(13)])
        self.assertEqual(len(config.magnitude_magnitudes), 11)

    def test_defaults(self):
        config = ExperimentConfig()
        self.assertEqual(config.seed, 2019)
        self.assertEqual(config.trials, 100)
        self.assertEqual(config.n_historic, 100)
        self.assertEqual(config.alpha_sigmas, [0.5, 1.0, 2.0])
        self.assertEqual(config.threshold_mode, "averaged")
        self.assertTrue(os.path.exists(config.case))

    def test_validation(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(angle_grid=[])
        with self.assertRaises(ConfigError):
            ExperimentConfig(trials=0)
        with self.assertRaises(ConfigError):
            ExperimentConfig(threshold_mode="median")
        with self.assertRaises(ConfigError):
            ExperimentConfig(k_of_4=5)
        with self.assertRaises(ConfigError):
            ExperimentConfig(eps_r=0.0)
        with self.assertRaises(ConfigError):
            ExperimentConfig(estimation_sigma=-0.001)
        with self.assertRaises(ConfigError):
            ExperimentConfig(residual_ramp_steps=0)

    def test_tc4_offsets_match_buses(self):
        """One angle and one magnitude offset per combined-attack bus."""
        config = ExperimentConfig()
        self.assertEqual(len(config.tc4_delta_angles), len(config.tc4_buses))
        with self.assertRaises(ConfigError):
            ExperimentConfig(tc4_buses=[6, 9], tc4_delta_angles=[1.0], tc4_delta_magnitudes=[0.0, 0.0])

    def test_unknown_keys_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            ExperimentConfig.from_dict({"trails": 10})
        self.assertIn("trails", str(ctx.exception))

    def test_dict_round_trip(self):
        config = ExperimentConfig(trials=7, noise_sigmas=[0.002])
        self.assertEqual(ExperimentConfig.from_dict(config.to_dict()), config)

    def test_load_resolves_relative_case(self):
        """Relative case paths resolve against the config file's directory."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "config.json")
            with open(path, "w") as f:
                json.dump({"case": "grids/case.json", "trials": 5}, f)
            config = load_config(path)
        self.assertEqual(config.trials, 5)
        self.assertEqual(config.case, os.path.join(os.path.realpath(tmp), "grids", "case.json"))

    def test_load_without_path(self):
        self.assertEqual(load_config(None), ExperimentConfig())

    def test_load_invalid_json(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "config.json")
            with open(path, "w") as f:
                f.write("{")
            with self.assertRaises(ConfigError):
                load_config(path)

    def test_load_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config("/nonexistent/config.json")


if __name__ == '__main__':
    unittest.main()
