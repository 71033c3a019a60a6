import unittest
import sys
import os
import json
import tempfile

import networkx as nx
import numpy as np

# Add the repository root to the path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.modules.grid_model import (CaseFormatError, ComplexAdmittance, LaplacianError, build_admittance_ac,
                                    build_admittance_dc, decompose, laplacian_pair, load_case, parse_case)
from tests.test_config import IEEE14_EDGES, UNIT_LINE, case_text, ieee14


def _slack_and_load(extra_lines):
    return case_text(buses=[{"id": 1, "kind": "slack", "v": 1.0}, {"id": 2, "kind": "pq"}],
                     lines=extra_lines)


class TestGridModel(unittest.TestCase):
    """Test cases for case parsing and Laplacian construction."""

    def setUp(self):
        self.case = ieee14()

    def test_unit_line_admittance(self):
        """A single line r=1, x=1 gives 1/(1+j) on the diagonal."""
        y = build_admittance_ac(parse_case(UNIT_LINE)).y
        self.assertAlmostEqual(y[0, 0], 0.5 - 0.5j, places=12)
        self.assertAlmostEqual(y[1, 1], 0.5 - 0.5j, places=12)
        self.assertAlmostEqual(y[0, 1], -0.5 + 0.5j, places=12)

    def test_ieee14_sparsity_matches_topology(self):
        """Off-diagonal pattern of Y equals the 20-line one-line diagram."""
        y = build_admittance_ac(self.case).y
        pattern = {(k + 1, l + 1) for k in range(14) for l in range(k + 1, 14) if y[k, l] != 0}
        self.assertEqual(self.case.size, 14)
        self.assertEqual(len(self.case.lines), 20)
        self.assertEqual(pattern, IEEE14_EDGES)

    def test_admittance_is_laplacian(self):
        """Y is symmetric with zero row sums."""
        y = build_admittance_ac(self.case).y
        np.testing.assert_allclose(y, y.T, atol=1e-12)
        np.testing.assert_allclose(y.sum(axis=1), 0, atol=1e-12)

    def test_decomposed_pair_properties(self):
        """Both real Laplacians are symmetric, PSD, zero-row-sum with non-positive off-diagonals."""
        pair = laplacian_pair(self.case)
        for matrix in (pair.yr, pair.yj):
            np.testing.assert_allclose(matrix, matrix.T, atol=1e-12)
            np.testing.assert_allclose(matrix.sum(axis=1), 0, atol=1e-10)
            off_diagonal = matrix - np.diag(np.diag(matrix))
            self.assertLessEqual(off_diagonal.max(), 1e-12)
            self.assertGreaterEqual(np.linalg.eigvalsh(matrix).min(), -1e-9)

    def test_imag_laplacian_single_zero_eigenvalue(self):
        """Every line has x > 0, so Y^J is connected."""
        eigenvalues = np.linalg.eigvalsh(laplacian_pair(self.case).yj)
        self.assertEqual(int(np.sum(np.abs(eigenvalues) < 1e-9)), 1)

    def test_real_laplacian_zero_eigenvalues_match_components(self):
        """Lines with r = 0 drop out of Y^R; one zero eigenvalue per remaining component."""
        graph = nx.Graph()
        graph.add_nodes_from(bus.id for bus in self.case.buses)
        graph.add_edges_from(line.key for line in self.case.lines if line.r > 0)
        eigenvalues = np.linalg.eigvalsh(laplacian_pair(self.case).yr)
        self.assertEqual(int(np.sum(np.abs(eigenvalues) < 1e-9)), nx.number_connected_components(graph))

    def test_dc_pair(self):
        """DC weights are 1/x and the imaginary Laplacian is empty."""
        pair = build_admittance_dc(parse_case(UNIT_LINE))
        self.assertEqual(pair.mode, "dc")
        np.testing.assert_allclose(pair.yr, [[1.0, -1.0], [-1.0, 1.0]])
        self.assertFalse(pair.yj.any())

    def test_parallel_lines_merged(self):
        """Two identical lines behave as one line with twice the admittance."""
        case = parse_case(_slack_and_load([{"from": 1, "to": 2, "r": 1.0, "x": 1.0},
                                           {"from": 2, "to": 1, "r": 1.0, "x": 1.0}]))
        self.assertEqual(len(case.lines), 1)
        self.assertAlmostEqual(build_admittance_ac(case).y[0, 1], -1.0 + 1.0j, places=12)

    def test_zero_reactance_rejected(self):
        """Zero reactance names the offending line."""
        with self.assertRaises(CaseFormatError) as ctx:
            parse_case(_slack_and_load([{"from": 1, "to": 2, "r": 0.1, "x": 0.0}]))
        self.assertIn("zero reactance on line (1,2)", str(ctx.exception))
        self.assertIn("lines[0]", str(ctx.exception))

    def test_duplicate_bus_id_rejected(self):
        text = case_text(buses=[{"id": 1, "kind": "slack", "v": 1.0}, {"id": 1, "kind": "pq"}],
                         lines=[{"from": 1, "to": 1, "r": 0.1, "x": 0.1}])
        with self.assertRaises(CaseFormatError) as ctx:
            parse_case(text)
        self.assertIn("duplicate bus id 1", str(ctx.exception))

    def test_disconnected_grid_rejected(self):
        text = case_text(buses=[{"id": 1, "kind": "slack", "v": 1.0}, {"id": 2, "kind": "pq"},
                                {"id": 3, "kind": "pq"}],
                         lines=[{"from": 1, "to": 2, "r": 0.1, "x": 0.1}])
        with self.assertRaises(CaseFormatError) as ctx:
            parse_case(text)
        self.assertIn("disconnected", str(ctx.exception))

    def test_slack_count_enforced(self):
        text = case_text(buses=[{"id": 1, "kind": "slack", "v": 1.0}, {"id": 2, "kind": "slack", "v": 1.0}],
                         lines=[{"from": 1, "to": 2, "r": 0.1, "x": 0.1}])
        with self.assertRaises(CaseFormatError):
            parse_case(text)

    def test_pv_bus_needs_voltage(self):
        text = case_text(buses=[{"id": 1, "kind": "slack", "v": 1.0}, {"id": 2, "kind": "pv", "p": 0.1}],
                         lines=[{"from": 1, "to": 2, "r": 0.1, "x": 0.1}])
        with self.assertRaises(CaseFormatError) as ctx:
            parse_case(text)
        self.assertIn("buses[1]", str(ctx.exception))

    def test_unknown_line_endpoint_rejected(self):
        with self.assertRaises(CaseFormatError):
            parse_case(_slack_and_load([{"from": 1, "to": 3, "r": 0.1, "x": 0.1}]))

    def test_invalid_json_rejected(self):
        with self.assertRaises(CaseFormatError):
            parse_case("{not json")

    def test_missing_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CaseFormatError):
                load_case(os.path.join(tmp, "missing.json"))

    def test_positive_off_diagonal_rejected(self):
        """Negative line weights show up as positive off-diagonals after the split."""
        y = ComplexAdmittance(np.array([[-1.0, 1.0], [1.0, -1.0]], dtype=complex))
        with self.assertRaises(LaplacianError):
            decompose(y)

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            laplacian_pair(self.case, "hvdc")

    def test_matrices_are_read_only(self):
        pair = laplacian_pair(self.case)
        with self.assertRaises(ValueError):
            pair.yr[0, 0] = 1.0

    def test_relabelled_buses_permute_laplacian(self):
        """Renumbering the buses permutes Y^R and Y^J as P L P^T."""
        perm = np.random.default_rng(3).permutation(14)
        new_id = {old: int(perm[old - 1]) + 1 for old in range(1, 15)}
        data = self.case.to_dict()
        for bus in data["buses"]:
            bus["id"] = new_id[bus["id"]]
        for line in data["lines"]:
            line["from"], line["to"] = new_id[line["from"]], new_id[line["to"]]
        relabelled = laplacian_pair(parse_case(json.dumps(data)))
        original = laplacian_pair(self.case)
        p = np.zeros((14, 14))
        p[perm, np.arange(14)] = 1.0
        np.testing.assert_allclose(relabelled.yr, p @ original.yr @ p.T, atol=1e-12)
        np.testing.assert_allclose(relabelled.yj, p @ original.yj @ p.T, atol=1e-12)

    def test_change_of_mva_base(self):
        """Moving from 100 MVA to 1 MVA multiplies every admittance by 100."""
        pair = laplacian_pair(self.case)
        rebased = pair.on_base(self.case.base_mva, 1.0)
        np.testing.assert_allclose(rebased.yr, 100.0 * pair.yr)
        np.testing.assert_allclose(rebased.yj, 100.0 * pair.yj)
        with self.assertRaises(ValueError):
            pair.on_base(100.0, 0.0)


if __name__ == '__main__':
    unittest.main()
