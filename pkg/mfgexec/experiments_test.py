# pylint: disable=missing-docstring

import math
import unittest
from dataclasses import replace

import numpy as np

from mfgexec.experiments import (
    TurnpikeThresholds,
    chaos_convergence_study,
    penalty_sweep,
    run_pipeline,
    sweep_kappa_ratio,
    turnpike_detect,
    turnpike_phi_scan,
)
from mfgexec.params import BASE_PARAMS
from mfgexec.simulator import SimConfig

GRID = 4001

# 100 on each channel against a target of 100
TURNPIKE_PARAMS = replace(BASE_PARAMS, q0_a=100.0, q0_n=100.0, q_target=100.0)

# initial total equal to the target, as in configs/phi_sweep.json
PHI_SWEEP_PARAMS = replace(BASE_PARAMS, q0_a=50.0, q0_n=50.0, q_target=100.0)


class KappaRatioTest(unittest.TestCase):
    def test_terminal_difference_decreases(self):
        result = sweep_kappa_ratio(BASE_PARAMS, [0.25, 0.5, 1.0, 2.0], GRID, kappa_n=2e-3, workers=2)
        self.assertEqual(result.parameter, "ratio")
        self.assertTrue(all(cell.error is None for cell in result.cells))
        self.assertEqual(result.cells[0].params.kappa_a, 0.25 * 2e-3)
        self.assertEqual(result.cells[0].params.kappa_n, 2e-3)

        terminal = result.scalar("terminal_difference")
        for earlier, later in zip(terminal, terminal[1:]):
            self.assertGreater(earlier, later)
        self.assertEqual(terminal[2], BASE_PARAMS.q0_a - BASE_PARAMS.q0_n)

        columns = result.long_columns()
        self.assertEqual(list(columns), ["ratio", "t", "E_Qa_minus_Qn"])
        self.assertEqual(len(columns["t"]), 4 * GRID)

        report = result.report()
        self.assertEqual(report["values"], [0.25, 0.5, 1.0, 2.0])
        self.assertEqual(len(report["cells"]), 4)


class PenaltySweepTest(unittest.TestCase):
    def test_terminal_inventory_grows_with_psi(self):
        result = penalty_sweep(BASE_PARAMS, "psi", [0.01, 0.1, 1.0], GRID)
        terminal = result.scalar("terminal_V_bar")
        for earlier, later in zip(terminal, terminal[1:]):
            self.assertLessEqual(earlier, later)

    def test_mid_horizon_flattens_with_phi(self):
        result = penalty_sweep(PHI_SWEEP_PARAMS, "phi_run", [0.1, 1.0, 10.0], GRID)
        flatness = result.scalar("mid_flatness")
        for earlier, later in zip(flatness, flatness[1:]):
            self.assertGreaterEqual(earlier, later)

        # the running penalty pulls the plateau to zero, away from the target
        deviation = result.scalar("mid_target_deviation")
        for earlier, later in zip(deviation, deviation[1:]):
            self.assertLessEqual(earlier, later + 1e-6)
        self.assertAlmostEqual(deviation[-1], PHI_SWEEP_PARAMS.q_target, delta=1e-3)

    def test_failed_cells_are_recorded(self):
        result = penalty_sweep(BASE_PARAMS, "psi", [-1.0, 1.0], GRID)
        self.assertIn("psi must be non-negative", result.cells[0].error)
        self.assertIsNone(result.cells[1].error)
        self.assertTrue(math.isnan(result.scalar("terminal_V_bar")[0]))
        columns = result.long_columns()
        self.assertEqual(set(columns["psi"]), {1.0})
        self.assertEqual(result.report()["cells"][0]["error"], result.cells[0].error)

    def test_unknown_penalty(self):
        with self.assertRaises(ValueError):
            penalty_sweep(BASE_PARAMS, "kappa_a", [1.0], GRID)


class TurnpikeTest(unittest.TestCase):
    def test_turnpike_with_strong_running_penalty(self):
        p = replace(TURNPIKE_PARAMS, phi_run=1.0)
        _, traj = run_pipeline(p, GRID)
        report = turnpike_detect(traj, TurnpikeThresholds.for_target(p.q_target))
        self.assertTrue(report.has_turnpike)
        self.assertLess(report.entry_layer, 0.15 * p.horizon)
        self.assertLess(report.exit_layer, 0.15 * p.horizon)
        self.assertEqual(report.to_dict()["has_turnpike"], True)

    def test_short_layers_with_very_strong_running_penalty(self):
        p = replace(TURNPIKE_PARAMS, phi_run=10.0, q_target=200.0)
        _, traj = run_pipeline(p, GRID)
        report = turnpike_detect(traj, TurnpikeThresholds.for_target(p.q_target))
        self.assertTrue(report.has_turnpike)
        self.assertLess(report.entry_layer, 0.15 * p.horizon)
        self.assertLess(report.exit_layer, 0.15 * p.horizon)

    def test_no_turnpike_with_weak_running_penalty(self):
        p = replace(TURNPIKE_PARAMS, phi_run=0.099)
        _, traj = run_pipeline(p, GRID)
        report = turnpike_detect(traj, TurnpikeThresholds.for_target(p.q_target))
        self.assertFalse(report.has_turnpike)

    def test_offsetting_channels(self):
        p = replace(BASE_PARAMS, q0_a=100.0, q0_n=-100.0, q_target=0.0)
        _, traj = run_pipeline(p, GRID)
        report = turnpike_detect(traj, TurnpikeThresholds.for_target(p.q_target))
        self.assertTrue(report.has_turnpike)
        self.assertGreaterEqual(report.exit_time - report.entry_time, 0.9 * p.horizon)

    def test_thresholds(self):
        self.assertEqual(TurnpikeThresholds.for_target(100.0).tol_abs, 2.0)
        self.assertEqual(TurnpikeThresholds.for_target(0.0).tol_abs, 1.0)
        self.assertEqual(TurnpikeThresholds.for_target(0.0, tol_abs=0.5).tol_abs, 0.5)

    def test_phi_scan(self):
        result = turnpike_phi_scan(TURNPIKE_PARAMS, [0.099, 1.0], GRID)
        self.assertEqual(result.scalar("has_turnpike"), [0.0, 1.0])
        self.assertEqual(result.summary["critical_phi_run"], 1.0)


class ChaosTest(unittest.TestCase):
    def test_mismatch_decays_like_inverse_square_root(self):
        cfg = SimConfig(n_steps=50, n_common=20, master_seed=17)
        result = chaos_convergence_study(BASE_PARAMS, [4, 16, 64], cfg, 2001)
        self.assertEqual(result.parameter, "N")
        mismatch = result.scalar("mismatch_a")
        self.assertTrue(np.all(np.diff(mismatch) < 0.0))
        self.assertAlmostEqual(result.summary["fitted_slope_a"], -0.5, delta=0.15)
        self.assertAlmostEqual(result.summary["fitted_slope_n"], -0.5, delta=0.15)
        columns = result.long_columns()
        self.assertEqual(columns["N"], [4.0, 16.0, 64.0])
        self.assertIn("mismatch_a_vs_analytic", columns)

    def test_increasing_populations_required(self):
        with self.assertRaises(ValueError):
            chaos_convergence_study(BASE_PARAMS, [10, 5], SimConfig(n_steps=50), 2001)
