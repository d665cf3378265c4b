# pylint: disable=missing-docstring

import unittest
from dataclasses import replace

import numpy as np

from mfgexec.experiments import run_pipeline
from mfgexec.meanfield import total_inventory_variance
from mfgexec.params import BASE_PARAMS
from mfgexec.simulator import (
    GAIN_SCALE,
    PRICE_DISCRETE_MEAN,
    RATE_SHIFT,
    ControlDeviation,
    SimConfig,
    discrete_conditional_mean,
    estimate_conditional_means,
    simulate_mfg_paths,
    _run_chunks,
    simulate_population,
)

NOISELESS = dict(sigma_0=0.0, sigma_a=0.0, sigma_n=0.0)


class SimConfigTest(unittest.TestCase):
    def test_defaults(self):
        cfg = SimConfig()
        self.assertEqual(cfg.substeps, 1)
        self.assertEqual(cfg.digest(), SimConfig().digest())
        self.assertNotEqual(cfg.digest(), SimConfig(master_seed=2).digest())
        self.assertEqual(SimConfig(n_steps=100, brownian_steps=400).substeps, 4)

    def test_invalid(self):
        for kwargs in (
            dict(n_paths=0),
            dict(n_steps=-1),
            dict(n_common=True),
            dict(population_n=1.5),
            dict(master_seed=-1),
            dict(master_seed=2**64),
            dict(n_steps=100, brownian_steps=150),
        ):
            with self.assertRaises(ValueError, msg=str(kwargs)):
                SimConfig(**kwargs)

    def test_deviation(self):
        gain = ControlDeviation(GAIN_SCALE, 0.1)
        self.assertAlmostEqual(gain.gain, 1.1)
        self.assertEqual(gain.rate_shift(BASE_PARAMS), 0.0)
        shift = ControlDeviation(RATE_SHIFT, -0.5)
        self.assertEqual(shift.gain, 1.0)
        self.assertEqual(shift.rate_shift(BASE_PARAMS), -100.0)
        self.assertEqual(shift.label(), "rate_shift(-0.5)")
        with self.assertRaises(ValueError):
            ControlDeviation("flip", 0.1)
        with self.assertRaises(ValueError):
            ControlDeviation(GAIN_SCALE, float("inf"))


class RepresentativeAgentTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.p = BASE_PARAMS
        cls.tables, cls.traj = run_pipeline(cls.p, 2001)

    def test_coarse_tables_rejected(self):
        with self.assertRaises(ValueError):
            simulate_mfg_paths(self.p, self.tables, self.traj, SimConfig(n_steps=4000, n_paths=1))

    def test_layout_and_streams(self):
        p = replace(self.p, sigma_0=1.0)
        cfg = SimConfig(n_steps=200, n_paths=25, n_common=10)
        ens = simulate_mfg_paths(p, self.tables, self.traj, cfg)
        self.assertEqual(ens.S.shape, (25, 201))
        self.assertEqual(ens.n_paths, 25)
        np.testing.assert_array_equal(ens.common_index, np.arange(25) % 10)
        np.testing.assert_array_equal(ens.Q_a[:, 0], self.p.q0_a)
        np.testing.assert_array_equal(ens.S[:, 0], self.p.s0)
        self.assertEqual(len(set(ens.stream_ids)), 25)
        # paths 0 and 10 share the common draw, hence the price path
        np.testing.assert_array_equal(ens.S[0], ens.S[10])
        self.assertFalse(np.array_equal(ens.S[0], ens.S[1]))
        self.assertFalse(np.array_equal(ens.Q_a[0], ens.Q_a[10]))

    def test_workers_do_not_change_results(self):
        cfg = SimConfig(n_steps=100, n_paths=600, n_common=50, master_seed=11)
        serial = simulate_mfg_paths(self.p, self.tables, self.traj, cfg, workers=1)
        threaded = simulate_mfg_paths(self.p, self.tables, self.traj, cfg, workers=3)
        for name in ("S", "Q_a", "Q_n", "nu_a", "nu_n"):
            np.testing.assert_array_equal(getattr(serial, name), getattr(threaded, name))

    def test_monte_carlo_mean(self):
        cfg = SimConfig(n_steps=2000, n_paths=10_000, n_common=100, master_seed=3)
        ens = simulate_mfg_paths(self.p, self.tables, self.traj, cfg)
        terminal = ens.total_inventory()[:, -1]
        std_error = terminal.std(ddof=1) / np.sqrt(len(terminal))
        discrete = discrete_conditional_mean(self.p, self.tables, self.traj, cfg)
        self.assertLessEqual(abs(terminal.mean() - discrete.total[-1]), 4.0 * std_error)

        # mid-horizon spread against the variance equation
        variance = total_inventory_variance(self.tables, self.p)
        sample = ens.total_inventory()[:, 1000].var(ddof=1)
        self.assertAlmostEqual(sample / variance[1000], 1.0, delta=0.1)

    def test_noiseless_matches_analytic_mean(self):
        # liquidation to zero: no terminal forcing layer for Euler to resolve
        p = replace(self.p, q0_a=100.0, q0_n=100.0, q_target=0.0, **NOISELESS)
        tables, traj = run_pipeline(p, 10_001)
        cfg = SimConfig(n_steps=10_000, n_paths=1, n_common=1)
        ens = simulate_mfg_paths(p, tables, traj, cfg)
        total = ens.total_inventory()[0]
        scale = np.max(np.abs(traj.V_bar))
        self.assertLess(np.max(np.abs(total - traj.V_bar)) / scale, 1e-3)
        np.testing.assert_array_equal(total, discrete_conditional_mean(p, tables, traj, cfg).total)

    def test_noiseless_base_set_matches_analytic_mean(self):
        # nonzero target: the terminal layer is resolved at dt = 1e-4
        p = replace(self.p, **NOISELESS)
        tables, traj = run_pipeline(p, 10_001)
        cfg = SimConfig(n_steps=10_000, n_paths=1, n_common=1)
        total = simulate_mfg_paths(p, tables, traj, cfg).total_inventory()[0]
        scale = np.max(np.abs(traj.V_bar))
        self.assertLess(np.max(np.abs(total - traj.V_bar)) / scale, 1e-3)
        self.assertAlmostEqual(total[-1], traj.V_bar[-1], delta=1e-3 * scale)

    def test_brownian_resolution(self):
        # zero mean inventory: only the noise paths can differ
        p = replace(self.p, psi=0.01, q_target=0.0)
        tables, traj = run_pipeline(p, 2001)
        fine = simulate_mfg_paths(p, tables, traj, SimConfig(n_steps=2000, n_paths=200, n_common=10))
        coarse = simulate_mfg_paths(
            p, tables, traj, SimConfig(n_steps=500, n_paths=200, n_common=10, brownian_steps=2000)
        )
        other = simulate_mfg_paths(
            p, tables, traj, SimConfig(n_steps=500, n_paths=200, n_common=10, master_seed=99)
        )
        same_path = np.mean(np.abs(coarse.total_inventory()[:, -1] - fine.total_inventory()[:, -1]))
        other_path = np.mean(np.abs(other.total_inventory()[:, -1] - fine.total_inventory()[:, -1]))
        self.assertLess(same_path, 0.25 * other_path)


class PopulationTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.p = BASE_PARAMS
        cls.tables, cls.traj = run_pipeline(cls.p, 2001)
        cls.cfg = SimConfig(n_steps=200, n_common=12, master_seed=5)

    def test_noiseless_single_player_is_the_discrete_mean(self):
        p = replace(self.p, **NOISELESS)
        tables, traj = run_pipeline(p, 2001)
        ens = simulate_population(p, tables, traj, self.cfg)
        discrete = discrete_conditional_mean(p, tables, traj, self.cfg)
        np.testing.assert_array_equal(ens.mean_total[0], discrete.total)
        np.testing.assert_array_equal(ens.mean_nu_a[3], discrete.nu_a)

    def test_player_one_independent_of_population_size(self):
        small = simulate_population(self.p, self.tables, self.traj, replace(self.cfg, population_n=2))
        large = simulate_population(self.p, self.tables, self.traj, replace(self.cfg, population_n=5))
        np.testing.assert_array_equal(small.Q_a, large.Q_a)
        np.testing.assert_array_equal(small.nu_n, large.nu_n)
        self.assertFalse(np.array_equal(small.mean_total, large.mean_total))

    def test_keep_players(self):
        cfg = replace(self.cfg, population_n=3)
        ens = simulate_population(self.p, self.tables, self.traj, cfg, keep_players=True)
        self.assertEqual(ens.players["Q_a"].shape, (12, 3, 201))
        np.testing.assert_array_equal(ens.players["Q_a"][:, 0], ens.Q_a)
        np.testing.assert_allclose(
            (ens.players["Q_a"] + ens.players["Q_n"]).mean(axis=1), ens.mean_total, rtol=1e-12
        )
        self.assertEqual(ens.n_draws, 12)
        self.assertEqual(ens.n_players, 3)

    def test_zero_deviation_is_the_equilibrium(self):
        cfg = replace(self.cfg, population_n=3)
        equilibrium = simulate_population(self.p, self.tables, self.traj, cfg)
        deviated = simulate_population(
            self.p, self.tables, self.traj, cfg, ControlDeviation(GAIN_SCALE, 0.0)
        )
        np.testing.assert_array_equal(equilibrium.S, deviated.S)
        np.testing.assert_array_equal(equilibrium.nu_a, deviated.nu_a)

    def test_deviation_only_moves_player_one(self):
        cfg = replace(self.cfg, population_n=3)
        equilibrium = simulate_population(self.p, self.tables, self.traj, cfg, keep_players=True)
        deviated = simulate_population(
            self.p, self.tables, self.traj, cfg, ControlDeviation(GAIN_SCALE, 0.2), keep_players=True
        )
        self.assertFalse(np.array_equal(equilibrium.Q_a, deviated.Q_a))
        np.testing.assert_array_equal(equilibrium.players["Q_a"][:, 1:], deviated.players["Q_a"][:, 1:])

    def test_workers_and_price_modes(self):
        cfg = replace(self.cfg, population_n=4)
        serial = simulate_population(self.p, self.tables, self.traj, cfg, workers=1)
        threaded = simulate_population(self.p, self.tables, self.traj, cfg, workers=4)
        np.testing.assert_array_equal(serial.S, threaded.S)
        np.testing.assert_array_equal(serial.mean_total, threaded.mean_total)

        limit = simulate_population(
            self.p, self.tables, self.traj, cfg, price_mode=PRICE_DISCRETE_MEAN
        )
        self.assertEqual(limit.price_mode, PRICE_DISCRETE_MEAN)
        np.testing.assert_array_equal(limit.Q_a, serial.Q_a)
        self.assertFalse(np.array_equal(limit.S, serial.S))
        with self.assertRaises(ValueError):
            simulate_population(self.p, self.tables, self.traj, cfg, price_mode="frozen")

    def test_conditional_means(self):
        ens = simulate_population(self.p, self.tables, self.traj, replace(self.cfg, population_n=4))
        means = estimate_conditional_means(ens)
        self.assertEqual(means.mean_total.shape, (12, 201))
        self.assertEqual(means.cross_draw_std_total.shape, (201,))
        self.assertEqual(means.cross_draw_std_total[0], 0.0)
        self.assertGreater(means.cross_draw_std_total[-1], 0.0)
        np.testing.assert_array_equal(means.dispersion_total[:, 0], 0.0)


class RunChunksTest(unittest.TestCase):
    def test_every_unit_runs_once(self):
        for workers in (1, 4):
            seen = []
            _run_chunks(seen.append, 10, workers)
            self.assertEqual(sorted(seen), list(range(10)), workers)

    def test_worker_errors_propagate(self):
        def work(unit: int) -> None:
            if unit == 3:
                raise RuntimeError("unit 3 failed")

        for workers in (1, 4):
            with self.assertRaisesRegex(RuntimeError, "unit 3 failed"):
                _run_chunks(work, 6, workers)
