# pylint: disable=missing-docstring

import unittest
from dataclasses import replace

import numpy as np

from mfgexec.errors import RiccatiBlowUpError
from mfgexec.params import BASE_PARAMS, derive_coefficients
from mfgexec.riccati import (
    SOURCE_ORACLE,
    TimeGrid,
    chi_bar_from_phibar,
    closed_form_report,
    convergence_order,
    ode_residuals,
    phi_bar_closed_form,
    phi_self_closed_form,
    rk4_path,
    solve_mean_system_oracle,
    solve_self_system_oracle,
    solve_tables,
    symmetry_gaps,
)


class TimeGridTest(unittest.TestCase):
    def test_uniform(self):
        grid = TimeGrid.uniform(2.0, 5)
        np.testing.assert_array_equal(grid.t_values, [0.0, 0.5, 1.0, 1.5, 2.0])
        self.assertEqual(grid.step, 0.5)
        self.assertEqual(grid.n_intervals, 4)
        np.testing.assert_array_equal(grid.midpoints(), [0.25, 0.75, 1.25, 1.75])
        self.assertEqual(grid.refined().size, 9)
        with self.assertRaises(ValueError):
            grid.t_values[0] = 1.0

    def test_uniform_rejects(self):
        for n_points in (2, 4, 1000):
            with self.assertRaises(ValueError):
                TimeGrid.uniform(1.0, n_points)
        with self.assertRaises(ValueError):
            TimeGrid.uniform(0.0, 11)


class Rk4Test(unittest.TestCase):
    def test_exponential_decay(self):
        t_values = np.linspace(0.0, 1.0, 101)
        values = rk4_path(lambda k, stage, y: (-2.0 * y[0],), (1.0,), t_values)
        np.testing.assert_allclose(values[:, 0], np.exp(-2.0 * t_values), rtol=1e-7)

    def test_blow_up(self):
        t_values = np.linspace(0.0, 2.0, 201)
        # y' = y^2 from y(0) = 1 explodes at t = 1
        with self.assertRaises(RiccatiBlowUpError) as ctx:
            rk4_path(lambda k, stage, y: (y[0] * y[0],), (1.0,), t_values)
        self.assertGreater(ctx.exception.blow_up_time, 0.9)
        self.assertLessEqual(ctx.exception.blow_up_time, 1.2)


class OracleTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.p = BASE_PARAMS
        cls.grid = TimeGrid.uniform(cls.p.horizon)
        cls.tables = solve_tables(cls.p, cls.grid)

    def test_terminal_conditions(self):
        t = self.tables
        for name in ("phi_bar", "zeta_bar", "phi_self", "zeta_self"):
            self.assertAlmostEqual(t.require(name)[-1], 2.0 * self.p.psi, delta=1e-12)
        for name in ("chi_bar", "eta_bar"):
            self.assertAlmostEqual(
                t.require(name)[-1], -2.0 * self.p.psi * self.p.q_target, delta=1e-12
            )

    def test_symmetry(self):
        gaps = symmetry_gaps(self.tables)
        self.assertEqual(
            set(gaps), {"phi_bar_vs_zeta_bar", "chi_bar_vs_eta_bar", "phi_self_vs_zeta_self"}
        )
        for gap in gaps.values():
            self.assertLessEqual(gap, 1e-10)

    def test_ode_residuals(self):
        bound = 10.0 * self.grid.step**2
        residuals = ode_residuals(self.tables, self.p)
        self.assertGreater(residuals.pop("checked_nodes"), 1000)
        for name, value in residuals.items():
            self.assertLessEqual(value, bound, name)

        full = ode_residuals(self.tables, self.p, skip_boundary_layer=False)
        self.assertEqual(full["checked_nodes"], self.grid.size - 2)

    def test_convergence_order(self):
        self.assertGreaterEqual(convergence_order(self.p, self.grid.size), 3.5)

    def test_fixed_points(self):
        c = derive_coefficients(self.p)
        self.assertAlmostEqual(self.tables.require("phi_bar")[0], c.fixed_point_mean, delta=1e-4)
        self.assertAlmostEqual(self.tables.require("phi_self")[0], c.fixed_point_self, delta=1e-4)

    def test_chi_bar_quadrature(self):
        oracle = self.tables.require("chi_bar")
        quadrature = chi_bar_from_phibar(self.tables, self.p)
        scale = np.max(np.abs(oracle))
        self.assertLess(np.max(np.abs(quadrature - oracle)) / scale, 1e-5)

    def test_closed_form_report(self):
        report = closed_form_report(self.tables, self.p)
        self.assertEqual(set(report), {"phi_bar", "phi_self"})
        for name, entry in report.items():
            if "error" in entry:
                continue
            self.assertGreaterEqual(entry["max_relative_deviation"], 0.0)
            self.assertTrue(0.0 <= entry["at_t"] <= self.p.horizon)
            self.assertEqual(entry["oracle_t0"], self.tables.require(name)[0])

    def test_columns(self):
        columns = self.tables.columns()
        self.assertEqual(
            list(columns),
            ["t", "phi_bar", "zeta_bar", "chi_bar", "eta_bar", "phi_self", "zeta_self", "source"],
        )
        self.assertEqual(columns["source"][0], SOURCE_ORACLE)
        self.assertEqual(len(columns["source"]), self.grid.size)

    def test_tables_read_only(self):
        with self.assertRaises(ValueError):
            self.tables.require("phi_bar")[0] = 0.0


class SingleSystemTest(unittest.TestCase):
    def test_merge_and_require(self):
        grid = TimeGrid.uniform(1.0, 2001)
        mean = solve_mean_system_oracle(BASE_PARAMS, grid)
        self.assertTrue(mean.has_mean_system)
        self.assertFalse(mean.has_self_system)
        with self.assertRaises(ValueError):
            mean.require("phi_self")

        merged = mean.merged(solve_self_system_oracle(BASE_PARAMS, grid))
        self.assertTrue(merged.has_self_system)
        np.testing.assert_array_equal(merged.phi_bar, mean.phi_bar)

        with self.assertRaises(ValueError):
            mean.merged(solve_self_system_oracle(BASE_PARAMS, TimeGrid.uniform(1.0, 2003)))

    def test_negative_terminal_penalty_blows_up(self):
        p = replace(BASE_PARAMS, psi=-1.0)
        with self.assertRaises(RiccatiBlowUpError):
            solve_self_system_oracle(p, TimeGrid.uniform(1.0, 2001))


class ClosedFormTest(unittest.TestCase):
    def test_terminal_value(self):
        # at t = T the printed form reduces to 2 psi
        c = derive_coefficients(BASE_PARAMS)
        self.assertAlmostEqual(phi_bar_closed_form(1.0, BASE_PARAMS, c), 2.0, places=12)

    def test_no_overflow_far_from_terminal(self):
        p = replace(BASE_PARAMS, horizon=100.0)
        c = derive_coefficients(p)
        values = phi_bar_closed_form(np.array([0.0, 50.0, 99.0]), p, c)
        self.assertTrue(np.all(np.isfinite(values)))

    def test_self_form_is_symmetric_in_channels(self):
        c = derive_coefficients(BASE_PARAMS)
        self.assertAlmostEqual(phi_self_closed_form(1.0, BASE_PARAMS, c), 2.0, places=12)
        swapped = replace(
            BASE_PARAMS,
            alpha_a=BASE_PARAMS.alpha_n,
            alpha_n=BASE_PARAMS.alpha_a,
            kappa_a=BASE_PARAMS.kappa_n,
            kappa_n=BASE_PARAMS.kappa_a,
        )
        ts = np.array([0.0, 0.3, 0.9])
        np.testing.assert_allclose(
            phi_self_closed_form(ts, swapped, derive_coefficients(swapped)),
            phi_self_closed_form(ts, BASE_PARAMS, c),
            rtol=1e-12,
        )

    def test_zero_terminal_penalty_stays_positive(self):
        p = replace(BASE_PARAMS, psi=0.0)
        c = derive_coefficients(p)
        ts = np.array([0.0, 0.5, 0.9, 0.999])
        self.assertTrue(np.all(phi_bar_closed_form(ts, p, c) > 0.0))
        self.assertTrue(np.all(phi_self_closed_form(ts, p, c) > 0.0))
        self.assertEqual(phi_bar_closed_form(1.0, p, c), 0.0)

        tables = solve_tables(p, TimeGrid.uniform(p.horizon, 2001))
        for name in ("phi_bar", "phi_self"):
            self.assertTrue(np.all(tables.require(name)[:-1] > 0.0), name)


class FixedPointStartTest(unittest.TestCase):
    # a terminal value on the fixed point leaves nothing to relax
    def test_mean_system_is_constant(self):
        c = derive_coefficients(BASE_PARAMS)
        p = replace(BASE_PARAMS, psi=c.fixed_point_mean / 2.0)
        tables = solve_mean_system_oracle(p, TimeGrid.uniform(p.horizon, 2001))
        for name in ("phi_bar", "zeta_bar"):
            np.testing.assert_allclose(tables.require(name), c.fixed_point_mean, rtol=0.0, atol=1e-10)

    def test_self_system_is_constant(self):
        c = derive_coefficients(BASE_PARAMS)
        p = replace(BASE_PARAMS, psi=c.fixed_point_self / 2.0)
        tables = solve_self_system_oracle(p, TimeGrid.uniform(p.horizon, 2001))
        for name in ("phi_self", "zeta_self"):
            np.testing.assert_allclose(tables.require(name), c.fixed_point_self, rtol=0.0, atol=1e-10)

    def test_no_target_no_chi(self):
        p = replace(BASE_PARAMS, q_target=0.0)
        tables = solve_mean_system_oracle(p, TimeGrid.uniform(p.horizon, 2001))
        np.testing.assert_array_equal(tables.require("chi_bar"), 0.0)
        np.testing.assert_array_equal(tables.require("eta_bar"), 0.0)
