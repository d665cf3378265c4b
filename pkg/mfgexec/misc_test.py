# pylint: disable=missing-docstring

import math
import time
import unittest

from mfgexec.misc import (
    apply_overrides,
    elapsed_end,
    fit_loglog_slope,
    parse_override,
    stable_digest,
)


class Test(unittest.TestCase):
    def test_elapsed_end(self):
        self.assertEqual("5.0s", elapsed_end(time.time() - 5))
        self.assertEqual("59.0s", elapsed_end(time.time() - 59))
        self.assertEqual("01m:02s", elapsed_end(time.time() - 62))
        self.assertEqual("59m:00s", elapsed_end(time.time() - 59 * 60))
        self.assertEqual("01h:00m:00s", elapsed_end(time.time() - 60 * 60))
        self.assertEqual("02h:00m:00s", elapsed_end(time.time() - 2 * 60 * 60))

    def test_parse_override(self):
        self.assertEqual(parse_override("params.psi=0.1"), ("params.psi", 0.1))
        self.assertEqual(parse_override("sim.n_paths=500"), ("sim.n_paths", 500))
        self.assertEqual(parse_override("emit_svg=true"), ("emit_svg", True))
        self.assertEqual(parse_override("out_dir=runs/a"), ("out_dir", "runs/a"))
        self.assertEqual(parse_override("nash_gap.Ns=[2,5]"), ("nash_gap.Ns", [2, 5]))
        # only the first `=` separates
        self.assertEqual(parse_override("out_dir=a=b"), ("out_dir", "a=b"))

        for bad in ("params.psi", "=1", "params..psi=1", ".psi=1"):
            with self.assertRaises(ValueError):
                parse_override(bad)

    def test_apply_overrides(self):
        doc = {"params": {"psi": 1.0}, "grid_points": 11}
        res = apply_overrides(doc, [("params.psi", 0.5), ("sim.n_steps", 10)])
        self.assertEqual(res, {"params": {"psi": 0.5}, "grid_points": 11, "sim": {"n_steps": 10}})
        # input untouched
        self.assertEqual(doc["params"]["psi"], 1.0)

        with self.assertRaises(ValueError):
            apply_overrides(doc, [("grid_points.x", 1)])

    def test_stable_digest(self):
        self.assertEqual(stable_digest({"a": 1, "b": [1, 2]}), stable_digest({"b": [1, 2], "a": 1}))
        self.assertNotEqual(stable_digest({"a": 1}), stable_digest({"a": 2}))
        self.assertEqual(len(stable_digest({})), 64)

    def test_fit_loglog_slope(self):
        ns = [10, 100, 1000, 10000]
        fit = fit_loglog_slope(ns, [3.0 / math.sqrt(n) for n in ns])
        self.assertAlmostEqual(fit.slope, -0.5, places=12)
        self.assertAlmostEqual(math.exp(fit.intercept), 3.0, places=9)
        self.assertAlmostEqual(fit.ci_low, -0.5, places=9)
        self.assertAlmostEqual(fit.ci_high, -0.5, places=9)
        self.assertEqual(fit.n_points, 4)

        # noisy points: the interval brackets the slope
        fit = fit_loglog_slope([1, 2, 4, 8], [1.0, 0.55, 0.24, 0.13])
        self.assertLess(fit.ci_low, fit.slope)
        self.assertGreater(fit.ci_high, fit.slope)

        two = fit_loglog_slope([1, 10], [1.0, 0.1])
        self.assertAlmostEqual(two.slope, -1.0, places=12)

        # non-positive values are left out of the fit
        with self.assertRaises(ValueError):
            fit_loglog_slope([1, 2, 3], [1.0, 0.0, -1.0])
