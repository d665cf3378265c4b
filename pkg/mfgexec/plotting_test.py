# pylint: disable=missing-docstring

import tempfile
import unittest
from pathlib import Path

from mfgexec.errors import PlotSpecError
from mfgexec.plotting import HEATMAP, LINE, PlotSpec, render_svg

LINE_TABLE = {"t": [0.0, 0.5, 1.0], "V_bar": [0.0, 1.0, 1.5], "v_bar": [2.0, 1.0, 0.5]}

HEATMAP_TABLE = {
    "t": [0.0, 1.0, 0.0, 1.0],
    "ratio": [0.5, 0.5, 2.0, 2.0],
    "E_Qa_minus_Qn": [0.0, 3.0, 0.0, -3.0],
}


class Test(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_line_chart(self):
        spec = PlotSpec(LINE, "t", ["V_bar", "v_bar"], title="Mean field", units={"t": "years"})
        path = render_svg(LINE_TABLE, spec, self.dir / "line.svg")
        text = path.read_text(encoding="utf-8")
        self.assertIn("<svg", text)
        self.assertIn("t [years]", text)
        self.assertIn("Mean field", text)

    def test_heatmap(self):
        spec = PlotSpec(HEATMAP, "t", ["ratio"], z="E_Qa_minus_Qn")
        path = render_svg(HEATMAP_TABLE, spec, self.dir / "heatmap.svg")
        self.assertIn("E_Qa_minus_Qn", path.read_text(encoding="utf-8"))

    def test_rerun_is_byte_identical(self):
        spec = PlotSpec(LINE, "t", ["V_bar"])
        first = render_svg(LINE_TABLE, spec, self.dir / "first.svg").read_bytes()
        second = render_svg(LINE_TABLE, spec, self.dir / "second.svg").read_bytes()
        self.assertEqual(first, second)

    def test_bad_specs(self):
        with self.assertRaises(PlotSpecError):
            render_svg(LINE_TABLE, PlotSpec(LINE, "t", ["Q_bar_a"]), self.dir / "x.svg")
        with self.assertRaises(PlotSpecError):
            render_svg(LINE_TABLE, PlotSpec("bars", "t", ["V_bar"]), self.dir / "x.svg")
        with self.assertRaises(PlotSpecError):
            render_svg(HEATMAP_TABLE, PlotSpec(HEATMAP, "t", ["ratio"]), self.dir / "x.svg")
        self.assertFalse((self.dir / "x.svg").exists())

    def test_empty_table(self):
        path = render_svg({}, PlotSpec(LINE, "t", ["V_bar"]), self.dir / "empty.svg")
        self.assertIn("no data", path.read_text(encoding="utf-8"))
        path = render_svg({"t": [], "V_bar": []}, PlotSpec(LINE, "t", ["V_bar"]), self.dir / "rows.svg")
        self.assertIn("no data", path.read_text(encoding="utf-8"))
