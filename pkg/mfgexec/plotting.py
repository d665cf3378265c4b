"""
Static SVG charts of result tables.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

# pylint: disable=wrong-import-position
import matplotlib.pyplot as plt
import numpy as np

from mfgexec.errors import PlotSpecError

CANVAS_WIDTH = 960
CANVAS_HEIGHT = 540
POINTS_PER_INCH = 72

# Longer series are thinned to keep the files small.
MAX_LINE_POINTS = 2000

LINE = "line"
HEATMAP = "heatmap"

# Fixed ids and no timestamp make the output byte-identical across runs.
SVG_RC = {
    "svg.hashsalt": "mfgexec",
    "svg.fonttype": "none",
    "svg.image_inline": True,
}

Table = Mapping[str, Sequence]


@dataclass(frozen=True)
class PlotSpec:
    """
    A line chart of `y` columns against `x`, or a heatmap of the single
    `z` column over (`x`, `y[0]`) from a long-format table.
    """

    kind: str
    x: str
    y: List[str]
    z: Optional[str] = None
    title: str = ""
    units: Dict[str, str] = field(default_factory=dict)

    def columns(self) -> List[str]:
        return [self.x, *self.y] + ([self.z] if self.z is not None else [])

    def label(self, column: str) -> str:
        unit = self.units.get(column)
        return f"{column} [{unit}]" if unit else column


def _check_spec(table: Table, spec: PlotSpec) -> None:
    if spec.kind not in (LINE, HEATMAP):
        raise PlotSpecError(f"unknown plot kind `{spec.kind}`")
    if spec.kind == HEATMAP and (spec.z is None or len(spec.y) != 1):
        raise PlotSpecError("a heatmap needs exactly one y column and a z column")
    for column in spec.columns():
        if column not in table:
            raise PlotSpecError(f"unknown column `{column}`")


def _row_count(table: Table) -> int:
    return min((len(values) for values in table.values()), default=0)


def _plot_lines(ax, table: Table, spec: PlotSpec) -> None:
    x_values = np.asarray(table[spec.x], dtype=float)
    stride = max(1, -(-len(x_values) // MAX_LINE_POINTS))
    keep = np.arange(0, len(x_values), stride)
    if keep[-1] != len(x_values) - 1:
        keep = np.append(keep, len(x_values) - 1)
    for column in spec.y:
        ax.plot(x_values[keep], np.asarray(table[column], dtype=float)[keep], label=column)
    ax.set_ylabel(", ".join(spec.label(column) for column in spec.y))
    if len(spec.y) > 1:
        ax.legend()


def _plot_heatmap(fig, ax, table: Table, spec: PlotSpec) -> None:
    assert spec.z is not None
    x_values = np.asarray(table[spec.x], dtype=float)
    y_values = np.asarray(table[spec.y[0]], dtype=float)
    z_values = np.asarray(table[spec.z], dtype=float)
    xs = np.unique(x_values)
    ys = np.unique(y_values)
    grid = np.full((len(ys), len(xs)), np.nan)
    grid[np.searchsorted(ys, y_values), np.searchsorted(xs, x_values)] = z_values

    image = ax.imshow(
        grid,
        aspect="auto",
        origin="lower",
        interpolation="nearest",
        extent=(float(xs[0]), float(xs[-1]), -0.5, len(ys) - 0.5),
        cmap="viridis",
    )
    ax.set_yticks(range(len(ys)))
    ax.set_yticklabels([f"{y:g}" for y in ys])
    ax.set_ylabel(spec.label(spec.y[0]))
    colorbar = fig.colorbar(image, ax=ax)
    colorbar.set_label(spec.label(spec.z))


def render_svg(table: Table, spec: PlotSpec, path: Union[str, Path]) -> Path:
    """
    Renders `table` per `spec` into a 960x540 SVG file.

    An empty table gives labeled axes with a "no data" annotation.
    """
    if len(table) > 0:
        _check_spec(table, spec)
    path = Path(path)
    size = (CANVAS_WIDTH / POINTS_PER_INCH, CANVAS_HEIGHT / POINTS_PER_INCH)
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=size, dpi=POINTS_PER_INCH)
        try:
            if _row_count(table) == 0:
                ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
                ax.set_ylabel(", ".join(spec.label(column) for column in spec.y))
            elif spec.kind == HEATMAP:
                _plot_heatmap(fig, ax, table, spec)
            else:
                _plot_lines(ax, table, spec)
            ax.set_xlabel(spec.label(spec.x))
            if spec.title:
                ax.set_title(spec.title)
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return path
