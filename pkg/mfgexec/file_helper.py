"""
File handling utilities.
"""

import csv
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from mfgexec.plotting import PlotSpec, render_svg

logger = logging.getLogger(__name__)

DEFAULT_OUT_DIR = "out"

OUT_DIR_ENV = "MFGEXEC_OUT_DIR"


def resolve_out_dir(flag: Optional[str], configured: Optional[str]) -> str:
    """`--out-dir` flag, then the config's out_dir, then $MFGEXEC_OUT_DIR, then `out`."""
    return flag or configured or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR


def format_value(value: Any) -> str:
    """
    Shortest round-trip text of a number; other values as str.
    See test_format_value
    """
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        # JSON has no nan/inf
        return float(obj) if math.isfinite(obj) else None
    return obj


class FileHelper:
    """
    Writes the artifacts of one run under `out_dir` and keeps track of
    them for the manifest.
    """

    def __init__(self, out_dir: str = DEFAULT_OUT_DIR):
        self.out_dir = Path(out_dir)
        self.written: List[str] = []

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def _record(self, name: str) -> None:
        if name not in self.written:
            self.written.append(name)

    def write_csv(self, name: str, columns: Mapping[str, Sequence]) -> Path:
        """Columns in the given order; all columns must have the same length."""
        lengths = {len(values) for values in columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"{name}: columns of different lengths {sorted(lengths)}")
        n_rows = lengths.pop() if lengths else 0
        path = self.path(name)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(list(columns))
            series = list(columns.values())
            for i in range(n_rows):
                writer.writerow([format_value(values[i]) for values in series])
        logger.info(f"    wrote {path} ({n_rows:,} rows)")
        self._record(name)
        return path

    def write_json(self, name: str, obj: Any) -> Path:
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_jsonable(obj), f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info(f"    wrote {path}")
        self._record(name)
        return path

    def write_svg(self, name: str, table: Mapping[str, Sequence], spec: PlotSpec) -> Path:
        path = render_svg(table, spec, self.path(name))
        logger.info(f"    wrote {path}")
        self._record(name)
        return path

    def write_manifest(self, manifest: Dict[str, Any], name: str = "manifest.json") -> Path:
        """The manifest lists every artifact written before it."""
        return self.write_json(name, {**manifest, "outputs": list(self.written)})
