"""
Some misc utilities.
"""

import hashlib
import json
import math
import time
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np
from scipy import stats


def elapsed_end(started: float) -> str:
    """See test_elapsed_end"""

    secs = time.time() - started
    seconds = math.floor(secs)
    minutes, seconds = divmod(seconds, 60)
    hours, minutes = divmod(minutes, 60)
    if hours > 0:
        return f"{hours:02}h:{minutes:02}m:{seconds:02}s"
    if minutes > 0:
        return f"{minutes:02}m:{seconds:02}s"
    return f"{secs:.1f}s"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def stable_digest(obj: Any) -> str:
    """SHA-256 of the canonical JSON rendering of `obj`."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def parse_override(arg: str) -> Tuple[str, Any]:
    """
    Parses a `dotted.key=value` override. The value is read as JSON when
    possible, as a plain string otherwise.

    See test_parse_override
    """
    if "=" not in arg:
        raise ValueError(f"invalid override `{arg}`, expecting key=value")
    key, raw = arg.split("=", 1)
    key = key.strip()
    if not key or any(not part for part in key.split(".")):
        raise ValueError(f"invalid override key in `{arg}`")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(doc: Dict[str, Any], overrides: Sequence[Tuple[str, Any]]) -> Dict[str, Any]:
    """
    Returns a copy of `doc` with the dotted-path overrides applied,
    intermediate objects being created as needed.
    """
    res: Dict[str, Any] = json.loads(json.dumps(doc))
    for key, value in overrides:
        node = res
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ValueError(f"override `{key}`: `{part}` is not an object")
            node = child
        node[parts[-1]] = value
    return res


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    n_points: int


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float], confidence: float = 0.95) -> SlopeFit:
    """
    Least-squares slope of log(y) against log(x), with its confidence
    interval. Requires at least two points with positive coordinates.
    """
    x_arr = np.asarray(xs, dtype=float)
    y_arr = np.asarray(ys, dtype=float)
    keep = (x_arr > 0) & (y_arr > 0) & np.isfinite(y_arr)
    if np.count_nonzero(keep) < 2:
        raise ValueError("need at least two positive points for a log-log fit")
    log_x, log_y = np.log(x_arr[keep]), np.log(y_arr[keep])
    n_points = len(log_x)
    if n_points == 2:
        slope = float((log_y[1] - log_y[0]) / (log_x[1] - log_x[0]))
        return SlopeFit(slope, float(log_y[0] - slope * log_x[0]), slope, slope, 2)
    fit = stats.linregress(log_x, log_y)
    half_width = float(stats.t.ppf(0.5 + confidence / 2.0, n_points - 2) * fit.stderr)
    return SlopeFit(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        ci_low=float(fit.slope) - half_width,
        ci_high=float(fit.slope) + half_width,
        n_points=n_points,
    )

