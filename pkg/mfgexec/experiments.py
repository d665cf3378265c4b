"""
Sensitivity sweeps, turnpike detection and the propagation-of-chaos study.

Sweeps over model constants work on the analytic mean trajectories; only
the chaos study simulates.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from mfgexec.errors import MfgExecError
from mfgexec.meanfield import MeanFieldTrajectory, mean_inventory_trajectory
from mfgexec.misc import SlopeFit, elapsed_end, fit_loglog_slope
from mfgexec.params import ParamSet, validate_params
from mfgexec.riccati import DEFAULT_GRID_POINTS, RiccatiTables, TimeGrid, solve_tables
from mfgexec.simulator import SimConfig, discrete_conditional_mean, simulate_population

logger = logging.getLogger(__name__)

DEFAULT_KAPPA_N = 2e-3

DEFAULT_TOL_REL = 0.02

PENALTY_FIELDS = ("phi_run", "psi")


def run_pipeline(
    p: ParamSet, n_points: int = DEFAULT_GRID_POINTS
) -> Tuple[RiccatiTables, MeanFieldTrajectory]:
    """Validated constants -> oracle tables -> mean trajectory."""
    validate_params(p)
    grid = TimeGrid.uniform(p.horizon, n_points)
    tables = solve_tables(p, grid)
    return tables, mean_inventory_trajectory(tables, p)


@dataclass(frozen=True)
class SweepCell:
    value: float
    params: ParamSet
    error: Optional[str] = None
    metrics: Dict[str, np.ndarray] = field(default_factory=dict)
    scalars: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SweepResult:
    """
    One cell per swept value. `metrics` are time series on `t`, `scalars`
    single numbers; failed cells carry their error message instead.
    """

    parameter: str
    values: List[float]
    t: np.ndarray
    cells: List[SweepCell]
    base: ParamSet
    sim: Optional[SimConfig] = None
    summary: Dict[str, object] = field(default_factory=dict)

    def long_columns(self) -> Dict[str, List]:
        """Long format: one row per (cell, t), or per cell without time series."""
        metric_names = sorted({name for cell in self.cells for name in cell.metrics})
        res: Dict[str, List] = {self.parameter: []}
        if metric_names:
            res["t"] = []
        for name in metric_names:
            res[name] = []
        for cell in self.cells:
            if cell.error is not None:
                continue
            if not metric_names:
                res[self.parameter].append(cell.value)
                continue
            res[self.parameter].extend([cell.value] * len(self.t))
            res["t"].extend(self.t.tolist())
            for name in metric_names:
                res[name].extend(cell.metrics[name].tolist())
        if not metric_names:
            for name in sorted({name for cell in self.cells for name in cell.scalars}):
                res[name] = [cell.scalars[name] for cell in self.cells if cell.error is None]
        return res

    def scalar(self, name: str) -> List[float]:
        """Scalar `name` per cell, nan for failed cells."""
        return [cell.scalars.get(name, float("nan")) for cell in self.cells]

    def report(self) -> Dict[str, object]:
        return {
            "parameter": self.parameter,
            "values": list(self.values),
            "base": self.base.to_dict(),
            "cells": [
                {
                    "value": cell.value,
                    "params": cell.params.to_dict(),
                    "error": cell.error,
                    "scalars": dict(cell.scalars),
                }
                for cell in self.cells
            ],
            "summary": dict(self.summary),
        }


def _run_cells(
    parameter: str,
    values: Sequence[float],
    base: ParamSet,
    make_params: Callable[[float], ParamSet],
    evaluate: Callable[[ParamSet], Tuple[Dict[str, np.ndarray], Dict[str, float]]],
    t_values: np.ndarray,
    workers: int,
) -> SweepResult:
    # pylint: disable=too-many-arguments
    def one(value: float) -> SweepCell:
        params = make_params(value)
        try:
            metrics, scalars = evaluate(params)
        except MfgExecError as exc:
            logger.warning(f"    {parameter}={value:g}: {exc}")
            return SweepCell(value=value, params=params, error=str(exc))
        return SweepCell(value=value, params=params, metrics=metrics, scalars=scalars)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            cells = list(executor.map(one, values))
    else:
        cells = [one(value) for value in values]
    return SweepResult(
        parameter=parameter,
        values=[float(v) for v in values],
        t=t_values,
        cells=cells,
        base=base,
    )


def sweep_kappa_ratio(
    base: ParamSet,
    ratios: Sequence[float],
    n_points: int = DEFAULT_GRID_POINTS,
    kappa_n: float = DEFAULT_KAPPA_N,
    workers: int = 1,
) -> SweepResult:
    """
    Expected inventory difference between the channels, E[Q_a - Q_n], for
    kappa_a = ratio * kappa_n with kappa_n held fixed.
    """
    # pylint: disable=too-many-arguments
    started = time.time()
    logger.info(f"==> kappa ratio sweep over {list(ratios)} (kappa_n={kappa_n:g})")

    def evaluate(params: ParamSet) -> Tuple[Dict[str, np.ndarray], Dict[str, float]]:
        _, traj = run_pipeline(params, n_points)
        difference = traj.Q_bar_a - traj.Q_bar_n
        return {"E_Qa_minus_Qn": difference}, {"terminal_difference": float(difference[-1])}

    result = _run_cells(
        "ratio",
        ratios,
        base,
        lambda ratio: replace(base, kappa_a=ratio * kappa_n, kappa_n=kappa_n),
        evaluate,
        TimeGrid.uniform(base.horizon, n_points).t_values,
        workers,
    )
    logger.info(f"    >> sweep done in {elapsed_end(started)}")
    return result


def _middle_third(t_values: np.ndarray) -> np.ndarray:
    horizon = t_values[-1]
    return (t_values >= horizon / 3.0) & (t_values <= 2.0 * horizon / 3.0)


def penalty_sweep(
    base: ParamSet,
    which: str,
    values: Sequence[float],
    n_points: int = DEFAULT_GRID_POINTS,
    workers: int = 1,
) -> SweepResult:
    """
    Mean inventory and controls across values of `phi_run` or `psi`.

    Besides the time series, each cell records the terminal mean inventory,
    the peak absolute mean controls, the mid-horizon flatness (largest
    distance of V_bar from its median over the middle third) and the
    mid-horizon deviation from q_target.
    """
    if which not in PENALTY_FIELDS:
        raise ValueError(f"penalty sweep over `{which}`, expecting one of {PENALTY_FIELDS}")
    started = time.time()
    logger.info(f"==> {which} sweep over {list(values)}")

    def evaluate(params: ParamSet) -> Tuple[Dict[str, np.ndarray], Dict[str, float]]:
        _, traj = run_pipeline(params, n_points)
        middle = traj.V_bar[_middle_third(traj.grid.t_values)]
        scalars = {
            "terminal_V_bar": float(traj.V_bar[-1]),
            "peak_abs_nu_a": float(np.max(np.abs(traj.mean_nu_a))),
            "peak_abs_nu_n": float(np.max(np.abs(traj.mean_nu_n))),
            "mid_flatness": float(np.max(np.abs(middle - np.median(middle)))),
            "mid_target_deviation": float(np.max(np.abs(middle - params.q_target))),
        }
        metrics = {
            "V_bar": traj.V_bar,
            "mean_nu_a": traj.mean_nu_a,
            "mean_nu_n": traj.mean_nu_n,
        }
        return metrics, scalars

    result = _run_cells(
        which,
        values,
        base,
        lambda value: replace(base, **{which: value}),
        evaluate,
        TimeGrid.uniform(base.horizon, n_points).t_values,
        workers,
    )
    logger.info(f"    >> sweep done in {elapsed_end(started)}")
    return result


@dataclass(frozen=True)
class TurnpikeThresholds:
    tol_abs: float
    tol_rel: float = DEFAULT_TOL_REL

    @classmethod
    def for_target(
        cls, q_target: float, tol_rel: float = DEFAULT_TOL_REL, tol_abs: Optional[float] = None
    ) -> TurnpikeThresholds:
        """Default absolute tolerance: 2% of |q_target|, or 1 for a zero target."""
        if tol_abs is None:
            tol_abs = 0.02 * abs(q_target) if q_target != 0 else 1.0
        return cls(tol_abs=tol_abs, tol_rel=tol_rel)


@dataclass(frozen=True)
class TurnpikeReport:
    # pylint: disable=too-many-instance-attributes
    entry_time: Optional[float]
    exit_time: Optional[float]
    plateau_level: float
    plateau_max_deviation: float
    has_turnpike: bool
    thresholds: TurnpikeThresholds
    horizon: float

    @property
    def entry_layer(self) -> Optional[float]:
        return self.entry_time

    @property
    def exit_layer(self) -> Optional[float]:
        return None if self.exit_time is None else self.horizon - self.exit_time

    def to_dict(self) -> Dict[str, object]:
        return {
            "entry_time": self.entry_time,
            "exit_time": self.exit_time,
            "entry_layer": self.entry_layer,
            "exit_layer": self.exit_layer,
            "plateau_level": self.plateau_level,
            "plateau_max_deviation": self.plateau_max_deviation,
            "has_turnpike": self.has_turnpike,
            "thresholds": {"tol_abs": self.thresholds.tol_abs, "tol_rel": self.thresholds.tol_rel},
            "horizon": self.horizon,
        }


def turnpike_detect(traj: MeanFieldTrajectory, thresholds: TurnpikeThresholds) -> TurnpikeReport:
    """
    The plateau level is the median of V_bar over the middle third of the
    horizon; entry and exit are the first and last grid times at which
    V_bar lies within tol_abs + tol_rel * |plateau| of it.
    """
    t_values = traj.grid.t_values
    horizon = float(t_values[-1])
    v_total = traj.V_bar
    plateau = float(np.median(v_total[_middle_third(t_values)]))
    distance = np.abs(v_total - plateau)
    within = np.flatnonzero(distance <= thresholds.tol_abs + thresholds.tol_rel * abs(plateau))

    entry: Optional[float] = None
    exit_: Optional[float] = None
    span = _middle_third(t_values)
    if len(within) >= 2:
        entry, exit_ = float(t_values[within[0]]), float(t_values[within[-1]])
        span = slice(within[0], within[-1] + 1)

    return TurnpikeReport(
        entry_time=entry,
        exit_time=exit_,
        plateau_level=plateau,
        plateau_max_deviation=float(np.max(distance[span])),
        has_turnpike=entry is not None
        and exit_ is not None
        and exit_ - entry >= 0.5 * horizon,
        thresholds=thresholds,
        horizon=horizon,
    )


def turnpike_phi_scan(
    base: ParamSet,
    phi_values: Sequence[float],
    n_points: int = DEFAULT_GRID_POINTS,
    tol_rel: float = DEFAULT_TOL_REL,
    workers: int = 1,
) -> SweepResult:
    """
    Turnpike detection across running penalties; the summary holds the
    smallest scanned phi_run showing a turnpike.
    """
    # pylint: disable=too-many-arguments
    thresholds = TurnpikeThresholds.for_target(base.q_target, tol_rel)
    logger.info(f"==> Turnpike scan over phi_run={list(phi_values)}")

    def evaluate(params: ParamSet) -> Tuple[Dict[str, np.ndarray], Dict[str, float]]:
        _, traj = run_pipeline(params, n_points)
        report = turnpike_detect(traj, thresholds)
        scalars = {
            "has_turnpike": 1.0 if report.has_turnpike else 0.0,
            "entry_time": report.entry_time if report.entry_time is not None else float("nan"),
            "exit_time": report.exit_time if report.exit_time is not None else float("nan"),
            "plateau_level": report.plateau_level,
        }
        return {"V_bar": traj.V_bar}, scalars

    result = _run_cells(
        "phi_run",
        phi_values,
        base,
        lambda value: replace(base, phi_run=value),
        evaluate,
        TimeGrid.uniform(base.horizon, n_points).t_values,
        workers,
    )
    with_turnpike = sorted(
        cell.value for cell in result.cells if cell.scalars.get("has_turnpike") == 1.0
    )
    result.summary["critical_phi_run"] = with_turnpike[0] if with_turnpike else None
    return result


def _slope_or_none(ns: Sequence[int], values: Sequence[float]) -> Optional[SlopeFit]:
    try:
        return fit_loglog_slope(ns, values)
    except ValueError:
        return None


def chaos_convergence_study(
    base: ParamSet,
    ns: Sequence[int],
    cfg: SimConfig,
    n_points: int = DEFAULT_GRID_POINTS,
    workers: int = 1,
) -> SweepResult:
    """
    Per common draw, sup over t of |(1/N) sum_j 2 nu_j - 2 m(t)| for both
    channels, averaged across draws, for every N.

    The reference m is the conditional mean rate of the discrete scheme,
    so the measured mismatch is free of time-discretization bias. The
    mismatch against the analytic mean rate is recorded alongside.
    """
    # pylint: disable=too-many-locals
    if any(later <= earlier for earlier, later in zip(ns, ns[1:])):
        raise ValueError(f"Ns must be increasing, got {list(ns)}")
    started = time.time()
    logger.info(f"==> Chaos convergence study over N={list(ns)}")
    tables, traj = run_pipeline(base, n_points)
    reference = discrete_conditional_mean(base, tables, traj, cfg)
    analytic_a = np.interp(reference.t, traj.grid.t_values, traj.mean_nu_a)

    cells: List[SweepCell] = []
    for n_players in ns:
        ens = simulate_population(base, tables, traj, replace(cfg, population_n=n_players), workers=workers)
        mismatch_a = np.max(np.abs(2.0 * ens.mean_nu_a - 2.0 * reference.nu_a), axis=1)
        mismatch_n = np.max(np.abs(2.0 * ens.mean_nu_n - 2.0 * reference.nu_n), axis=1)
        analytic = np.max(np.abs(2.0 * ens.mean_nu_a - 2.0 * analytic_a), axis=1)
        cells.append(
            SweepCell(
                value=float(n_players),
                params=base,
                scalars={
                    "mismatch_a": float(np.mean(mismatch_a)),
                    "mismatch_n": float(np.mean(mismatch_n)),
                    "mismatch_a_vs_analytic": float(np.mean(analytic)),
                },
            )
        )

    result = SweepResult(
        parameter="N",
        values=[float(n) for n in ns],
        t=reference.t,
        cells=cells,
        base=base,
        sim=cfg,
    )
    for channel in ("a", "n"):
        fit = _slope_or_none(ns, result.scalar(f"mismatch_{channel}"))
        result.summary[f"fitted_slope_{channel}"] = fit.slope if fit is not None else None
        if fit is not None:
            result.summary[f"fitted_slope_{channel}_ci"] = [fit.ci_low, fit.ci_high]
    logger.info(f"    >> chaos study done in {elapsed_end(started)}")
    return result
