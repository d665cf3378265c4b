"""
Monte Carlo evaluation of the trader's objective and the empirical
epsilon-Nash gap of the equilibrium feedback in finite populations.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import simpson

from mfgexec.meanfield import MeanFieldTrajectory, mean_price_path
from mfgexec.misc import SlopeFit, elapsed_end, fit_loglog_slope
from mfgexec.params import ParamSet
from mfgexec.riccati import RiccatiTables
from mfgexec.simulator import (
    GAIN_SCALE,
    PRICE_DISCRETE_MEAN,
    ControlDeviation,
    PathEnsemble,
    PopulationEnsemble,
    SimConfig,
    simulate_population,
)

logger = logging.getLogger(__name__)

DECOMPOSITION_TERMS = (
    "terminal_wealth",
    "terminal_penalty",
    "running_penalty",
    "transaction_cost_a",
    "transaction_cost_n",
    "price_payment",
)

DEFAULT_DEVIATIONS = tuple(
    ControlDeviation(GAIN_SCALE, eps) for eps in (-0.2, -0.1, 0.1, 0.2)
)

GAP_CURVE_COLUMNS = [
    "N",
    "deviation_kind",
    "epsilon",
    "J_eq",
    "J_dev",
    "gap",
    "stderr",
    "limit_gap",
    "excess",
    "excess_stderr",
]

Ensemble = Union[PathEnsemble, PopulationEnsemble]


@dataclass(frozen=True)
class ObjectiveEstimate:
    value: float
    std_error: float
    n_paths: int
    decomposition: Dict[str, float]
    samples: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    def to_dict(self) -> Dict[str, object]:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "decomposition": dict(self.decomposition),
        }


def _std_error(samples: np.ndarray) -> float:
    if len(samples) < 2:
        return 0.0
    return float(samples.std(ddof=1) / math.sqrt(len(samples)))


def _player_paths(ens: Ensemble, player: int) -> Tuple[np.ndarray, ...]:
    if isinstance(ens, PathEnsemble):
        if player != 0:
            raise ValueError("a representative-agent ensemble only has player 0")
        return ens.S, ens.Q_a, ens.Q_n, ens.nu_a, ens.nu_n
    if player == 0:
        return ens.S, ens.Q_a, ens.Q_n, ens.nu_a, ens.nu_n
    if ens.players is None:
        raise ValueError(f"player {player} was not kept in the population ensemble")
    if not 0 <= player < ens.n_players:
        raise ValueError(f"no player {player} in a population of {ens.n_players}")
    return (
        ens.S,
        ens.players["Q_a"][:, player],
        ens.players["Q_n"][:, player],
        ens.players["nu_a"][:, player],
        ens.players["nu_n"][:, player],
    )


def evaluate_objective(ens: Ensemble, p: ParamSet, player: int = 0) -> ObjectiveEstimate:
    """
    Objective of `player` (0 being player 1 of a population), time
    integrals taken as left-point Riemann sums on the simulation grid.
    """
    # pylint: disable=too-many-locals
    if not ens.controls_recorded:
        raise ValueError("ensemble controls were not recorded")
    prices, q_a, q_n, nu_a, nu_n = _player_paths(ens, player)
    dt = ens.dt
    q_total = q_a + q_n
    terms = {
        "terminal_wealth": q_total[:, -1] * prices[:, -1],
        "terminal_penalty": -p.psi * (q_total[:, -1] - p.q_target) ** 2,
        "running_penalty": -p.phi_run * np.sum(q_total[:, :-1] ** 2, axis=1) * dt,
        "transaction_cost_a": -p.kappa_a * np.sum(nu_a[:, :-1] ** 2, axis=1) * dt,
        "transaction_cost_n": -p.kappa_n * np.sum(nu_n[:, :-1] ** 2, axis=1) * dt,
        "price_payment": -np.sum((nu_a[:, :-1] + nu_n[:, :-1]) * prices[:, :-1], axis=1) * dt,
    }
    samples = sum(terms[name] for name in DECOMPOSITION_TERMS)
    return ObjectiveEstimate(
        value=float(np.mean(samples)),
        std_error=_std_error(samples),
        n_paths=len(samples),
        decomposition={name: float(np.mean(terms[name])) for name in DECOMPOSITION_TERMS},
        samples=samples,
    )


def deterministic_objective(traj: MeanFieldTrajectory, p: ParamSet) -> ObjectiveEstimate:
    """
    Objective of the noiseless equilibrium trajectory by Simpson
    quadrature on the trajectory grid.
    """
    t_values = traj.grid.t_values
    prices = mean_price_path(traj, p)
    v_total = traj.V_bar
    nu_a, nu_n = traj.mean_nu_a, traj.mean_nu_n

    def integral(values: np.ndarray) -> float:
        return float(simpson(values, x=t_values))

    decomposition = {
        "terminal_wealth": float(v_total[-1] * prices[-1]),
        "terminal_penalty": float(-p.psi * (v_total[-1] - p.q_target) ** 2),
        "running_penalty": -p.phi_run * integral(v_total**2),
        "transaction_cost_a": -p.kappa_a * integral(nu_a**2),
        "transaction_cost_n": -p.kappa_n * integral(nu_n**2),
        "price_payment": -integral((nu_a + nu_n) * prices),
    }
    value = sum(decomposition[name] for name in DECOMPOSITION_TERMS)
    return ObjectiveEstimate(
        value=value,
        std_error=0.0,
        n_paths=1,
        decomposition=decomposition,
        samples=np.array([value]),
    )


@dataclass(frozen=True)
class GapRow:
    # pylint: disable=invalid-name,too-many-instance-attributes
    N: int
    deviation: ControlDeviation
    J_eq: float
    J_dev: float
    gap: float
    std_error: float
    limit_gap: float
    excess: float
    excess_std_error: float


@dataclass(frozen=True)
class GapCurve:
    """
    Gap rows per (N, deviation). `limit_gap` is the same deviation played
    against the mean-field price on identical streams, and `excess` the
    difference, which carries the finite-population effect alone.
    """

    rows: List[GapRow]

    def populations(self) -> List[int]:
        return sorted(set(row.N for row in self.rows))

    def max_gap(self, n_players: int) -> float:
        return max(row.gap for row in self.rows if row.N == n_players)

    def max_abs_excess(self, n_players: int) -> float:
        return max(abs(row.excess) for row in self.rows if row.N == n_players)

    def fitted_slope(self) -> Optional[SlopeFit]:
        """Log-log slope of the max gap clamped at 0; None without two positive points."""
        ns = self.populations()
        clamped = [max(self.max_gap(n), 0.0) for n in ns]
        try:
            return fit_loglog_slope(ns, clamped)
        except ValueError:
            return None

    def excess_fitted_slope(self) -> Optional[SlopeFit]:
        ns = self.populations()
        try:
            return fit_loglog_slope(ns, [self.max_abs_excess(n) for n in ns])
        except ValueError:
            return None

    def columns(self) -> Dict[str, Sequence]:
        return {
            "N": [row.N for row in self.rows],
            "deviation_kind": [row.deviation.kind for row in self.rows],
            "epsilon": [row.deviation.epsilon for row in self.rows],
            "J_eq": [row.J_eq for row in self.rows],
            "J_dev": [row.J_dev for row in self.rows],
            "gap": [row.gap for row in self.rows],
            "stderr": [row.std_error for row in self.rows],
            "limit_gap": [row.limit_gap for row in self.rows],
            "excess": [row.excess for row in self.rows],
            "excess_stderr": [row.excess_std_error for row in self.rows],
        }

    def summary(self) -> Dict[str, object]:
        def fit_dict(fit: Optional[SlopeFit]) -> Optional[Dict[str, float]]:
            if fit is None:
                return None
            return {"slope": fit.slope, "ci_low": fit.ci_low, "ci_high": fit.ci_high}

        fitted = self.fitted_slope()
        excess = self.excess_fitted_slope()
        return {
            "Ns": self.populations(),
            "max_gap": {str(n): self.max_gap(n) for n in self.populations()},
            "max_abs_excess": {str(n): self.max_abs_excess(n) for n in self.populations()},
            "fitted_slope": fitted.slope if fitted is not None else None,
            "fitted_slope_fit": fit_dict(fitted),
            "excess_fitted_slope": excess.slope if excess is not None else None,
            "excess_fitted_slope_fit": fit_dict(excess),
        }


def nash_gap_curve(
    p: ParamSet,
    tables: RiccatiTables,
    traj: MeanFieldTrajectory,
    ns: Sequence[int],
    deviations: Sequence[ControlDeviation],
    cfg: SimConfig,
    workers: int = 1,
) -> GapCurve:
    """
    For every N, player 1's objective under each deviation minus its
    equilibrium objective, both on identical random streams.
    """
    # pylint: disable=too-many-arguments,too-many-locals
    started = time.time()
    logger.info(f"==> Nash gap curve over N={list(ns)}, {len(deviations)} deviations")
    logger.info(
        "    finite populations keep a fluctuating empirical mean, so the gap is"
        " checked for O(1/N) decay rather than for exact cancellation"
    )

    limit_cfg = replace(cfg, population_n=1)

    def limit_samples(deviation: Optional[ControlDeviation]) -> np.ndarray:
        ens = simulate_population(
            p, tables, traj, limit_cfg, deviation, workers, price_mode=PRICE_DISCRETE_MEAN
        )
        return evaluate_objective(ens, p).samples

    limit_eq = limit_samples(None)
    limit_gaps = [limit_samples(dev) - limit_eq for dev in deviations]

    rows: List[GapRow] = []
    for n_players in ns:
        n_cfg = replace(cfg, population_n=n_players)
        equilibrium = evaluate_objective(
            simulate_population(p, tables, traj, n_cfg, None, workers), p
        )
        for deviation, limit_gap in zip(deviations, limit_gaps):
            deviated = evaluate_objective(
                simulate_population(p, tables, traj, n_cfg, deviation, workers), p
            )
            gap = deviated.samples - equilibrium.samples
            excess = gap - limit_gap
            row = GapRow(
                N=n_players,
                deviation=deviation,
                J_eq=equilibrium.value,
                J_dev=deviated.value,
                gap=float(np.mean(gap)),
                std_error=_std_error(gap),
                limit_gap=float(np.mean(limit_gap)),
                excess=float(np.mean(excess)),
                excess_std_error=_std_error(excess),
            )
            if abs(row.gap) < 2.0 * row.std_error:
                logger.warning(
                    f"N={n_players} {deviation.label()}: gap {row.gap:.4g} is within"
                    f" 2 standard errors ({row.std_error:.3g}), noise-dominated"
                )
            rows.append(row)
    logger.info(f"    >> Nash gap curve done in {elapsed_end(started)}")
    return GapCurve(rows=rows)
