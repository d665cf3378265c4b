"""
Euler-Maruyama simulation of the representative agent and of a finite
population sharing one common noise.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from mfgexec.meanfield import MeanFieldTrajectory, feedback_coefficients
from mfgexec.misc import elapsed_end, stable_digest
from mfgexec.params import ParamSet
from mfgexec.riccati import RiccatiTables
from mfgexec.rng_helper import (
    CHANNEL_COMMON,
    CHANNEL_IDIO_A,
    CHANNEL_IDIO_N,
    COMMON_PLAYER,
    MAX_SEED,
    brownian_increments,
    stream_id,
)

logger = logging.getLogger(__name__)

# Paths per work unit of the representative-agent simulation.
MFG_CHUNK_PATHS = 256

# Upper bound on draws x players x steps per work unit of a population run.
POPULATION_CHUNK_ELEMENTS = 4_000_000

PRICE_DISCRETE_MEAN = "discrete_mean"
PRICE_REALIZED = "realized"

GAIN_SCALE = "gain_scale"
RATE_SHIFT = "rate_shift"


@dataclass(frozen=True)
class SimConfig:
    """
    Simulation sizes and seed.

    `brownian_steps`, when given, is the resolution at which Brownian
    increments are drawn; it must be a multiple of `n_steps`.
    """

    n_steps: int = 2000
    n_paths: int = 1000
    n_common: int = 100
    master_seed: int = 1
    population_n: int = 1
    brownian_steps: Optional[int] = None

    def __post_init__(self) -> None:
        problems = [
            f"{name} must be an integer >= 1"
            for name in ("n_steps", "n_paths", "n_common", "population_n")
            if not _is_count(getattr(self, name))
        ]
        if not isinstance(self.master_seed, int) or not 0 <= self.master_seed <= MAX_SEED:
            problems.append("master_seed must be a 64-bit unsigned integer")
        if self.brownian_steps is not None and (
            not _is_count(self.brownian_steps)
            or not _is_count(self.n_steps)
            or self.brownian_steps % self.n_steps != 0
        ):
            problems.append("brownian_steps must be a positive multiple of n_steps")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def substeps(self) -> int:
        if self.brownian_steps is None:
            return 1
        return self.brownian_steps // self.n_steps

    def digest(self) -> str:
        return stable_digest(asdict(self))


def _is_count(value: object) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 1


@dataclass(frozen=True)
class ControlDeviation:
    """
    Unilateral deviation from the equilibrium feedback law.

    gain_scale multiplies both feedback brackets by 1 + epsilon;
    rate_shift adds epsilon * q_target / T to both rates.
    """

    kind: str
    epsilon: float

    def __post_init__(self) -> None:
        if self.kind not in (GAIN_SCALE, RATE_SHIFT):
            raise ValueError(f"unknown deviation kind `{self.kind}`")
        if not np.isfinite(self.epsilon):
            raise ValueError("deviation epsilon must be finite")

    @property
    def gain(self) -> float:
        return 1.0 + self.epsilon if self.kind == GAIN_SCALE else 1.0

    def rate_shift(self, p: ParamSet) -> float:
        return self.epsilon * p.q_target / p.horizon if self.kind == RATE_SHIFT else 0.0

    def label(self) -> str:
        return f"{self.kind}({self.epsilon:g})"


@dataclass(frozen=True)
class PathEnsemble:
    """Representative-agent paths, one row per path."""

    # pylint: disable=invalid-name,too-many-instance-attributes
    t: np.ndarray
    dt: float
    S: np.ndarray
    Q_a: np.ndarray
    Q_n: np.ndarray
    nu_a: np.ndarray
    nu_n: np.ndarray
    common_index: np.ndarray
    stream_ids: List[str]
    params_digest: str
    sim_digest: str
    deviation: Optional[ControlDeviation] = None
    controls_recorded: bool = True

    @property
    def n_paths(self) -> int:
        return self.S.shape[0]

    def total_inventory(self) -> np.ndarray:
        return self.Q_a + self.Q_n


@dataclass(frozen=True)
class PopulationEnsemble:
    """
    Finite-population runs, one row per common draw.

    Player 1 (the possibly deviating player) is always recorded; the other
    players only through cross-player statistics unless `players` was kept.
    """

    # pylint: disable=invalid-name,too-many-instance-attributes
    t: np.ndarray
    dt: float
    n_players: int
    S: np.ndarray
    Q_a: np.ndarray
    Q_n: np.ndarray
    nu_a: np.ndarray
    nu_n: np.ndarray
    mean_total: np.ndarray
    mean_nu_a: np.ndarray
    mean_nu_n: np.ndarray
    dispersion_total: np.ndarray
    common_index: np.ndarray
    params_digest: str
    sim_digest: str
    price_mode: str = PRICE_REALIZED
    deviation: Optional[ControlDeviation] = None
    players: Optional[Dict[str, np.ndarray]] = None
    controls_recorded: bool = True

    @property
    def n_draws(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True)
class ConditionalMeans:
    t: np.ndarray
    mean_total: np.ndarray
    mean_nu_a: np.ndarray
    mean_nu_n: np.ndarray
    dispersion_total: np.ndarray
    cross_draw_std_total: np.ndarray
    cross_draw_std_nu_a: np.ndarray
    cross_draw_std_nu_n: np.ndarray


@dataclass(frozen=True)
class DiscreteMean:
    """Noiseless Euler recursion: the conditional mean of the discrete scheme."""

    t: np.ndarray
    total: np.ndarray
    nu_a: np.ndarray
    nu_n: np.ndarray


@dataclass(frozen=True)
class _Plan:
    # pylint: disable=too-many-instance-attributes
    t: np.ndarray
    dt: float
    slope: np.ndarray
    offset: np.ndarray
    analytic_drift: np.ndarray
    inv_two_kappa_a: float
    inv_two_kappa_n: float


def _plan(
    p: ParamSet, tables: RiccatiTables, traj: MeanFieldTrajectory, cfg: SimConfig
) -> _Plan:
    t_values = np.linspace(0.0, p.horizon, cfg.n_steps + 1)
    t_values[-1] = p.horizon
    dt = p.horizon / cfg.n_steps
    if tables.grid.step > dt * (1.0 + 1e-9):
        raise ValueError(
            f"tables grid step {tables.grid.step:g} is coarser than the simulation step {dt:g}"
        )
    slope, offset = feedback_coefficients(t_values, traj, tables)
    drift = np.interp(t_values, traj.grid.t_values, traj.price_drift)
    return _Plan(
        t=t_values,
        dt=dt,
        slope=slope,
        offset=offset,
        analytic_drift=drift,
        inv_two_kappa_a=1.0 / (2.0 * p.kappa_a),
        inv_two_kappa_n=1.0 / (2.0 * p.kappa_n),
    )


def _controls(
    plan: _Plan,
    k: int,
    q_total: np.ndarray,
    deviation: Optional[ControlDeviation],
    shift: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Feedback rates at step k, evaluated on the state at step k."""
    bracket = plan.slope[k] * q_total + plan.offset[k]
    if deviation is None:
        return -bracket * plan.inv_two_kappa_a, -bracket * plan.inv_two_kappa_n
    bracket = bracket * deviation.gain
    return (
        -bracket * plan.inv_two_kappa_a + shift,
        -bracket * plan.inv_two_kappa_n + shift,
    )


def _run_chunks(work: Callable[[int], None], n_units: int, workers: int) -> None:
    if workers <= 1 or n_units <= 1:
        for unit in range(n_units):
            work(unit)
        return
    with ThreadPoolExecutor(max_workers=workers) as executor:
        # list() re-raises worker exceptions here
        list(executor.map(work, range(n_units)))


def simulate_mfg_paths(
    p: ParamSet,
    tables: RiccatiTables,
    traj: MeanFieldTrajectory,
    cfg: SimConfig,
    deviation: Optional[ControlDeviation] = None,
    workers: int = 1,
) -> PathEnsemble:
    """
    Representative agent under the equilibrium feedback, the price drifting
    with the analytic mean-field term -D v_bar.

    Path k uses common draw k mod n_common and the idiosyncratic streams
    of player k div n_common + 1.
    """
    # pylint: disable=too-many-arguments,too-many-locals
    started = time.time()
    logger.info(f"==> Simulating {cfg.n_paths} representative paths, {cfg.n_steps} steps")
    plan = _plan(p, tables, traj, cfg)
    n_steps, n_paths = cfg.n_steps, cfg.n_paths
    shape = (n_paths, n_steps + 1)
    prices, q_a, q_n = np.empty(shape), np.empty(shape), np.empty(shape)
    nu_a, nu_n = np.empty(shape), np.empty(shape)
    common_index = np.arange(n_paths) % cfg.n_common
    player_index = np.arange(n_paths) // cfg.n_common + 1
    shift = deviation.rate_shift(p) if deviation is not None else 0.0

    def increments(common: int, player: int, channel: int) -> np.ndarray:
        return brownian_increments(
            cfg.master_seed, common, player, channel, n_steps, plan.dt, cfg.substeps
        )

    def work(unit: int) -> None:
        rows = slice(unit * MFG_CHUNK_PATHS, min((unit + 1) * MFG_CHUNK_PATHS, n_paths))
        commons = common_index[rows]
        players = player_index[rows]
        common_noise = {
            int(c): increments(int(c), COMMON_PLAYER, CHANNEL_COMMON) for c in np.unique(commons)
        }
        dw0 = np.stack([common_noise[int(c)] for c in commons])
        dwa = np.stack([increments(int(c), int(j), CHANNEL_IDIO_A) for c, j in zip(commons, players)])
        dwn = np.stack([increments(int(c), int(j), CHANNEL_IDIO_N) for c, j in zip(commons, players)])

        s_k = np.full(len(commons), p.s0)
        qa_k = np.full(len(commons), p.q0_a)
        qn_k = np.full(len(commons), p.q0_n)
        for k in range(n_steps + 1):
            rate_a, rate_n = _controls(plan, k, qa_k + qn_k, deviation, shift)
            prices[rows, k], q_a[rows, k], q_n[rows, k] = s_k, qa_k, qn_k
            nu_a[rows, k], nu_n[rows, k] = rate_a, rate_n
            if k == n_steps:
                break
            qa_k = qa_k + rate_a * plan.dt + p.sigma_a * dwa[:, k]
            qn_k = qn_k + rate_n * plan.dt + p.sigma_n * dwn[:, k]
            s_k = s_k + plan.analytic_drift[k] * plan.dt + p.sigma_0 * dw0[:, k]

    n_units = -(-n_paths // MFG_CHUNK_PATHS)
    _run_chunks(work, n_units, workers)
    logger.info(f"    >> paths simulated in {elapsed_end(started)}")

    return PathEnsemble(
        t=plan.t,
        dt=plan.dt,
        S=prices,
        Q_a=q_a,
        Q_n=q_n,
        nu_a=nu_a,
        nu_n=nu_n,
        common_index=common_index,
        stream_ids=[
            stream_id(cfg.master_seed, int(c), int(j), CHANNEL_IDIO_A)
            for c, j in zip(common_index, player_index)
        ],
        params_digest=stable_digest(p.to_dict()),
        sim_digest=cfg.digest(),
        deviation=deviation,
    )


def discrete_conditional_mean(
    p: ParamSet, tables: RiccatiTables, traj: MeanFieldTrajectory, cfg: SimConfig
) -> DiscreteMean:
    """The Euler recursion of the simulators with all noise switched off."""
    plan = _plan(p, tables, traj, cfg)
    total = np.empty(cfg.n_steps + 1)
    rates_a = np.empty(cfg.n_steps + 1)
    rates_n = np.empty(cfg.n_steps + 1)
    # channels kept apart, as in the noisy recursions
    qa_k = np.array([p.q0_a])
    qn_k = np.array([p.q0_n])
    for k in range(cfg.n_steps + 1):
        q_total = qa_k + qn_k
        rate_a, rate_n = _controls(plan, k, q_total, None, 0.0)
        total[k], rates_a[k], rates_n[k] = q_total[0], rate_a[0], rate_n[0]
        qa_k = qa_k + rate_a * plan.dt
        qn_k = qn_k + rate_n * plan.dt
    return DiscreteMean(t=plan.t, total=total, nu_a=rates_a, nu_n=rates_n)


def simulate_population(
    p: ParamSet,
    tables: RiccatiTables,
    traj: MeanFieldTrajectory,
    cfg: SimConfig,
    deviation: Optional[ControlDeviation] = None,
    workers: int = 1,
    price_mode: str = PRICE_REALIZED,
    keep_players: bool = False,
) -> PopulationEnsemble:
    """
    `cfg.population_n` players over `cfg.n_common` common draws, every
    player on the equilibrium feedback except player 1 when a deviation is
    given.

    With the realized price mode the drift is the realized cross-player
    average alpha_a mean(nu_a) + alpha_n mean(nu_n); with the discrete-mean
    mode it is the same expression at the noiseless scheme's rates (the
    mean-field limit of the discrete game).
    """
    # pylint: disable=too-many-arguments,too-many-locals,too-many-statements
    if price_mode not in (PRICE_REALIZED, PRICE_DISCRETE_MEAN):
        raise ValueError(f"unknown price mode `{price_mode}`")
    started = time.time()
    n_players, n_draws, n_steps = cfg.population_n, cfg.n_common, cfg.n_steps
    logger.info(
        f"==> Simulating population N={n_players} over {n_draws} common draws"
        + (f", player 1 {deviation.label()}" if deviation is not None else "")
    )
    plan = _plan(p, tables, traj, cfg)
    shift = deviation.rate_shift(p) if deviation is not None else 0.0

    limit_drift = None
    if price_mode == PRICE_DISCRETE_MEAN:
        reference = discrete_conditional_mean(p, tables, traj, cfg)
        limit_drift = p.alpha_a * reference.nu_a + p.alpha_n * reference.nu_n

    shape = (n_draws, n_steps + 1)
    record = {
        name: np.empty(shape)
        for name in (
            "S",
            "Q_a",
            "Q_n",
            "nu_a",
            "nu_n",
            "mean_total",
            "mean_nu_a",
            "mean_nu_n",
            "dispersion_total",
        )
    }
    players: Optional[Dict[str, np.ndarray]] = None
    if keep_players:
        players = {
            name: np.empty((n_draws, n_players, n_steps + 1))
            for name in ("Q_a", "Q_n", "nu_a", "nu_n")
        }

    chunk = max(1, POPULATION_CHUNK_ELEMENTS // (n_players * (n_steps + 1)))

    def increments(common: int, player: int, channel: int) -> np.ndarray:
        return brownian_increments(
            cfg.master_seed, common, player, channel, n_steps, plan.dt, cfg.substeps
        )

    def work(unit: int) -> None:
        draws = range(unit * chunk, min((unit + 1) * chunk, n_draws))
        rows = slice(draws.start, draws.stop)
        dw0 = np.stack([increments(c, COMMON_PLAYER, CHANNEL_COMMON) for c in draws])
        dwa = np.stack(
            [np.stack([increments(c, j + 1, CHANNEL_IDIO_A) for j in range(n_players)]) for c in draws]
        )
        dwn = np.stack(
            [np.stack([increments(c, j + 1, CHANNEL_IDIO_N) for j in range(n_players)]) for c in draws]
        )

        s_k = np.full(len(draws), p.s0)
        qa_k = np.full((len(draws), n_players), p.q0_a)
        qn_k = np.full((len(draws), n_players), p.q0_n)
        for k in range(n_steps + 1):
            total = qa_k + qn_k
            rate_a, rate_n = _controls(plan, k, total, None, 0.0)
            if deviation is not None:
                dev_a, dev_n = _controls(plan, k, total[:, 0], deviation, shift)
                rate_a[:, 0], rate_n[:, 0] = dev_a, dev_n
            avg_a = rate_a.mean(axis=1)
            avg_n = rate_n.mean(axis=1)

            record["S"][rows, k] = s_k
            record["Q_a"][rows, k] = qa_k[:, 0]
            record["Q_n"][rows, k] = qn_k[:, 0]
            record["nu_a"][rows, k] = rate_a[:, 0]
            record["nu_n"][rows, k] = rate_n[:, 0]
            record["mean_total"][rows, k] = total.mean(axis=1)
            record["mean_nu_a"][rows, k] = avg_a
            record["mean_nu_n"][rows, k] = avg_n
            record["dispersion_total"][rows, k] = total.std(axis=1)
            if players is not None:
                players["Q_a"][rows, :, k] = qa_k
                players["Q_n"][rows, :, k] = qn_k
                players["nu_a"][rows, :, k] = rate_a
                players["nu_n"][rows, :, k] = rate_n
            if k == n_steps:
                break

            if limit_drift is None:
                drift = p.alpha_a * avg_a + p.alpha_n * avg_n
            else:
                drift = np.full(len(draws), limit_drift[k])
            qa_k = qa_k + rate_a * plan.dt + p.sigma_a * dwa[:, :, k]
            qn_k = qn_k + rate_n * plan.dt + p.sigma_n * dwn[:, :, k]
            s_k = s_k + drift * plan.dt + p.sigma_0 * dw0[:, k]

    n_units = -(-n_draws // chunk)
    _run_chunks(work, n_units, workers)
    logger.info(f"    >> population simulated in {elapsed_end(started)}")

    return PopulationEnsemble(
        t=plan.t,
        dt=plan.dt,
        n_players=n_players,
        common_index=np.arange(n_draws),
        params_digest=stable_digest(p.to_dict()),
        sim_digest=cfg.digest(),
        price_mode=price_mode,
        deviation=deviation,
        players=players,
        **record,
    )


def estimate_conditional_means(ens: PopulationEnsemble) -> ConditionalMeans:
    """
    Cross-player means per common draw, and their dispersion across draws.
    """
    if ens.n_draws == 0:
        raise ValueError("empty population ensemble")
    ddof = 1 if ens.n_draws > 1 else 0
    return ConditionalMeans(
        t=ens.t,
        mean_total=ens.mean_total,
        mean_nu_a=ens.mean_nu_a,
        mean_nu_n=ens.mean_nu_n,
        dispersion_total=ens.dispersion_total,
        cross_draw_std_total=ens.mean_total.std(axis=0, ddof=ddof),
        cross_draw_std_nu_a=ens.mean_nu_a.std(axis=0, ddof=ddof),
        cross_draw_std_nu_n=ens.mean_nu_n.std(axis=0, ddof=ddof),
    )

