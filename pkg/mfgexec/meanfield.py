"""
Deterministic conditional-mean layer: mean inventories, the self chi
coefficient, equilibrium feedback controls and the mean price drift.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from mfgexec.errors import PhiBarVanishesError
from mfgexec.params import ParamSet, derive_coefficients
from mfgexec.riccati import RiccatiTables, TimeGrid, Vector, rk4_path

logger = logging.getLogger(__name__)

VANISHING_THRESHOLD = 1e-12

MEAN_TRAJECTORY_COLUMNS = [
    "t",
    "V_bar",
    "Q_bar_a",
    "Q_bar_n",
    "v_bar",
    "chi_self",
    "mean_nu_a",
    "mean_nu_n",
    "price_drift",
]


@dataclass(frozen=True)
class MeanFieldTrajectory:
    """
    Conditional-mean paths on the tables' grid.

    theta_fn, f_fn drive the mean inventory, dV = theta (f - V) dt;
    beta_fn, g_fn drive an individual total inventory,
    dQ = beta (g - Q) dt + noise.
    """

    # pylint: disable=invalid-name,too-many-instance-attributes
    grid: TimeGrid
    V_bar: np.ndarray
    Q_bar_a: np.ndarray
    Q_bar_n: np.ndarray
    v_bar: np.ndarray
    chi_self: np.ndarray
    theta_fn: np.ndarray
    f_fn: np.ndarray
    beta_fn: np.ndarray
    g_fn: np.ndarray
    price_drift: np.ndarray
    mean_nu_a: np.ndarray
    mean_nu_n: np.ndarray

    def columns(self) -> Dict[str, Sequence]:
        values = {"t": self.grid.t_values}
        values.update({name: getattr(self, name) for name in MEAN_TRAJECTORY_COLUMNS[1:]})
        return values


def _ratio(
    numerator: np.ndarray, denominator: np.ndarray, grid: TimeGrid, name: str
) -> np.ndarray:
    """
    numerator / denominator, refusing nodes where the denominator vanishes.
    A vanishing denominator is tolerated only at T over a vanishing
    numerator (zero terminal penalty), where the ratio is taken as 0.
    """
    small = np.abs(denominator) < VANISHING_THRESHOLD
    tolerated = np.zeros_like(small)
    tolerated[-1] = numerator[-1] == 0.0
    offending = small & ~tolerated
    if np.any(offending):
        raise PhiBarVanishesError(float(grid.t_values[np.argmax(offending)]), name)
    res = np.zeros_like(numerator)
    np.divide(numerator, denominator, out=res, where=~small)
    return res


def _node_and_mid_values(
    values: np.ndarray, grid: TimeGrid, reverse: bool = False
) -> Tuple[List[float], List[float]]:
    """Values at the nodes and, by cubic spline, at the midpoints."""
    mids = CubicSpline(grid.t_values, values)(grid.midpoints())
    if reverse:
        return values[::-1].tolist(), mids[::-1].tolist()
    return values.tolist(), mids.tolist()


def _stage(nodes: List[float], mids: List[float], k: int, stage: int) -> float:
    if stage == 0:
        return nodes[k]
    if stage == 1:
        return mids[k]
    return nodes[k + 1]


def mean_inventory_trajectory(tables: RiccatiTables, p: ParamSet) -> MeanFieldTrajectory:
    """
    Integrates dV = -B (phi_bar V + chi_bar) dt, that is theta (f - V) dt,
    forward by RK4 from V(0) = q0_a + q0_n, then derives the per-channel
    mean inventories and everything built on them.
    """
    # pylint: disable=too-many-locals
    c = derive_coefficients(p)
    grid = tables.grid
    t_values = grid.t_values
    phi_bar = tables.require("phi_bar")
    chi_bar = tables.require("chi_bar")
    phi_self = tables.require("phi_self")

    theta = c.B * phi_bar
    f_values = _ratio(-chi_bar, phi_bar, grid, "phi_bar")

    phi_nodes, phi_mids = _node_and_mid_values(phi_bar, grid)
    chi_nodes, chi_mids = _node_and_mid_values(chi_bar, grid)
    rate = c.B

    def rhs(k: int, stage: int, y: Vector) -> Vector:
        phi_at = _stage(phi_nodes, phi_mids, k, stage)
        chi_at = _stage(chi_nodes, chi_mids, k, stage)
        return (-rate * (phi_at * y[0] + chi_at),)

    v_total = rk4_path(rhs, (p.q0_a + p.q0_n,), t_values)[:, 0]

    v_bar = phi_bar * v_total + chi_bar
    sold = cumulative_simpson(-v_bar, x=t_values, initial=0.0)
    q_bar_a = p.q0_a + sold / (2.0 * p.kappa_a)
    q_bar_n = p.q0_n + sold / (2.0 * p.kappa_n)

    chi_self = (phi_bar - phi_self) * v_total + chi_bar
    beta = c.B * phi_self
    g_values = _ratio(-chi_self, phi_self, grid, "phi_self")

    return MeanFieldTrajectory(
        grid=grid,
        V_bar=v_total,
        Q_bar_a=q_bar_a,
        Q_bar_n=q_bar_n,
        v_bar=v_bar,
        chi_self=chi_self,
        theta_fn=theta,
        f_fn=f_values,
        beta_fn=beta,
        g_fn=g_values,
        price_drift=-c.D * v_bar,
        mean_nu_a=-v_bar / (2.0 * p.kappa_a),
        mean_nu_n=-v_bar / (2.0 * p.kappa_n),
    )


def mean_inventory_quadrature(tables: RiccatiTables, p: ParamSet) -> np.ndarray:
    """
    Integral form of the mean inventory,
    V_t = exp(-Theta_t) (V_0 + int_0^t exp(Theta_s) theta_s f_s ds)
    with Theta the cumulative integral of theta; Simpson throughout.
    """
    c = derive_coefficients(p)
    t_values = tables.grid.t_values
    theta = c.B * tables.require("phi_bar")
    forcing = -c.B * tables.require("chi_bar")
    cumulative_theta = cumulative_simpson(theta, x=t_values, initial=0.0)
    inner = cumulative_simpson(np.exp(cumulative_theta) * forcing, x=t_values, initial=0.0)
    return np.exp(-cumulative_theta) * (p.q0_a + p.q0_n + inner)


def chi_self_quadrature(
    tables: RiccatiTables, traj: MeanFieldTrajectory, p: ParamSet
) -> np.ndarray:
    """
    The nested-quadrature form
    chi_t = D int_t^T v_bar_s exp(-D int_t^s phi_r dr) ds.

    This form vanishes at T; it is kept as a diagnostic next to the
    algebraic chi_self of the trajectory.
    """
    c = derive_coefficients(p)
    t_values = tables.grid.t_values
    cumulative_phi = cumulative_simpson(tables.require("phi_self"), x=t_values, initial=0.0)
    weighted = traj.v_bar * np.exp(-c.D * cumulative_phi)
    cumulative = cumulative_simpson(weighted, x=t_values, initial=0.0)
    return c.D * np.exp(c.D * cumulative_phi) * (cumulative[-1] - cumulative)


def chi_self_oracle(
    tables: RiccatiTables, traj: MeanFieldTrajectory, p: ParamSet
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Backward RK4 of the coupled chi, eta equations of the self system,
    driven by v_bar, with terminal value -2 psi q_target.

    :return: (chi, eta) on the grid.
    """
    # pylint: disable=invalid-name,too-many-locals
    c = derive_coefficients(p)
    grid = tables.grid
    a = 1.0 / (2.0 * p.kappa_a)
    b = 1.0 / (2.0 * p.kappa_n)
    D = c.D
    phi_nodes, phi_mids = _node_and_mid_values(tables.require("phi_self"), grid, reverse=True)
    zeta_nodes, zeta_mids = _node_and_mid_values(tables.require("zeta_self"), grid, reverse=True)
    v_nodes, v_mids = _node_and_mid_values(traj.v_bar, grid, reverse=True)

    def rhs(k: int, stage: int, y: Vector) -> Vector:
        chi, eta = y
        ph = _stage(phi_nodes, phi_mids, k, stage)
        ze = _stage(zeta_nodes, zeta_mids, k, stage)
        forcing = D * _stage(v_nodes, v_mids, k, stage)
        return (
            a * ph * chi + b * ph * eta - forcing,
            a * ze * chi + b * ze * eta - forcing,
        )

    terminal = -2.0 * p.psi * p.q_target
    values = rk4_path(rhs, (terminal, terminal), grid.t_values[::-1])[::-1]
    return np.ascontiguousarray(values[:, 0]), np.ascontiguousarray(values[:, 1])


def total_inventory_variance(tables: RiccatiTables, p: ParamSet) -> np.ndarray:
    """
    Variance of an individual total inventory around the mean,
    Var' = -2 beta Var + sigma_a^2 + sigma_n^2 with Var(0) = 0.
    """
    c = derive_coefficients(p)
    grid = tables.grid
    phi_nodes, phi_mids = _node_and_mid_values(tables.require("phi_self"), grid)
    noise = p.sigma_a**2 + p.sigma_n**2
    rate = 2.0 * c.B

    def rhs(k: int, stage: int, y: Vector) -> Vector:
        return (noise - rate * _stage(phi_nodes, phi_mids, k, stage) * y[0],)

    return rk4_path(rhs, (0.0,), grid.t_values)[:, 0]


def mean_price_path(traj: MeanFieldTrajectory, p: ParamSet) -> np.ndarray:
    return p.s0 + cumulative_simpson(traj.price_drift, x=traj.grid.t_values, initial=0.0)


def feedback_coefficients(
    t_values: np.ndarray, traj: MeanFieldTrajectory, tables: RiccatiTables
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linear interpolation of the feedback law at `t_values`: the common
    bracket of both controls is `slope * q_total + offset`.
    """
    t_arr = np.asarray(t_values, dtype=float)
    grid_t = tables.grid.t_values
    if np.any(t_arr < grid_t[0]) or np.any(t_arr > grid_t[-1]):
        raise ValueError("feedback requested outside [0, T]")
    phi_self = np.interp(t_arr, grid_t, tables.require("phi_self"))
    phi_bar = np.interp(t_arr, grid_t, tables.require("phi_bar"))
    chi_bar = np.interp(t_arr, grid_t, tables.require("chi_bar"))
    v_total = np.interp(t_arr, grid_t, traj.V_bar)
    return phi_self, (phi_bar - phi_self) * v_total + chi_bar


FloatOrArray = Union[float, np.ndarray]


def feedback_control(
    t: FloatOrArray,
    q_total: FloatOrArray,
    traj: MeanFieldTrajectory,
    tables: RiccatiTables,
    p: ParamSet,
) -> Tuple[FloatOrArray, FloatOrArray]:
    """
    Equilibrium trading rates of both channels at time `t` for an agent
    holding `q_total`.

    :return: (nu_a, nu_n)
    """
    slope, offset = feedback_coefficients(np.asarray(t, dtype=float), traj, tables)
    bracket = slope * np.asarray(q_total, dtype=float) + offset
    nu_a = -bracket / (2.0 * p.kappa_a)
    nu_n = -bracket / (2.0 * p.kappa_n)
    if np.ndim(nu_a) == 0:
        return float(nu_a), float(nu_n)
    return nu_a, nu_n
