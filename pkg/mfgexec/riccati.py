"""
Backward Riccati systems of the equilibrium.

The classical RK4 oracle is authoritative for every coefficient table; the
printed closed forms are only evaluated for comparison.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_simpson

from mfgexec.errors import ClosedFormError, RiccatiBlowUpError
from mfgexec.params import Coefficients, ParamSet, derive_coefficients

logger = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 10_001

BLOW_UP_LIMIT = 1e12

OVERFLOW_EXPONENT = 300.0

# Boundary layers are this many relaxation lengths wide.
BOUNDARY_LAYER_LENGTHS = 30.0

SOURCE_ORACLE = "ode_oracle"

Vector = Tuple[float, ...]
StageRhs = Callable[[int, int, Vector], Vector]


@dataclass(frozen=True)
class TimeGrid:
    t_values: np.ndarray
    step: float

    @classmethod
    def uniform(cls, horizon: float, n_points: int = DEFAULT_GRID_POINTS) -> TimeGrid:
        """
        Uniform grid on [0, horizon].

        :param n_points: must be odd so the interval count is even (Simpson).
        """
        if n_points < 3 or n_points % 2 == 0:
            raise ValueError(f"n_points must be odd and >= 3, got {n_points}")
        if not horizon > 0:
            raise ValueError(f"horizon must be positive, got {horizon}")
        t_values = np.linspace(0.0, horizon, n_points)
        t_values[-1] = horizon
        t_values.setflags(write=False)
        return cls(t_values=t_values, step=horizon / (n_points - 1))

    @property
    def horizon(self) -> float:
        return float(self.t_values[-1])

    @property
    def size(self) -> int:
        return len(self.t_values)

    @property
    def n_intervals(self) -> int:
        return len(self.t_values) - 1

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.t_values[:-1] + self.t_values[1:])

    def refined(self) -> TimeGrid:
        """Same horizon, half the step."""
        return TimeGrid.uniform(self.horizon, 2 * self.size - 1)


@dataclass(frozen=True)
class RiccatiTables:
    """
    Coefficient tables on a grid. Either system may be absent when only
    one of the two oracles was run.
    """

    # pylint: disable=too-many-instance-attributes
    grid: TimeGrid
    phi_bar: Optional[np.ndarray] = None
    zeta_bar: Optional[np.ndarray] = None
    chi_bar: Optional[np.ndarray] = None
    eta_bar: Optional[np.ndarray] = None
    phi_self: Optional[np.ndarray] = None
    zeta_self: Optional[np.ndarray] = None
    sources: Dict[str, str] = field(default_factory=dict)

    @property
    def has_mean_system(self) -> bool:
        return self.phi_bar is not None

    @property
    def has_self_system(self) -> bool:
        return self.phi_self is not None

    def merged(self, other: RiccatiTables) -> RiccatiTables:
        """Combines with tables of the other system on the same grid."""
        if not np.array_equal(self.grid.t_values, other.grid.t_values):
            raise ValueError("tables live on different grids")
        updates = {
            name: getattr(other, name)
            for name in other.sources
            if getattr(other, name) is not None
        }
        return replace(self, **updates, sources={**self.sources, **other.sources})

    def require(self, name: str) -> np.ndarray:
        values = getattr(self, name)
        if values is None:
            raise ValueError(f"tables have no `{name}` array")
        return values

    def columns(self) -> Dict[str, Sequence]:
        """CSV export: t, phi_bar, zeta_bar, chi_bar, eta_bar, phi_self, zeta_self, source."""
        names = ["phi_bar", "zeta_bar", "chi_bar", "eta_bar", "phi_self", "zeta_self"]
        res: Dict[str, Sequence] = {"t": self.grid.t_values}
        for name in names:
            res[name] = self.require(name)
        source = "+".join(sorted(set(self.sources[name] for name in names)))
        res["source"] = [source] * self.grid.size
        return res


def rk4_path(rhs: StageRhs, y_start: Sequence[float], t_values: np.ndarray) -> np.ndarray:
    """
    Classical RK4 along `t_values` in the given order (decreasing for a
    backward integration).

    `rhs(k, stage, y)` gives the derivative for step k, where stage 0 is the
    node `t_values[k]`, stage 1 the midpoint and stage 2 the node `t_values[k + 1]`.

    :return: array of shape (len(t_values), len(y_start)), first row `y_start`.
    :raises RiccatiBlowUpError: if some value exceeds BLOW_UP_LIMIT in magnitude.
    """
    # pylint: disable=too-many-locals
    times = [float(t) for t in t_values]
    out = np.empty((len(times), len(y_start)))
    y: Vector = tuple(float(v) for v in y_start)
    out[0] = y
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        half = 0.5 * h
        k1 = rhs(k, 0, y)
        k2 = rhs(k, 1, tuple(yi + half * di for yi, di in zip(y, k1)))
        k3 = rhs(k, 1, tuple(yi + half * di for yi, di in zip(y, k2)))
        k4 = rhs(k, 2, tuple(yi + h * di for yi, di in zip(y, k3)))
        sixth = h / 6.0
        y = tuple(
            yi + sixth * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            for yi, d1, d2, d3, d4 in zip(y, k1, k2, k3, k4)
        )
        # `not <=` also catches nan
        if not all(abs(v) <= BLOW_UP_LIMIT for v in y):
            raise RiccatiBlowUpError(times[k + 1])
        out[k + 1] = y
    return out


def rk4_backward(rhs: StageRhs, y_terminal: Sequence[float], grid: TimeGrid) -> np.ndarray:
    """RK4 from t=T down to t=0; the result is indexed like the grid."""
    return np.ascontiguousarray(rk4_path(rhs, y_terminal, grid.t_values[::-1])[::-1])


def _mean_system_rhs(p: ParamSet) -> StageRhs:
    # pylint: disable=invalid-name
    a = 1.0 / (2.0 * p.kappa_a)
    b = 1.0 / (2.0 * p.kappa_n)
    ca = p.alpha_a / (2.0 * p.kappa_a)
    cn = p.alpha_n / (2.0 * p.kappa_n)
    C = 2.0 * p.phi_run

    def rhs(_k: int, _stage: int, y: Vector) -> Vector:
        pb, zb, cb, eb = y
        return (
            a * pb * pb + b * zb * pb - ca * pb - cn * zb - C,
            b * zb * zb + a * zb * pb - cn * zb - ca * pb - C,
            (a * pb - ca) * cb + (b * pb - cn) * eb,
            (a * zb - ca) * cb + (b * zb - cn) * eb,
        )

    return rhs


def _self_system_rhs(p: ParamSet) -> StageRhs:
    # pylint: disable=invalid-name
    a = 1.0 / (2.0 * p.kappa_a)
    b = 1.0 / (2.0 * p.kappa_n)
    C = 2.0 * p.phi_run

    def rhs(_k: int, _stage: int, y: Vector) -> Vector:
        ph, ze = y
        return (
            a * ph * ph + b * ze * ph - C,
            b * ze * ze + a * ze * ph - C,
        )

    return rhs


def solve_mean_system_oracle(p: ParamSet, grid: TimeGrid) -> RiccatiTables:
    """
    Backward RK4 of the four coupled mean-field equations for
    phi_bar, zeta_bar, chi_bar, eta_bar. No symmetry is imposed.
    """
    terminal_phi = 2.0 * p.psi
    terminal_chi = -2.0 * p.psi * p.q_target
    values = rk4_backward(
        _mean_system_rhs(p),
        (terminal_phi, terminal_phi, terminal_chi, terminal_chi),
        grid,
    )
    names = ("phi_bar", "zeta_bar", "chi_bar", "eta_bar")
    arrays = {name: _frozen(values[:, i]) for i, name in enumerate(names)}
    return RiccatiTables(
        grid=grid, **arrays, sources={name: SOURCE_ORACLE for name in names}
    )


def solve_self_system_oracle(p: ParamSet, grid: TimeGrid) -> RiccatiTables:
    """Backward RK4 of the coupled phi_self, zeta_self equations."""
    terminal_phi = 2.0 * p.psi
    values = rk4_backward(_self_system_rhs(p), (terminal_phi, terminal_phi), grid)
    return RiccatiTables(
        grid=grid,
        phi_self=_frozen(values[:, 0]),
        zeta_self=_frozen(values[:, 1]),
        sources={"phi_self": SOURCE_ORACLE, "zeta_self": SOURCE_ORACLE},
    )


def solve_tables(p: ParamSet, grid: TimeGrid) -> RiccatiTables:
    """Both oracles on one grid."""
    return solve_mean_system_oracle(p, grid).merged(solve_self_system_oracle(p, grid))


def _frozen(values: np.ndarray) -> np.ndarray:
    res = np.array(values, dtype=float)
    res.setflags(write=False)
    return res


FloatOrArray = Union[float, np.ndarray]


def _printed_riccati_form(
    t: FloatOrArray,
    horizon: float,
    lead: float,
    root_plus: float,
    root_minus: float,
    quad: float,
    psi: float,
) -> FloatOrArray:
    # pylint: disable=too-many-arguments
    t_arr = np.asarray(t, dtype=float)
    exponent = (root_plus - root_minus) * (horizon - t_arr)
    rescale = exponent > OVERFLOW_EXPONENT

    growth = np.exp(np.minimum(exponent, OVERFLOW_EXPONENT))
    numerator = -lead * (growth - 1.0) - 2.0 * psi * (root_plus * growth - root_minus)
    denominator = (root_minus * growth - root_plus) - 2.0 * psi * quad * (growth - 1.0)

    # numerator and denominator divided by the exponential
    decay = np.exp(-np.maximum(exponent, OVERFLOW_EXPONENT))
    numerator_rescaled = -lead * (1.0 - decay) - 2.0 * psi * (root_plus - root_minus * decay)
    denominator_rescaled = (root_minus - root_plus * decay) - 2.0 * psi * quad * (1.0 - decay)

    numerator = np.where(rescale, numerator_rescaled, numerator)
    denominator = np.where(rescale, denominator_rescaled, denominator)
    if not np.all(np.abs(denominator) > 0.0):
        bad = np.atleast_1d(t_arr)[np.atleast_1d(~(np.abs(denominator) > 0.0))]
        raise ClosedFormError(f"closed-form denominator vanishes at t={bad[0]:.6g}")

    res = numerator / denominator
    if res.ndim == 0:
        return float(res)
    return res


def phi_bar_closed_form(t: FloatOrArray, p: ParamSet, c: Coefficients) -> FloatOrArray:
    """The printed closed form of phi_bar, in (C, delta+-, B)."""
    return _printed_riccati_form(
        t, p.horizon, c.C, c.delta_plus, c.delta_minus, c.B, p.psi
    )


def phi_self_closed_form(t: FloatOrArray, p: ParamSet, c: Coefficients) -> FloatOrArray:
    """The printed closed form of phi_self, in (D, gamma+-, B)."""
    return _printed_riccati_form(
        t, p.horizon, c.D, c.gamma_plus, c.gamma_minus, c.B, p.psi
    )


def chi_bar_from_phibar(tables: RiccatiTables, p: ParamSet) -> np.ndarray:
    """
    chi_bar as the exponential of a Simpson integral of B * phi_bar - D,
    taken from t to T.
    """
    c = derive_coefficients(p)
    t_values = tables.grid.t_values
    integrand = c.B * tables.require("phi_bar") - c.D
    cumulative = cumulative_simpson(integrand, x=t_values, initial=0.0)
    tail = cumulative[-1] - cumulative
    return -2.0 * p.psi * p.q_target * np.exp(-tail)


def boundary_layer_width(c: Coefficients) -> float:
    rate = min(c.relaxation_rate_mean, c.relaxation_rate_self)
    return BOUNDARY_LAYER_LENGTHS / rate


def ode_residuals(
    tables: RiccatiTables, p: ParamSet, skip_boundary_layer: bool = True
) -> Dict[str, float]:
    """
    Max-norm residuals of the tables plugged into their own equations,
    derivatives taken by centered differences at interior nodes.

    With `skip_boundary_layer`, nodes within `boundary_layer_width` of T are
    left out: the stencil truncation there is governed by the stiff terminal
    transient, not by the solution accuracy.

    :return: one entry per available array, plus `checked_nodes`.
    """
    # pylint: disable=invalid-name,too-many-locals
    c = derive_coefficients(p)
    a = 1.0 / (2.0 * p.kappa_a)
    b = 1.0 / (2.0 * p.kappa_n)
    ca = p.alpha_a / (2.0 * p.kappa_a)
    cn = p.alpha_n / (2.0 * p.kappa_n)
    C = c.C

    t_values = tables.grid.t_values
    h = tables.grid.step
    interior = slice(1, len(t_values) - 1)
    mask = np.ones(len(t_values) - 2, dtype=bool)
    if skip_boundary_layer:
        mask = t_values[interior] <= tables.grid.horizon - boundary_layer_width(c)

    def centered(values: np.ndarray) -> np.ndarray:
        return (values[2:] - values[:-2]) / (2.0 * h)

    def worst(residual: np.ndarray) -> float:
        return float(np.max(np.abs(residual[mask]))) if np.any(mask) else 0.0

    res: Dict[str, float] = {"checked_nodes": float(np.count_nonzero(mask))}
    if tables.has_mean_system:
        pb = tables.require("phi_bar")
        zb = tables.require("zeta_bar")
        cb = tables.require("chi_bar")
        eb = tables.require("eta_bar")
        pbi, zbi, cbi, ebi = pb[interior], zb[interior], cb[interior], eb[interior]
        rhs = {
            "phi_bar": a * pbi * pbi + b * zbi * pbi - ca * pbi - cn * zbi - C,
            "zeta_bar": b * zbi * zbi + a * zbi * pbi - cn * zbi - ca * pbi - C,
            "chi_bar": (a * pbi - ca) * cbi + (b * pbi - cn) * ebi,
            "eta_bar": (a * zbi - ca) * cbi + (b * zbi - cn) * ebi,
        }
        for name, values in (("phi_bar", pb), ("zeta_bar", zb), ("chi_bar", cb), ("eta_bar", eb)):
            res[name] = worst(centered(values) - rhs[name])
    if tables.has_self_system:
        ph = tables.require("phi_self")
        ze = tables.require("zeta_self")
        phi, zei = ph[interior], ze[interior]
        res["phi_self"] = worst(centered(ph) - (a * phi * phi + b * zei * phi - C))
        res["zeta_self"] = worst(centered(ze) - (b * zei * zei + a * zei * phi - C))
    return res


def symmetry_gaps(tables: RiccatiTables) -> Dict[str, float]:
    res: Dict[str, float] = {}
    pairs = [("phi_bar", "zeta_bar"), ("chi_bar", "eta_bar"), ("phi_self", "zeta_self")]
    for first, second in pairs:
        x, y = getattr(tables, first), getattr(tables, second)
        if x is not None and y is not None:
            res[f"{first}_vs_{second}"] = float(np.max(np.abs(x - y)))
    return res


def convergence_order(p: ParamSet, n_points: int = DEFAULT_GRID_POINTS) -> float:
    """
    Observed order of the mean-system oracle from three grids, each with
    half the step of the previous one, compared at the coarse nodes.
    """
    coarse = TimeGrid.uniform(p.horizon, n_points)
    middle = coarse.refined()
    fine = middle.refined()
    names = ("phi_bar", "zeta_bar", "chi_bar", "eta_bar")
    solutions = [solve_mean_system_oracle(p, grid) for grid in (coarse, middle, fine)]

    def at_coarse_nodes(tables: RiccatiTables, stride: int) -> List[np.ndarray]:
        return [tables.require(n)[::stride] for n in names]

    def max_difference(first: List[np.ndarray], second: List[np.ndarray]) -> float:
        return max(float(np.max(np.abs(x - y))) for x, y in zip(first, second))

    coarse_values = at_coarse_nodes(solutions[0], 1)
    middle_values = at_coarse_nodes(solutions[1], 2)
    fine_values = at_coarse_nodes(solutions[2], 4)
    first_diff = max_difference(coarse_values, middle_values)
    second_diff = max_difference(middle_values, fine_values)
    if second_diff == 0.0:
        return math.inf
    return math.log2(first_diff / second_diff)


def closed_form_report(tables: RiccatiTables, p: ParamSet) -> Dict[str, Dict[str, object]]:
    """
    Compares each printed closed form with the oracle table. Agreement is
    not expected; the report quantifies the deviation.
    """
    c = derive_coefficients(p)
    t_values = tables.grid.t_values
    res: Dict[str, Dict[str, object]] = {}
    checks: List[Tuple[str, Callable[[FloatOrArray, ParamSet, Coefficients], FloatOrArray]]] = [
        ("phi_bar", phi_bar_closed_form),
        ("phi_self", phi_self_closed_form),
    ]
    for name, closed_form in checks:
        oracle = tables.require(name)
        try:
            printed = np.asarray(closed_form(t_values, p, c))
        except ClosedFormError as exc:
            res[name] = {"error": str(exc)}
            continue
        scale = np.maximum(np.abs(oracle), np.finfo(float).tiny)
        relative = np.abs(printed - oracle) / scale
        worst = int(np.argmax(relative))
        res[name] = {
            "max_relative_deviation": float(relative[worst]),
            "at_t": float(t_values[worst]),
            "closed_form_t0": float(printed[0]),
            "oracle_t0": float(oracle[0]),
        }
        logger.info(
            f"    >> {name} closed form: max relative deviation {relative[worst]:.3g}"
            f" at t={t_values[worst]:.4g}"
        )
    return res
