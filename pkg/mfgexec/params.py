"""
Model constants and the scalar coefficients derived from them.
"""
from __future__ import annotations

import math
from dataclasses import MISSING, asdict, dataclass, fields
from typing import Any, Dict, List

from mfgexec.errors import ParamError


@dataclass(frozen=True)
class ParamSet:
    """
    Every constant of the execution game.

    The `_a` fields refer to the anonymous trading channel, the `_n` fields
    to the identity-revealed (named) channel.
    """

    alpha_a: float
    alpha_n: float
    kappa_a: float
    kappa_n: float
    sigma_a: float
    sigma_n: float
    phi_run: float
    psi: float
    q_target: float
    horizon: float
    sigma_0: float = 0.0
    q0_a: float = 0.0
    q0_n: float = 0.0
    s0: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def required_field_names(cls) -> List[str]:
        return [f.name for f in fields(cls) if f.default is MISSING]


# Parameter set of the base numerical study.
BASE_PARAMS = ParamSet(
    alpha_a=4e-3,
    alpha_n=5e-3,
    kappa_a=1.5e-3,
    kappa_n=3e-3,
    sigma_a=2.0,
    sigma_n=4.0,
    phi_run=1.0,
    psi=1.0,
    q_target=200.0,
    horizon=1.0,
)

_POSITIVE = ("alpha_a", "alpha_n", "kappa_a", "kappa_n", "phi_run", "horizon")
_NON_NEGATIVE = ("sigma_0", "sigma_a", "sigma_n", "psi")


def validate_params(raw: ParamSet) -> ParamSet:
    """
    Checks every constraint on the constants.

    :return: `raw` itself when valid.
    :raises ParamError: listing every violated constraint by field name.
    """
    problems: List[str] = []
    for name in ParamSet.field_names():
        value: Any = getattr(raw, name)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{name} must be a real number")
        elif not math.isfinite(value):
            problems.append(f"{name} must be finite")
        elif name in _POSITIVE and value <= 0:
            problems.append(f"{name} must be positive")
        elif name in _NON_NEGATIVE and value < 0:
            problems.append(f"{name} must be non-negative")
    if problems:
        raise ParamError(problems)
    return raw


@dataclass(frozen=True)
class Coefficients:
    # pylint: disable=invalid-name,too-many-instance-attributes
    A: float
    B: float
    C: float
    D: float
    E: float
    R: float
    S_disc: float
    delta_plus: float
    delta_minus: float
    gamma_plus: float
    gamma_minus: float
    fixed_point_mean: float
    fixed_point_self: float

    @property
    def relaxation_rate_mean(self) -> float:
        """Linearized backward relaxation rate of phi_bar at its fixed point."""
        return math.sqrt(self.D * self.D + 4.0 * self.B * self.C)

    @property
    def relaxation_rate_self(self) -> float:
        """Linearized backward relaxation rate of phi_self at its fixed point."""
        return 2.0 * math.sqrt(self.B * self.C)


def derive_coefficients(p: ParamSet) -> Coefficients:
    """See test_derive_coefficients_base_set"""

    # pylint: disable=invalid-name
    impact_a = p.alpha_a / (2.0 * p.kappa_a)
    impact_n = p.alpha_n / (2.0 * p.kappa_n)
    D = impact_a + impact_n
    A = -0.5 * D
    B = 1.0 / (2.0 * p.kappa_a) + 1.0 / (2.0 * p.kappa_n)
    C = 2.0 * p.phi_run
    E = 2.0 * p.phi_run
    assert C == E, "C and E must coincide"

    R = A * A + B * C
    root_r = math.sqrt(R)
    S_disc = D * E
    root_s = math.sqrt(S_disc)

    return Coefficients(
        A=A,
        B=B,
        C=C,
        D=D,
        E=E,
        R=R,
        S_disc=S_disc,
        delta_plus=A + root_r,
        delta_minus=A - root_r,
        gamma_plus=root_s,
        gamma_minus=-root_s,
        fixed_point_mean=(D + math.sqrt(D * D + 4.0 * B * C)) / (2.0 * B),
        fixed_point_self=math.sqrt(C / B),
    )
