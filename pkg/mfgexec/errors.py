"""
Exceptions raised by mfgexec.
"""

from typing import List, Optional


class MfgExecError(Exception):
    """Base class for all mfgexec errors."""


class ParamError(MfgExecError, ValueError):
    """One or more model constants violate their constraints."""

    def __init__(self, problems: List[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class ConfigError(MfgExecError, ValueError):
    """Invalid run configuration, `key` being the dotted path at fault."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class RiccatiBlowUpError(MfgExecError):
    """A Riccati coefficient exceeded the blow-up limit while integrating backward."""

    def __init__(self, blow_up_time: float):
        super().__init__(f"Riccati blow-up at t={blow_up_time:.6g}")
        self.blow_up_time = blow_up_time


class PhiBarVanishesError(MfgExecError):
    """A denominator of the mean field feedback reached zero on the grid."""

    def __init__(self, at_time: float, name: str = "phi_bar"):
        super().__init__(f"{name} vanishes at t={at_time:.6g}")
        self.at_time = at_time


class ClosedFormError(MfgExecError):
    """The printed closed form has a vanishing denominator on the grid."""


class PlotSpecError(MfgExecError, ValueError):
    """A chart specification does not match the table it is drawn from."""
