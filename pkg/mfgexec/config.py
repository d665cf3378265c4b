"""
Run configuration: JSON documents, dotted overrides and manifest replay.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from mfgexec.errors import ConfigError
from mfgexec.experiments import DEFAULT_KAPPA_N, DEFAULT_TOL_REL
from mfgexec.misc import apply_overrides, stable_digest
from mfgexec.objective import DEFAULT_DEVIATIONS
from mfgexec.params import ParamSet
from mfgexec.riccati import DEFAULT_GRID_POINTS
from mfgexec.simulator import ControlDeviation, SimConfig

SCHEMA_VERSION = 1

MANIFEST_SCHEMA_VERSION = 1

DEFAULT_NS = [2, 5, 10, 25, 50, 100]

SWEEP_KINDS = ("kappa_ratio", "psi", "phi_run", "chaos", "phi_scan")

COMMANDS = ("equilibrium", "simulate", "population", "nash-gap", "sweep", "turnpike", "validate")

_REQUIRED_BLOCKS = {
    "simulate": ("sim",),
    "population": ("sim",),
    "nash-gap": ("sim", "nash_gap"),
    "sweep": ("sweep",),
}


@dataclass(frozen=True)
class NashGapConfig:
    ns: List[int] = field(default_factory=lambda: list(DEFAULT_NS))
    deviations: List[ControlDeviation] = field(default_factory=lambda: list(DEFAULT_DEVIATIONS))


@dataclass(frozen=True)
class SweepConfig:
    kind: str
    values: List[float]
    kappa_n: float = DEFAULT_KAPPA_N


@dataclass(frozen=True)
class PopulationConfig:
    deviation: Optional[ControlDeviation] = None
    keep_players: bool = False


@dataclass(frozen=True)
class TurnpikeConfig:
    tol_abs: Optional[float] = None
    tol_rel: float = DEFAULT_TOL_REL


@dataclass(frozen=True)
class RunConfig:
    # pylint: disable=too-many-instance-attributes
    params: ParamSet
    sim: Optional[SimConfig] = None
    grid_points: int = DEFAULT_GRID_POINTS
    nash_gap: Optional[NashGapConfig] = None
    sweep: Optional[SweepConfig] = None
    population: PopulationConfig = field(default_factory=PopulationConfig)
    turnpike: TurnpikeConfig = field(default_factory=TurnpikeConfig)
    out_dir: Optional[str] = None
    emit_svg: bool = False
    dump_paths: bool = False

    def to_dict(self) -> Dict[str, Any]:
        """Fully explicit document; loading it gives back an equal RunConfig."""
        doc = asdict(self)
        if self.nash_gap is not None:
            doc["nash_gap"] = {"Ns": doc["nash_gap"]["ns"], "deviations": doc["nash_gap"]["deviations"]}
        doc["schema_version"] = SCHEMA_VERSION
        return doc

    def digest(self) -> str:
        return stable_digest(self.to_dict())

    def require_blocks(self, command: str) -> None:
        for block in _REQUIRED_BLOCKS.get(command, ()):
            if getattr(self, block) is None:
                raise ConfigError(f"command `{command}` needs a `{block}` block", key=block)
        if command == "sweep" and self.sweep is not None and self.sweep.kind == "chaos":
            if self.sim is None:
                raise ConfigError("a chaos sweep needs a `sim` block", key="sim")


def _check_keys(block: Mapping[str, Any], allowed: Sequence[str], prefix: str) -> None:
    for key in block:
        if key not in allowed:
            raise ConfigError(f"unknown config key `{prefix}{key}`", key=f"{prefix}{key}")


def _object(doc: Mapping[str, Any], key: str, prefix: str = "") -> Optional[Dict[str, Any]]:
    value = doc.get(key)
    if value is None:
        return None
    if not isinstance(value, dict):
        raise ConfigError(f"`{prefix}{key}` must be an object", key=f"{prefix}{key}")
    return value


def _number(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"`{key}` must be a number", key=key)
    return float(value)


def _integer(value: Any, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"`{key}` must be an integer", key=key)
    return value


def _boolean(value: Any, key: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"`{key}` must be true or false", key=key)
    return value


def _number_list(value: Any, key: str) -> List[float]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"`{key}` must be a non-empty list", key=key)
    return [_number(v, f"{key}[{i}]") for i, v in enumerate(value)]


def _params(doc: Mapping[str, Any]) -> ParamSet:
    block = _object(doc, "params")
    if block is None:
        raise ConfigError("missing config key `params`", key="params")
    _check_keys(block, ParamSet.field_names(), "params.")
    for name in ParamSet.required_field_names():
        if name not in block:
            raise ConfigError(f"missing config key `params.{name}`", key=f"params.{name}")
    return ParamSet(**{name: _number(value, f"params.{name}") for name, value in block.items()})


def _sim(doc: Mapping[str, Any]) -> Optional[SimConfig]:
    block = _object(doc, "sim")
    if block is None:
        return None
    names = [f.name for f in fields(SimConfig)]
    _check_keys(block, names, "sim.")
    values: Dict[str, Any] = {}
    for name, value in block.items():
        if name == "brownian_steps" and value is None:
            values[name] = None
        else:
            values[name] = _integer(value, f"sim.{name}")
    try:
        return SimConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"invalid `sim` block: {exc}", key="sim") from exc


def _deviation(block: Any, key: str) -> Optional[ControlDeviation]:
    if block is None:
        return None
    if not isinstance(block, dict):
        raise ConfigError(f"`{key}` must be an object", key=key)
    _check_keys(block, ("kind", "epsilon"), f"{key}.")
    for name in ("kind", "epsilon"):
        if name not in block:
            raise ConfigError(f"missing config key `{key}.{name}`", key=f"{key}.{name}")
    try:
        return ControlDeviation(str(block["kind"]), _number(block["epsilon"], f"{key}.epsilon"))
    except ValueError as exc:
        raise ConfigError(f"invalid `{key}`: {exc}", key=key) from exc


def _nash_gap(doc: Mapping[str, Any]) -> Optional[NashGapConfig]:
    block = _object(doc, "nash_gap")
    if block is None:
        return None
    _check_keys(block, ("Ns", "deviations"), "nash_gap.")
    res = NashGapConfig()
    if "Ns" in block:
        ns = [_integer(v, f"nash_gap.Ns[{i}]") for i, v in enumerate(block["Ns"] or [])]
        if not ns or any(n < 1 for n in ns):
            raise ConfigError("`nash_gap.Ns` must list populations >= 1", key="nash_gap.Ns")
        res = NashGapConfig(ns=ns, deviations=res.deviations)
    if "deviations" in block:
        raw = block["deviations"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError("`nash_gap.deviations` must be a non-empty list", key="nash_gap.deviations")
        deviations = [_deviation(d, f"nash_gap.deviations[{i}]") for i, d in enumerate(raw)]
        res = NashGapConfig(ns=res.ns, deviations=[d for d in deviations if d is not None])
    return res


def _sweep(doc: Mapping[str, Any]) -> Optional[SweepConfig]:
    block = _object(doc, "sweep")
    if block is None:
        return None
    _check_keys(block, ("kind", "values", "kappa_n"), "sweep.")
    kind = block.get("kind")
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"`sweep.kind` must be one of {SWEEP_KINDS}", key="sweep.kind")
    if "values" not in block:
        raise ConfigError("missing config key `sweep.values`", key="sweep.values")
    values = _number_list(block["values"], "sweep.values")
    kappa_n = _number(block.get("kappa_n", DEFAULT_KAPPA_N), "sweep.kappa_n")
    return SweepConfig(kind=kind, values=values, kappa_n=kappa_n)


def _population(doc: Mapping[str, Any]) -> PopulationConfig:
    block = _object(doc, "population")
    if block is None:
        return PopulationConfig()
    _check_keys(block, ("deviation", "keep_players"), "population.")
    return PopulationConfig(
        deviation=_deviation(block.get("deviation"), "population.deviation"),
        keep_players=_boolean(block.get("keep_players", False), "population.keep_players"),
    )


def _turnpike(doc: Mapping[str, Any]) -> TurnpikeConfig:
    block = _object(doc, "turnpike")
    if block is None:
        return TurnpikeConfig()
    _check_keys(block, ("tol_abs", "tol_rel"), "turnpike.")
    tol_abs = block.get("tol_abs")
    return TurnpikeConfig(
        tol_abs=None if tol_abs is None else _number(tol_abs, "turnpike.tol_abs"),
        tol_rel=_number(block.get("tol_rel", DEFAULT_TOL_REL), "turnpike.tol_rel"),
    )


_TOP_KEYS = (
    "schema_version",
    "params",
    "sim",
    "grid_points",
    "nash_gap",
    "sweep",
    "population",
    "turnpike",
    "out_dir",
    "emit_svg",
    "dump_paths",
)


def parse_config(doc: Mapping[str, Any]) -> RunConfig:
    """Builds a RunConfig from a JSON document, refusing unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError("the configuration must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {version}, expecting {SCHEMA_VERSION}",
            key="schema_version",
        )
    grid_points = _integer(doc.get("grid_points", DEFAULT_GRID_POINTS), "grid_points")
    if grid_points < 3 or grid_points % 2 == 0:
        raise ConfigError("`grid_points` must be odd and >= 3", key="grid_points")
    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("`out_dir` must be a string", key="out_dir")
    return RunConfig(
        params=_params(doc),
        sim=_sim(doc),
        grid_points=grid_points,
        nash_gap=_nash_gap(doc),
        sweep=_sweep(doc),
        population=_population(doc),
        turnpike=_turnpike(doc),
        out_dir=out_dir,
        emit_svg=_boolean(doc.get("emit_svg", False), "emit_svg"),
        dump_paths=_boolean(doc.get("dump_paths", False), "dump_paths"),
    )


def _read_json(path: Union[str, Path]) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def load_config(
    path: Union[str, Path], overrides: Sequence[Tuple[str, Any]] = ()
) -> Tuple[RunConfig, Optional[str]]:
    """
    Loads a config file, or the config embedded in a manifest written by a
    previous run, whose digest must then match the one recorded.

    :return: (config, command recorded in the manifest or None)
    """
    doc = _read_json(path)
    command = None
    if isinstance(doc, dict) and "manifest_schema_version" in doc:
        embedded = doc.get("config")
        if not isinstance(embedded, dict):
            raise ConfigError(f"{path}: manifest without a config", key="config")
        if stable_digest(embedded) != doc.get("config_digest"):
            raise ConfigError(f"{path}: config digest mismatch", key="config_digest")
        doc, command = embedded, doc.get("command")
    try:
        doc = apply_overrides(doc, overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return parse_config(doc), command
