#!/usr/bin/env python3
"""
Command-line entry point: loads a config, runs one command and writes its
CSV/JSON/SVG artifacts plus a manifest.
"""
import json
import logging
import sys
import time
import traceback
from argparse import ArgumentParser, RawTextHelpFormatter
from dataclasses import asdict, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from mfgexec import __version__
from mfgexec.config import (
    COMMANDS,
    MANIFEST_SCHEMA_VERSION,
    SCHEMA_VERSION,
    RunConfig,
    load_config,
)
from mfgexec.errors import ConfigError, ParamError
from mfgexec.experiments import (
    TurnpikeThresholds,
    chaos_convergence_study,
    penalty_sweep,
    run_pipeline,
    sweep_kappa_ratio,
    turnpike_detect,
    turnpike_phi_scan,
)
from mfgexec.file_helper import FileHelper, resolve_out_dir
from mfgexec.meanfield import (
    MeanFieldTrajectory,
    chi_self_oracle,
    chi_self_quadrature,
    mean_inventory_quadrature,
    total_inventory_variance,
)
from mfgexec.misc import elapsed_end, parse_override
from mfgexec.objective import deterministic_objective, evaluate_objective, nash_gap_curve
from mfgexec.params import derive_coefficients, validate_params
from mfgexec.plotting import HEATMAP, LINE, PlotSpec
from mfgexec.riccati import (
    RiccatiTables,
    boundary_layer_width,
    chi_bar_from_phibar,
    closed_form_report,
    convergence_order,
    ode_residuals,
    symmetry_gaps,
)
from mfgexec.simulator import (
    discrete_conditional_mean,
    estimate_conditional_means,
    simulate_mfg_paths,
    simulate_population,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

CSV_SCHEMA_VERSION = 1

EQUILIBRIUM_COLUMNS = [
    "t",
    "phi_bar",
    "zeta_bar",
    "chi_bar",
    "eta_bar",
    "phi_self",
    "chi_self",
    "V_bar",
    "Q_bar_a",
    "Q_bar_n",
    "v_bar",
    "mean_nu_a",
    "mean_nu_n",
    "price_drift",
]

TIME_UNITS = {"t": "T units"}


def equilibrium_columns(tables: RiccatiTables, traj: MeanFieldTrajectory) -> Dict[str, Sequence]:
    res: Dict[str, Sequence] = {"t": tables.grid.t_values}
    for name in EQUILIBRIUM_COLUMNS[1:]:
        source = tables if name in tables.sources else traj
        res[name] = getattr(source, name)
    return res


def _relative_sup(values: np.ndarray, reference: np.ndarray) -> float:
    scale = float(np.max(np.abs(reference)))
    diff = float(np.max(np.abs(values - reference)))
    return diff / scale if scale > 0 else diff


def validation_report(cfg: RunConfig) -> Dict[str, Any]:
    """Oracle self-checks and the comparison with the printed closed forms."""
    # pylint: disable=too-many-locals
    p = cfg.params
    c = derive_coefficients(p)
    tables, traj = run_pipeline(p, cfg.grid_points)
    step = tables.grid.step
    terminal_phi = 2.0 * p.psi
    terminal_chi = -2.0 * p.psi * p.q_target
    chi_quadrature = chi_self_quadrature(tables, traj, p)
    chi_oracle, eta_oracle = chi_self_oracle(tables, traj, p)

    return {
        "coefficients": asdict(c),
        "grid": {"n_points": tables.grid.size, "step": step},
        "terminal_errors": {
            "phi_bar": abs(tables.require("phi_bar")[-1] - terminal_phi),
            "zeta_bar": abs(tables.require("zeta_bar")[-1] - terminal_phi),
            "phi_self": abs(tables.require("phi_self")[-1] - terminal_phi),
            "chi_bar": abs(tables.require("chi_bar")[-1] - terminal_chi),
            "eta_bar": abs(tables.require("eta_bar")[-1] - terminal_chi),
        },
        "symmetry_gaps": symmetry_gaps(tables),
        "ode_residuals": {
            "bound": 10.0 * step**2,
            "boundary_layer_width": boundary_layer_width(c),
            "outside_boundary_layer": ode_residuals(tables, p),
            "full_range": ode_residuals(tables, p, skip_boundary_layer=False),
        },
        "convergence_order": convergence_order(p, cfg.grid_points),
        "fixed_points": {
            "phi_bar_t0": float(tables.require("phi_bar")[0]),
            "fixed_point_mean": c.fixed_point_mean,
            "phi_self_t0": float(tables.require("phi_self")[0]),
            "fixed_point_self": c.fixed_point_self,
        },
        "closed_forms": closed_form_report(tables, p),
        "chi_bar_quadrature_vs_oracle": _relative_sup(
            chi_bar_from_phibar(tables, p), tables.require("chi_bar")
        ),
        "V_bar_ode_vs_quadrature": _relative_sup(mean_inventory_quadrature(tables, p), traj.V_bar),
        "chi_self": {
            "quadrature_vs_algebraic_max_abs": float(np.max(np.abs(chi_quadrature - traj.chi_self))),
            "quadrature_at_T": float(chi_quadrature[-1]),
            "algebraic_at_T": float(traj.chi_self[-1]),
            "oracle_vs_algebraic_max_abs": float(np.max(np.abs(chi_oracle - traj.chi_self))),
            "eta_vs_chi_max_abs": float(np.max(np.abs(eta_oracle - chi_oracle))),
        },
        "v_bar_self_consistency_max_abs": float(
            np.max(np.abs(tables.require("phi_self") * traj.V_bar + traj.chi_self - traj.v_bar))
        ),
    }


Command = Callable[[RunConfig, FileHelper, int, bool], Dict[str, Any]]


def _equilibrium(cfg: RunConfig, helper: FileHelper, _workers: int, svg: bool) -> Dict[str, Any]:
    tables, traj = run_pipeline(cfg.params, cfg.grid_points)
    helper.write_csv("riccati_tables.csv", tables.columns())
    helper.write_csv("mean_trajectory.csv", traj.columns())
    columns = equilibrium_columns(tables, traj)
    helper.write_csv("equilibrium.csv", columns)
    if svg:
        helper.write_svg(
            "inventories.svg",
            columns,
            PlotSpec(LINE, "t", ["Q_bar_a", "Q_bar_n"], title="Optimal mean inventories", units=TIME_UNITS),
        )
        helper.write_svg(
            "trading_speeds.svg",
            columns,
            PlotSpec(LINE, "t", ["mean_nu_a", "mean_nu_n"], title="Mean trading speeds", units=TIME_UNITS),
        )
    return {"V_bar_T": float(traj.V_bar[-1])}


def _simulate(cfg: RunConfig, helper: FileHelper, workers: int, svg: bool) -> Dict[str, Any]:
    # pylint: disable=too-many-locals
    assert cfg.sim is not None
    p = cfg.params
    tables, traj = run_pipeline(p, cfg.grid_points)
    ens = simulate_mfg_paths(p, tables, traj, cfg.sim, workers=workers)
    terminal = ens.total_inventory()[:, -1]
    std_error = float(terminal.std(ddof=1) / np.sqrt(len(terminal))) if len(terminal) > 1 else 0.0
    discrete = discrete_conditional_mean(p, tables, traj, cfg.sim)
    v_bar = np.interp(ens.t, traj.grid.t_values, traj.V_bar)

    means = {
        "t": ens.t,
        "mean_S": ens.S.mean(axis=0),
        "mean_Q_a": ens.Q_a.mean(axis=0),
        "mean_Q_n": ens.Q_n.mean(axis=0),
        "mean_nu_a": ens.nu_a.mean(axis=0),
        "mean_nu_n": ens.nu_n.mean(axis=0),
        "V_bar": v_bar,
    }
    helper.write_csv("simulate_means.csv", means)
    if cfg.dump_paths:
        n_nodes = len(ens.t)
        helper.write_csv(
            "paths.csv",
            {
                "path_id": np.repeat(np.arange(ens.n_paths), n_nodes),
                "common_id": np.repeat(ens.common_index, n_nodes),
                "t": np.tile(ens.t, ens.n_paths),
                "S": ens.S.ravel(),
                "Q_a": ens.Q_a.ravel(),
                "Q_n": ens.Q_n.ravel(),
                "nu_a": ens.nu_a.ravel(),
                "nu_n": ens.nu_n.ravel(),
            },
        )
    if svg:
        means["mean_total"] = means["mean_Q_a"] + means["mean_Q_n"]
        helper.write_svg(
            "simulated_inventory.svg",
            means,
            PlotSpec(LINE, "t", ["mean_total", "V_bar"], title="Simulated vs analytic mean inventory", units=TIME_UNITS),
        )

    summary = {
        "n_paths": ens.n_paths,
        "n_steps": cfg.sim.n_steps,
        "mean_terminal_total": float(terminal.mean()),
        "std_error": std_error,
        "analytic_V_bar_T": float(traj.V_bar[-1]),
        "discrete_mean_T": float(discrete.total[-1]),
        "z_score_vs_discrete_mean": (
            float((terminal.mean() - discrete.total[-1]) / std_error) if std_error > 0 else None
        ),
        "sample_variance_T": float(terminal.var(ddof=1)) if len(terminal) > 1 else 0.0,
        "analytic_variance_T": float(total_inventory_variance(tables, p)[-1]),
        "objective": evaluate_objective(ens, p).to_dict(),
        "noiseless_objective": deterministic_objective(traj, p).to_dict(),
        "params_digest": ens.params_digest,
        "sim_digest": ens.sim_digest,
    }
    helper.write_json("simulate_summary.json", summary)
    return summary


def _population(cfg: RunConfig, helper: FileHelper, workers: int, svg: bool) -> Dict[str, Any]:
    assert cfg.sim is not None
    p = cfg.params
    tables, traj = run_pipeline(p, cfg.grid_points)
    ens = simulate_population(
        p,
        tables,
        traj,
        cfg.sim,
        cfg.population.deviation,
        workers,
        keep_players=cfg.population.keep_players,
    )
    means = estimate_conditional_means(ens)
    n_nodes = len(means.t)
    columns = {
        "draw": np.repeat(ens.common_index, n_nodes),
        "t": np.tile(means.t, ens.n_draws),
        "S": ens.S.ravel(),
        "mean_total": means.mean_total.ravel(),
        "mean_nu_a": means.mean_nu_a.ravel(),
        "mean_nu_n": means.mean_nu_n.ravel(),
        "dispersion_total": means.dispersion_total.ravel(),
    }
    helper.write_csv("population_means.csv", columns)
    if svg:
        first_draw = {
            "t": means.t,
            "mean_total": means.mean_total[0],
            "V_bar": np.interp(means.t, traj.grid.t_values, traj.V_bar),
        }
        helper.write_svg(
            "population_mean.svg",
            first_draw,
            PlotSpec(LINE, "t", ["mean_total", "V_bar"], title="Empirical mean inventory, first draw", units=TIME_UNITS),
        )
    summary = {
        "N": ens.n_players,
        "n_draws": ens.n_draws,
        "deviation": asdict(ens.deviation) if ens.deviation is not None else None,
        "player_1_objective": evaluate_objective(ens, p).to_dict(),
        "cross_draw_std_total_T": float(means.cross_draw_std_total[-1]),
        "mean_dispersion_total_T": float(means.dispersion_total[:, -1].mean()),
    }
    helper.write_json("population_summary.json", summary)
    return summary


def _nash_gap(cfg: RunConfig, helper: FileHelper, workers: int, svg: bool) -> Dict[str, Any]:
    assert cfg.sim is not None and cfg.nash_gap is not None
    p = cfg.params
    tables, traj = run_pipeline(p, cfg.grid_points)
    curve = nash_gap_curve(p, tables, traj, cfg.nash_gap.ns, cfg.nash_gap.deviations, cfg.sim, workers)
    helper.write_csv("gap_curve.csv", curve.columns())
    summary = curve.summary()
    helper.write_json("nash_gap_summary.json", summary)
    if svg:
        ns = curve.populations()
        helper.write_svg(
            "nash_gap.svg",
            {
                "N": ns,
                "max_gap": [curve.max_gap(n) for n in ns],
                "max_abs_excess": [curve.max_abs_excess(n) for n in ns],
            },
            PlotSpec(LINE, "N", ["max_gap", "max_abs_excess"], title="Nash gap against population size"),
        )
    return summary


def _sweep(cfg: RunConfig, helper: FileHelper, workers: int, svg: bool) -> Dict[str, Any]:
    assert cfg.sweep is not None
    p = cfg.params
    kind = cfg.sweep.kind
    values = cfg.sweep.values
    if kind == "kappa_ratio":
        result = sweep_kappa_ratio(p, values, cfg.grid_points, cfg.sweep.kappa_n, workers)
    elif kind in ("psi", "phi_run"):
        result = penalty_sweep(p, kind, values, cfg.grid_points, workers)
    elif kind == "phi_scan":
        result = turnpike_phi_scan(p, values, cfg.grid_points, cfg.turnpike.tol_rel, workers)
    else:
        assert cfg.sim is not None
        result = chaos_convergence_study(p, [int(v) for v in values], cfg.sim, cfg.grid_points, workers)

    columns = result.long_columns()
    helper.write_csv("sweep.csv", columns)
    report = result.report()
    helper.write_json("sweep_report.json", report)
    if svg:
        if kind == "kappa_ratio":
            spec = PlotSpec(
                HEATMAP, "t", ["ratio"], z="E_Qa_minus_Qn", title="E[Q_a - Q_n] over time and kappa_a/kappa_n", units=TIME_UNITS
            )
            helper.write_svg("sweep.svg", columns, spec)
        elif kind == "chaos":
            spec = PlotSpec(LINE, "N", ["mismatch_a", "mismatch_n"], title="Empirical mean control mismatch")
            helper.write_svg("sweep.svg", columns, spec)
        else:
            wide: Dict[str, Sequence] = {"t": result.t}
            for cell in result.cells:
                if cell.error is None:
                    wide[f"V_bar({result.parameter}={cell.value:g})"] = cell.metrics["V_bar"]
            spec = PlotSpec(LINE, "t", [name for name in wide if name != "t"], title=f"Mean inventory across {result.parameter}", units=TIME_UNITS)
            helper.write_svg("sweep.svg", wide, spec)
    return report["summary"]


def _turnpike(cfg: RunConfig, helper: FileHelper, _workers: int, svg: bool) -> Dict[str, Any]:
    p = cfg.params
    _, traj = run_pipeline(p, cfg.grid_points)
    thresholds = TurnpikeThresholds.for_target(p.q_target, cfg.turnpike.tol_rel, cfg.turnpike.tol_abs)
    report = turnpike_detect(traj, thresholds).to_dict()
    helper.write_json("turnpike_report.json", report)
    if svg:
        helper.write_svg(
            "turnpike.svg",
            traj.columns(),
            PlotSpec(LINE, "t", ["V_bar"], title="Mean total inventory", units=TIME_UNITS),
        )
    return report


def _validate(cfg: RunConfig, helper: FileHelper, _workers: int, _svg: bool) -> Dict[str, Any]:
    report = validation_report(cfg)
    helper.write_json("validation_report.json", report)
    return report


COMMAND_FUNCTIONS: Mapping[str, Command] = {
    "equilibrium": _equilibrium,
    "simulate": _simulate,
    "population": _population,
    "nash-gap": _nash_gap,
    "sweep": _sweep,
    "turnpike": _turnpike,
    "validate": _validate,
}


def _error_json(exc: BaseException, exit_status: int) -> str:
    doc: Dict[str, Any] = {
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_status": exit_status,
    }
    if isinstance(exc, ConfigError) and exc.key is not None:
        doc["key"] = exc.key
    if isinstance(exc, ParamError):
        doc["problems"] = exc.problems
    return json.dumps(doc, sort_keys=True)


def run(
    command: str,
    config_path: str,
    overrides: Sequence[str] = (),
    out_dir: Optional[str] = None,
    seed: Optional[int] = None,
    workers: int = 1,
    emit_svg: bool = False,
) -> int:
    """
    Runs `command` on the config at `config_path` (or a previous run's
    manifest).

    :return: exit status: 0 success, 1 validation error, 2 runtime error.
    """
    # pylint: disable=too-many-arguments,broad-except
    started = time.time()
    try:
        if command not in COMMAND_FUNCTIONS:
            raise ConfigError(f"unknown command `{command}`", key="command")
        try:
            parsed: List[Tuple[str, Any]] = [parse_override(arg) for arg in overrides]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if seed is not None:
            parsed.append(("sim.master_seed", seed))
        cfg, _ = load_config(config_path, parsed)
        cfg.require_blocks(command)
        validate_params(cfg.params)
        if emit_svg:
            cfg = replace(cfg, emit_svg=True)

        helper = FileHelper(resolve_out_dir(out_dir, cfg.out_dir))
        logger.info(f"### starting {command}: config digest {cfg.digest()[:12]}")
        COMMAND_FUNCTIONS[command](cfg, helper, max(1, workers), cfg.emit_svg)
        helper.write_manifest(
            {
                "manifest_schema_version": MANIFEST_SCHEMA_VERSION,
                "command": command,
                "config": cfg.to_dict(),
                "config_digest": cfg.digest(),
                "master_seed": cfg.sim.master_seed if cfg.sim is not None else None,
                "schema_versions": {
                    "config": SCHEMA_VERSION,
                    "manifest": MANIFEST_SCHEMA_VERSION,
                    "csv": CSV_SCHEMA_VERSION,
                },
                "package_version": __version__,
            }
        )
    except (ConfigError, ParamError) as exc:
        print(_error_json(exc, EXIT_VALIDATION), file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        logger.debug(traceback.format_exc())
        print(_error_json(exc, EXIT_RUNTIME), file=sys.stderr)
        return EXIT_RUNTIME
    logger.info(f">> complete {command} in {elapsed_end(started)}")
    return EXIT_OK


def parse_arguments(argv: Optional[Sequence[str]] = None):
    """CLI definition."""

    description = "Mean-field execution game: equilibrium, simulation and experiments."
    example = """
Examples:
    python -m mfgexec.cli equilibrium --config configs/base.json --svg
       writes the equilibrium tables and mean trajectory under out/.

    python -m mfgexec.cli nash-gap --config configs/nash_gap.json --workers 8
       estimates the Nash gap curve on 8 threads.

    python -m mfgexec.cli simulate --config out/manifest.json
       replays a previous run from its manifest.
    """

    parser = ArgumentParser(
        description=description, epilog=example, formatter_class=RawTextHelpFormatter
    )
    parser.add_argument("command", choices=COMMANDS, help="What to run.")
    parser.add_argument(
        "--config",
        type=str,
        metavar="path",
        required=True,
        help="JSON config, or the manifest.json of a previous run.",
    )
    parser.add_argument(
        "--out-dir",
        type=str,
        metavar="dir",
        default=None,
        help="Output directory. By default, the config's out_dir, "
        "then $MFGEXEC_OUT_DIR, then `out`.",
    )
    parser.add_argument(
        "--seed",
        type=int,
        metavar="u64",
        default=None,
        help="Master seed, overriding sim.master_seed.",
    )
    parser.add_argument(
        "--workers",
        type=int,
        metavar="n",
        default=1,
        help="Maximum number of worker threads. By default, 1.",
    )
    parser.add_argument("--svg", action="store_true", help="Also render SVG charts.")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="key=value",
        dest="overrides",
        help="Dotted-path config override, e.g. --set params.psi=0.1 (repeatable).",
    )
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors.")

    return parser.parse_args(argv)


def main(opts) -> None:
    "Main program."

    logging.basicConfig(
        level=logging.WARNING if opts.quiet else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    sys.exit(
        run(
            opts.command,
            opts.config,
            opts.overrides,
            opts.out_dir,
            opts.seed,
            opts.workers,
            opts.svg,
        )
    )


if __name__ == "__main__":
    main(parse_arguments())
