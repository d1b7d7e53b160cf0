"""
selftrap-lab - self-trapped wave function laboratory.
Solves self-trapped profiles, evolves them under the free Schrodinger equation
and re-checks the emitted files.

Usage: selftrap-lab solve|evolve|compare|diagnose --config <path> [--set key=value ...] --out <dir>
"""

import argparse
import logging
import math
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from common.errors import ConfigurationError, DataError, InvariantError, LabError
from common.grid import Grid, GridMode
from common.settings import InitialState, OutputFormat, PhaseKindOption, RunConfig, load_config
from common.table_io import SafeTableLoader, write_csv, write_json
from common.terminology import LabTerminology
from diagnostics.checks import diagnose
from diagnostics.models import (
    CausticInfo, CheckStatus, CompareSummary, DiagnoseReport, EvolutionSummary,
    FocusingInfo, GridInfo, ParamsInfo, SolveSummary,
)
from physics.evolve import (
    PADDING_FACTOR, CausticExperiment, EvolutionConfig, EvolutionRecord, PhaseSpec, WaveField,
    caustic_experiment, convexity_time_band, convexity_time_conventions, focusing_check,
    gaussian_analytic, initial_wave, run,
)
from physics.params import GaussianSpec, PhysParams
from physics.selftrap import (
    SelfTrapState, cosh_approx, gaussian_density, matched_gaussian, rescale, solve_dimensionless,
)

# Configure logging
logging.basicConfig(
    level=os.environ.get("SELFTRAP_LAB_LOG_LEVEL", "INFO").upper(),
    format='[%(levelname)s] %(message)s'
)
logger = logging.getLogger(__name__)

COMMANDS = ("solve", "evolve", "compare", "diagnose")
GAUSSIAN_HALF_WIDTHS = 12.0  # box half-width in units of the widest sigma_t
COMPARE_SUPPORT_FACTOR = 2.5


def _grid_info(grid: Grid) -> GridInfo:
    return GridInfo(x_min=grid.x_min, x_max=grid.x_max, n=grid.n, mode=grid.mode.value, dx=grid.dx)


def _params_info(params: PhysParams) -> ParamsInfo:
    return ParamsInfo(**params.describe())


def _finite(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


def _require_u0(cfg: RunConfig) -> float:
    if cfg.selftrap.u0 is None:
        raise ConfigurationError("selftrap.u0: u0 required")
    return cfg.selftrap.u0


def _selftrap_state(cfg: RunConfig, grid_for) -> SelfTrapState:
    """Solve the dimensionless profile, then rescale it onto grid_for(q_m)."""
    profile = solve_dimensionless(_require_u0(cfg), **cfg.selftrap.solver_options())
    q_m = profile.x_m / cfg.physics.lam
    return rescale(profile, cfg.physics, grid_for(q_m), cfg.selftrap.interpolation)


def cmd_solve(cfg: RunConfig) -> List[Path]:
    """
    Solve the self-trapped state and write its profile table and summary.

    Returns:
        Paths of the written files
    """
    def grid_for(q_m: float) -> Grid:
        half = cfg.grid.half_width or cfg.grid.padding * q_m
        return Grid.symmetric(half, cfg.grid.points(), cfg.grid.mode)

    state = _selftrap_state(cfg, grid_for)
    out = cfg.output.path
    written = []
    if cfg.output.wants(OutputFormat.CSV):
        written.append(write_csv(out / LabTerminology.file_name("profile"), {
            "q": state.grid.x,
            "rho": state.rho,
            "U": state.U,
            "U_cosh_approx": cosh_approx(state.U0, 0.0, state.params, state.grid.x),
            "R": state.R,
        }))
    if cfg.output.wants(OutputFormat.JSON):
        summary = SolveSummary(
            u0=state.u0, U0=state.U0, params=_params_info(state.params), grid=_grid_info(state.grid),
            x_m=state.profile.x_m, x_m_uncertainty=state.profile.x_m_uncertainty,
            q_m=state.q_m, q_m_uncertainty=state.q_m_uncertainty, Z=state.Z,
            second_moment=state.second_moment, interpolation=cfg.selftrap.interpolation.value,
        )
        written.append(write_json(out / LabTerminology.SUMMARIES["solve"], summary.model_dump(by_alias=True)))
    return written


def cmd_compare(cfg: RunConfig) -> List[Path]:
    """
    Compare the self-trapped density with the Gaussian of equal second moment.

    The comparison grid spans max(2.5 q_m, 12 sigma) unless grid.half_width is set.
    """
    n = cfg.grid.points()
    trial = _selftrap_state(cfg, lambda q_m: Grid.symmetric(cfg.grid.padding * q_m, n))
    sigma = matched_gaussian(trial).sigma
    half = cfg.grid.half_width or max(COMPARE_SUPPORT_FACTOR * trial.q_m, GAUSSIAN_HALF_WIDTHS * sigma)
    state = rescale(trial.profile, cfg.physics, Grid.symmetric(half, n, cfg.grid.mode), cfg.selftrap.interpolation)
    spec = matched_gaussian(state)
    rho_g = gaussian_density(spec, state.grid)
    peak_ratio = (1.0 / math.sqrt(2.0 * math.pi * spec.sigma ** 2)) / (math.exp(-state.u0) / state.Z)
    logger.info(f"Matched Gaussian sigma={spec.sigma:.12g}; peak ratio rho_G(0)/rho(0)={peak_ratio:.12g}")

    out = cfg.output.path
    written = []
    if cfg.output.wants(OutputFormat.CSV):
        written.append(write_csv(out / LabTerminology.file_name("compare"), {
            "q": state.grid.x, "rho_selftrap": state.rho, "rho_gaussian": rho_g,
        }))
    if cfg.output.wants(OutputFormat.JSON):
        summary = CompareSummary(
            sigma=spec.sigma, q_m=state.q_m, peak_ratio=peak_ratio, second_moment=state.second_moment,
            params=_params_info(state.params), grid=_grid_info(state.grid),
        )
        written.append(write_json(out / LabTerminology.SUMMARIES["compare"], summary.model_dump(by_alias=True)))
    return written


def _initial_state(cfg: RunConfig) -> WaveField:
    """Initial wave function on the periodic evolution grid."""
    n = cfg.grid.points(evolve=True)
    if cfg.evolve.initial == InitialState.SELFTRAP:
        def grid_for(q_m: float) -> Grid:
            half = cfg.grid.half_width or (1.0 + PADDING_FACTOR) * cfg.grid.padding * q_m
            return Grid.symmetric(half, n, GridMode.PERIODIC)
        state = _selftrap_state(cfg, grid_for)
        return initial_wave(state.rho, state.grid)

    spec = GaussianSpec(sigma=cfg.evolve.sigma, params=cfg.physics)
    half = cfg.grid.half_width or GAUSSIAN_HALF_WIDTHS * math.sqrt(spec.sigma_t2(cfg.evolve.t_end))
    grid = Grid.symmetric(half, n, GridMode.PERIODIC)
    _, _, psi = gaussian_analytic(spec, 0.0, grid)
    return WaveField(grid, psi, 0.0)


def _phase(cfg: RunConfig, grid: Grid) -> PhaseSpec:
    kind = cfg.phase.kind
    if kind == PhaseKindOption.ZERO:
        return PhaseSpec.zero()
    if kind == PhaseKindOption.QUADRATIC:
        return PhaseSpec.quadratic(cfg.phase.a)
    if cfg.phase.file is None:
        raise ConfigurationError("phase.file: a custom phase needs a csv file with columns q,S")
    table = SafeTableLoader().load_csv(Path(cfg.phase.file), required=("q", "S"))
    q, S = table["q"], table["S"]
    if q.size < 2 or np.any(np.diff(q) <= 0.0) or not np.all(np.isfinite(S)):
        raise ConfigurationError(f"phase.file: {cfg.phase.file} needs strictly increasing q and finite S")
    if q[0] > grid.x_min or q[-1] < grid.x[-1]:
        raise ConfigurationError(
            f"phase.file: q range [{q[0]:g}, {q[-1]:g}] does not cover the grid [{grid.x_min:g}, {grid.x[-1]:g}]"
        )
    return PhaseSpec.custom(np.interp(grid.x, q, S))


def _evolution_config(cfg: RunConfig, grid: Grid) -> EvolutionConfig:
    ev = cfg.evolve
    return EvolutionConfig(
        dt=ev.dt, t_end=ev.t_end, grid=grid, params=cfg.physics,
        observer_stride=ev.observer_stride, theta_blowup_threshold=ev.theta_blowup_threshold,
        boundary_leak_tol=ev.boundary_leak_tol, eps_mask=ev.eps_mask, eps_velocity=ev.eps_velocity,
        edge_width=ev.edge_width, window=ev.window, core_fraction=ev.core_fraction,
        filter_fraction=ev.filter_fraction, filter_order=ev.filter_order,
        potential_backend=ev.potential_backend, velocity_backend=ev.velocity_backend,
        trace_count=ev.trace_count, trace_span=ev.trace_span,
    )


def _timeseries(record: EvolutionRecord) -> Dict[str, np.ndarray]:
    return {
        "t": record.times,
        "norm": record.norm_series,
        "variance": record.variance_series,
        "convexity_min": record.convexity_min_series,
        "theta_min": record.theta_min_series,
    }


def _conventions(config: EvolutionConfig) -> Dict[str, Optional[float]]:
    return {
        "dt": config.dt, "t_end": config.t_end, "observer_stride": config.observer_stride,
        "eps_mask": config.eps_mask, "eps_velocity": config.eps_velocity,
        "edge_width": config.edge_width, "window": config.window,
        "core_fraction": config.core_fraction, "filter_fraction": config.filter_fraction,
        "filter_order": config.filter_order, "theta_blowup_threshold": config.theta_blowup_threshold,
    }


def _evolution_summary(cfg: RunConfig, record: EvolutionRecord, band: Dict[float, Optional[float]],
                       conventions: Dict[str, Optional[float]],
                       experiment: Optional[CausticExperiment] = None) -> EvolutionSummary:
    """Summary of record; the T_convexity fields describe the zero-phase run of an experiment."""
    focusing = focusing_check(record)
    timing = record
    caustic = None
    if experiment is not None:
        timing = experiment.focus
        readings = experiment.collapse_expected
        caustic = CausticInfo(
            T0=experiment.T0, T0_is_lower_bound=experiment.T0_is_lower_bound,
            collapse_magnitude_reading=readings["magnitude"], collapse_printed_reading=readings["printed"],
            bound_violations=len(experiment.violations), passed=experiment.passed,
        )
    if timing.T_convexity is None:
        logger.info(f"Convexity held for the whole run; T_convexity >= {timing.T_lower_bound:g}")
    return EvolutionSummary(
        initial=cfg.evolve.initial.value,
        phase=cfg.phase.kind.value,
        theta0=_finite(record.theta0),
        T_convexity=timing.T_convexity,
        T_convexity_lower_bound=timing.T_lower_bound,
        T_convexity_kind=timing.T_convexity_kind,
        T_band={repr(float(k)): v for k, v in band.items()},
        T_conventions=conventions,
        t_near_caustic=record.t_near_caustic,
        caustic_bound=record.caustic_bound,
        leaked=record.leaked,
        max_boundary_density=float(np.max(record.boundary_density_series)),
        status=record.status.value,
        samples=len(record.snapshots),
        max_norm_drift=float(np.max(np.abs(record.norm_series - 1.0))),
        max_spectral_tail=float(np.max(record.spectral_tail_series)),
        focusing=FocusingInfo(
            intervals=focusing.intervals, violations=focusing.violations, max_rate=_finite(focusing.max_rate),
        ),
        caustic=caustic,
        params=_params_info(record.config.params),
        grid=_grid_info(record.config.grid),
        conventions=_conventions(record.config),
    )


def _write_snapshots(out: Path, record: EvolutionRecord) -> List[Path]:
    spec = LabTerminology.get_table("snapshot")
    written = []
    for index, snap in enumerate(record.snapshots):
        f = snap.fields
        written.append(write_csv(out / LabTerminology.SNAPSHOT_DIR / spec.file_name.format(index=index), {
            "q": f.grid.x, "rho": f.rho, "U": f.U, "v": f.v, "theta": f.theta,
        }))
    return written


def cmd_evolve(cfg: RunConfig) -> List[Path]:
    """
    Evolve the configured initial state and write its time series and summary.

    phase.kind = "auto" runs the caustic experiment: a zero-phase run measures the
    convexity time, then a quadratic phase with 1/|theta0| inside it is evolved.

    Raises:
        DataError: the run leaked through the box edge (files are still written)
        InvariantError: the caustic experiment did not collapse inside its bound
    """
    psi0 = _initial_state(cfg)
    config = _evolution_config(cfg, psi0.grid)
    experiment = None
    if cfg.phase.kind == PhaseKindOption.AUTO:
        experiment = caustic_experiment(
            psi0, config, safety=cfg.evolve.caustic_safety,
            threshold_factor=cfg.evolve.caustic_threshold_factor,
            steps=cfg.evolve.caustic_steps, bound_tol=cfg.evolve.bound_tol,
        )
        record, band, conventions = experiment.collapse, experiment.T_band, experiment.T_conventions
    else:
        record = run(psi0, _phase(cfg, psi0.grid), config)
        band = convexity_time_band(record)
        conventions = convexity_time_conventions(record)

    out = cfg.output.path
    written = []
    if cfg.output.wants(OutputFormat.CSV):
        written.append(write_csv(out / LabTerminology.file_name("timeseries"), _timeseries(record)))
        if experiment is not None:
            written.append(write_csv(
                out / LabTerminology.file_name("timeseries_focus"), _timeseries(experiment.focus)
            ))
        if cfg.evolve.snapshot_files:
            written.extend(_write_snapshots(out, record))
    if cfg.output.wants(OutputFormat.JSON):
        summary = _evolution_summary(cfg, record, band, conventions, experiment)
        written.append(write_json(out / LabTerminology.SUMMARIES["evolve"], summary.model_dump(by_alias=True)))

    if record.leaked:
        raise DataError(f"boundary density exceeded {config.boundary_leak_tol:g}; enlarge grid.half_width")
    if experiment is not None and not experiment.passed:
        raise InvariantError(
            f"no caustic before 1/|theta0|={experiment.t_c_upper:.6g} "
            f"(t_near_caustic={experiment.t_near_caustic}, {len(experiment.violations)} bound violations)"
        )
    return written


def cmd_diagnose(cfg: RunConfig, paths: Sequence[str]) -> DiagnoseReport:
    """Re-run the invariant suite on emitted files and print one line per check."""
    targets = [Path(p) for p in paths] or [cfg.output.path]
    report = diagnose(targets)
    for check in report.checks:
        print(f"[{check.status.value}] {check.name}: {check.description} ({check.detail})")
    failed = len(report.failed)
    print(f"{len(report.checks) - failed} passed, {failed} failed")
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selftrap-lab", description="Self-trapped wave function laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration value, e.g. selftrap.u0=1")
        p.add_argument("--out", help="output directory")
        if name == "diagnose":
            p.add_argument("paths", nargs="*", help="output directories to check (default: output dir)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.out)
        if args.command == "diagnose":
            report = cmd_diagnose(cfg, args.paths)
            return 1 if report.status == CheckStatus.FAILED else 0
        handler = {"solve": cmd_solve, "evolve": cmd_evolve, "compare": cmd_compare}[args.command]
        written = handler(cfg)
        logger.info(f"{args.command} finished: {len(written)} files in {cfg.output.path}")
        return 0
    except LabError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
