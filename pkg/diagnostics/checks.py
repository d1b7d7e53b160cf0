"""
Invariant suite re-run on emitted files by `selftrap-lab diagnose`.
Nothing is written; results come back as a DiagnoseReport.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import linregress

from common.errors import DataError, TableLoadError
from common.grid import Backend, Grid
from common.table_io import SafeTableLoader
from common.terminology import CHECK_DESCRIPTIONS, LabTerminology
from diagnostics.models import CheckResult, CheckStatus, DiagnoseReport
from physics.madelung import EDGE_WIDTH, convexity_min, edge_flags, quantum_potential
from physics.params import PhysParams

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-8
SYMMETRY_TOL = 1e-8
SLOPE_TOL = 0.01
CLOSURE_TOL = 1e-4
CLOSURE_RHO = 1e-6
CONCAVITY_RHO = 1e-16
SECOND_MOMENT_TOL = 1e-6
NORM_SERIES_TOL = 1e-10


def _grid_from(info: Dict) -> Grid:
    try:
        return Grid(float(info["x_min"]), float(info["x_max"]), int(info["n"]), info["mode"])
    except (KeyError, TypeError, ValueError) as e:
        raise TableLoadError(f"summary grid description is incomplete: {e}")


def _params_from(info: Dict) -> PhysParams:
    try:
        return PhysParams(hbar=info["hbar"], m=info["m"], beta=info["beta"])
    except (KeyError, TypeError, ValueError) as e:
        raise TableLoadError(f"summary params are incomplete: {e}")


class InvariantSuite:
    """Collects check results over one or more output directories."""

    def __init__(self, loader: Optional[SafeTableLoader] = None):
        self.loader = loader or SafeTableLoader()
        self.results: List[CheckResult] = []

    def _record(self, name: str, ok: bool, detail: str, source: str):
        status = CheckStatus.PASSED if ok else CheckStatus.FAILED
        self.results.append(CheckResult(
            name=f"{source}:{name}", status=status,
            description=CHECK_DESCRIPTIONS[name], detail=detail,
        ))
        log = logger.info if ok else logger.warning
        log(f"{status.value} {source}:{name} ({detail})")

    def _table(self, path: Path, name: str) -> Dict[str, np.ndarray]:
        return self.loader.load_csv(path, required=LabTerminology.header(name))

    def _on_grid(self, grid: Grid, q: np.ndarray, source: str):
        if q.shape != (grid.n,) or not np.allclose(q, grid.x, rtol=0.0, atol=1e-9 * grid.length):
            raise TableLoadError(f"{source}: q column does not match the recorded grid")

    def check_profile(self, directory: Path):
        source = LabTerminology.file_name("profile")
        table = self._table(directory / source, "profile")
        summary = self.loader.load_json(directory / LabTerminology.SUMMARIES["solve"])
        grid = _grid_from(summary.get("grid", {}))
        params = _params_from(summary.get("params", {}))
        U0 = float(summary.get("U0", summary.get("u0", 0.0) / params.beta))
        self._on_grid(grid, table["q"], source)
        rho, U, R = table["rho"], table["U"], table["R"]

        total = grid.integrate(rho)
        self._record("normalization", abs(total - 1.0) <= NORMALIZATION_TOL,
                     f"integral = {total:.15g}", source)

        asym = float(np.max(np.abs(rho - rho[grid.mirror_index()])))
        self._record("symmetry", asym <= SYMMETRY_TOL, f"max |rho(q) - rho(-q)| = {asym:.3g}", source)

        support = np.isfinite(U)
        try:
            cmin = convexity_min(grid, U, support, backend=Backend.FD2)
            self._record("convexity", cmin > 0.0, f"min d2U = {cmin:.6g}", source)
        except DataError as e:
            self._record("convexity", False, str(e), source)

        region = support & (rho > CONCAVITY_RHO)
        d2R = grid.deriv_masked(R, region, 2, Backend.FD2)
        inner = region & ~edge_flags(region, 1, grid.periodic) & np.isfinite(d2R)
        if inner.any():
            worst = float(np.max(d2R[inner]))
            self._record("concavity", worst < 0.0, f"max d2R = {worst:.3g} on {int(inner.sum())} nodes", source)
        else:
            self._record("concavity", False, "no support interior", source)

        interior = support & ~edge_flags(support, EDGE_WIDTH, grid.periodic) & (rho > 0.0)
        if np.count_nonzero(interior) >= 3:
            slope = linregress(U[interior], np.log(rho[interior])).slope
            ok = abs(slope + params.beta) <= SLOPE_TOL * params.beta
            self._record("log_linear", ok, f"slope = {slope:.10g}, -beta = {-params.beta:g}", source)
        else:
            self._record("log_linear", False, "support interior too small", source)

        try:
            U_re, mask = quantum_potential(grid, rho, params, backend=Backend.FD4)
            zone = mask & support & (rho > CLOSURE_RHO) & ~edge_flags(mask, EDGE_WIDTH, grid.periodic)
            err = float(np.max(np.abs(U_re[zone] - U[zone]))) if zone.any() else np.inf
            self._record("closure", err <= CLOSURE_TOL * U0,
                         f"max |U(rho) - U| = {err:.3g}, limit {CLOSURE_TOL * U0:.3g}", source)
        except DataError as e:
            self._record("closure", False, str(e), source)

    def check_compare(self, directory: Path):
        source = LabTerminology.file_name("compare")
        table = self._table(directory / source, "compare")
        summary = self.loader.load_json(directory / LabTerminology.SUMMARIES["compare"])
        grid = _grid_from(summary.get("grid", {}))
        self._on_grid(grid, table["q"], source)
        q, rho_s, rho_g = table["q"], table["rho_selftrap"], table["rho_gaussian"]

        m_s = grid.integrate(q ** 2 * rho_s)
        m_g = grid.integrate(q ** 2 * rho_g)
        rel = abs(m_s - m_g) / m_s if m_s > 0 else np.inf
        self._record("second_moment", rel <= SECOND_MOMENT_TOL,
                     f"<q^2> = {m_s:.12g} vs {m_g:.12g} (rel {rel:.3g})", source)

        q_m = float(summary.get("q_m", np.nan))
        outside = np.abs(q) >= q_m
        stray = int(np.count_nonzero(rho_s[outside] != 0.0))
        self._record("support", np.isfinite(q_m) and stray == 0,
                     f"{stray} nonzero rows beyond q_m = {q_m:.12g}", source)

        ratio = float(summary.get("peak_ratio", np.nan))
        self._record("peak_ratio", ratio > 1.0, f"rho_G(0)/rho(0) = {ratio:.12g}", source)

    def check_timeseries(self, directory: Path):
        source = LabTerminology.file_name("timeseries")
        table = self._table(directory / source, "timeseries")
        drift = float(np.max(np.abs(table["norm"] - 1.0))) if table["norm"].size else np.inf
        self._record("norm_series", drift <= NORM_SERIES_TOL, f"max |norm - 1| = {drift:.3g}", source)
        ordered = bool(np.all(np.diff(table["t"]) > 0.0))
        self._record("time_order", ordered, f"{table['t'].size} samples", source)

    def run(self, directory: Path) -> int:
        """Run every check whose input files exist in directory; returns how many groups ran."""
        groups = 0
        if (directory / LabTerminology.file_name("profile")).exists():
            self.check_profile(directory)
            groups += 1
        if (directory / LabTerminology.file_name("compare")).exists():
            self.check_compare(directory)
            groups += 1
        if (directory / LabTerminology.file_name("timeseries")).exists():
            self.check_timeseries(directory)
            groups += 1
        return groups

    def report(self) -> DiagnoseReport:
        failed = any(r.status == CheckStatus.FAILED for r in self.results)
        return DiagnoseReport(
            status=CheckStatus.FAILED if failed else CheckStatus.PASSED,
            checks=list(self.results),
        )


def diagnose(paths: Sequence[Path]) -> DiagnoseReport:
    """
    Re-run the invariant suite on emitted outputs.

    Args:
        paths: Output directories (or files inside them)

    Returns:
        DiagnoseReport with one result per check

    Raises:
        TableLoadError: no lab output found, or an input file is malformed
    """
    suite = InvariantSuite()
    groups = 0
    for path in paths:
        directory = path if path.is_dir() else path.parent
        groups += suite.run(directory)
    if groups == 0:
        raise TableLoadError(f"no selftrap-lab output found in {', '.join(str(p) for p in paths)}")
    return suite.report()
