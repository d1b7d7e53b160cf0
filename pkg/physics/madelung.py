"""
Madelung fields of a wave function: amplitude, quantum potential, velocity,
velocity divergence and quantum force, plus the pointwise convexity and
caustic diagnostics.

The phase S is never unwrapped; its gradient enters through the probability
current, v = J / rho with J = (hbar / m) Im(conj(psi) d_q psi).
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from common.errors import DataError
from common.grid import Backend, Grid, mask_runs
from physics.params import PhysParams

logger = logging.getLogger(__name__)

EPS_MASK = 1e-10
EPS_VELOCITY = 1e-8
EDGE_WIDTH = 5
MIN_CONTIGUOUS = 5


class CollapseReading(str, Enum):
    """Two readings of the self-collapse condition for theta0 < 0."""
    MAGNITUDE = "magnitude"  # 1/|theta0| <= T
    PRINTED = "printed"      # 1/theta0 <= T, trivially true for theta0 < 0


@dataclass(frozen=True)
class MadelungFields:
    """Fluid fields on a grid; NaN wherever a field is masked."""
    grid: Grid
    rho: np.ndarray
    R: np.ndarray
    U: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    force: np.ndarray
    curvature: np.ndarray  # d_q^2 U
    mask: np.ndarray           # rho >= eps_mask and U defined
    velocity_mask: np.ndarray  # rho >= eps_velocity and v defined
    edge: np.ndarray           # mask nodes within edge_width of a mask edge
    velocity_edge: np.ndarray
    t: float = 0.0

    @property
    def current(self) -> np.ndarray:
        return self.v * self.rho


def _shift(a: np.ndarray, s: int, periodic: bool, fill: bool) -> np.ndarray:
    if periodic:
        return np.roll(a, s)
    out = np.full_like(a, fill)
    if s > 0:
        out[s:] = a[:-s]
    elif s < 0:
        out[:s] = a[-s:]
    else:
        out[:] = a
    return out


def edge_flags(mask, width: int = EDGE_WIDTH, periodic: bool = False) -> np.ndarray:
    """Masked nodes lying within `width` nodes of an unmasked node."""
    mask = np.asarray(mask, dtype=bool)
    gap = ~mask
    near = np.zeros_like(mask)
    for s in range(1, width + 1):
        near |= _shift(gap, s, periodic, False) | _shift(gap, -s, periodic, False)
    return mask & near


def longest_run(region) -> int:
    return max((stop - start for start, stop in mask_runs(region)), default=0)


def quantum_potential(grid: Grid, rho, params: PhysParams, eps_mask: float = EPS_MASK,
                      backend: Backend = Backend.FD4) -> Tuple[np.ndarray, np.ndarray]:
    """
    U = -(hbar^2 / 2m) d_q^2 R / R with R = sqrt(rho), on nodes where rho >= eps_mask.

    FD backends differentiate each masked run separately; the spectral backend
    differentiates R on the whole periodic grid.

    Returns:
        (U, mask), U NaN off the mask

    Raises:
        DataError: negative or non-finite rho, or nothing left after masking
    """
    rho = grid.check(rho, "rho")
    if np.any(rho < 0.0):
        raise DataError(f"rho has {int(np.count_nonzero(rho < 0.0))} negative values")
    mask = rho >= eps_mask
    if not mask.any():
        raise DataError(f"rho is below eps_mask={eps_mask:g} everywhere")

    R = np.sqrt(rho)
    if Backend(backend) == Backend.SPECTRAL:
        d2R = grid.deriv2(R, backend)
    else:
        d2R = grid.deriv_masked(R, mask, 2, backend)
    mask &= np.isfinite(d2R)
    if not mask.any():
        raise DataError("no masked run is long enough for the stencil")

    U = np.full(grid.n, np.nan)
    U[mask] = -(params.hbar ** 2 / (2.0 * params.m)) * d2R[mask] / R[mask]
    return U, mask


def probability_current(grid: Grid, psi, params: PhysParams,
                        backend: Backend = Backend.FD4) -> np.ndarray:
    psi = grid.check(psi, "psi")
    dpsi = grid.deriv1(psi.astype(complex), backend)
    return (params.hbar / params.m) * np.imag(np.conj(psi) * dpsi)


def velocity_field(grid: Grid, psi, params: PhysParams, eps_mask: float = EPS_VELOCITY,
                   backend: Backend = Backend.FD4):
    """
    v = J / rho on nodes with rho >= eps_mask, theta = d_q v from masked stencils.

    Returns:
        (v, theta, mask)

    Raises:
        DataError: all nodes masked
    """
    psi = grid.check(psi, "psi")
    rho = np.abs(psi) ** 2
    mask = rho >= eps_mask
    if not mask.any():
        raise DataError(f"rho is below eps_mask={eps_mask:g} everywhere")
    J = probability_current(grid, psi, params, backend)

    v = np.full(grid.n, np.nan)
    v[mask] = J[mask] / rho[mask]
    theta = grid.deriv_masked(v, mask, 1, Backend.FD4)
    return v, theta, mask


def quantum_force(grid: Grid, U, mask, backend: Backend = Backend.FD4) -> np.ndarray:
    """Force -d_q U on the mask, NaN elsewhere."""
    return -grid.deriv_masked(U, mask, 1, backend)


def diagnostic_region(grid: Grid, mask, width: int = EDGE_WIDTH,
                      window: Optional[float] = None) -> np.ndarray:
    """Mask minus edge-flagged nodes, restricted to |q| <= window."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~edge_flags(mask, width, grid.periodic) & grid.window_mask(window)


def convexity_min(grid: Grid, U, mask, backend: Backend = Backend.FD4,
                  edge_width: int = EDGE_WIDTH, window: Optional[float] = None,
                  curvature: Optional[np.ndarray] = None) -> float:
    """
    Minimum of d_q^2 U over the masked interior; positive iff U is convex there.

    Raises:
        DataError: fewer than 5 contiguous nodes to evaluate
    """
    mask = np.asarray(mask, dtype=bool)
    if curvature is None:
        curvature = grid.deriv_masked(U, mask, 2, backend)
    region = diagnostic_region(grid, mask, edge_width, window) & np.isfinite(curvature)
    if longest_run(region) < MIN_CONTIGUOUS:
        raise DataError(f"convexity needs {MIN_CONTIGUOUS} contiguous masked nodes, got {longest_run(region)}")
    return float(np.min(curvature[region]))


def caustic_bound(theta0: float) -> Optional[float]:
    """Upper bound 1/|theta0| on the caustic time when theta0 < 0, else None."""
    if theta0 < 0.0:
        return 1.0 / abs(theta0)
    return None


def collapse_condition(theta0: float, T: float,
                       reading: CollapseReading = CollapseReading.MAGNITUDE) -> bool:
    """True when convexity survives long enough for the caustic to form."""
    if theta0 >= 0.0:
        return False
    if CollapseReading(reading) == CollapseReading.PRINTED:
        return 1.0 / theta0 <= T
    return 1.0 / abs(theta0) <= T


def madelung_fields(grid: Grid, psi, params: PhysParams, t: float = 0.0,
                    eps_mask: float = EPS_MASK, eps_velocity: float = EPS_VELOCITY,
                    potential_backend: Backend = Backend.FD4,
                    velocity_backend: Backend = Backend.FD4,
                    edge_width: int = EDGE_WIDTH) -> MadelungFields:
    """All fluid fields of psi at time t."""
    psi = grid.check(psi, "psi")
    rho = np.abs(psi) ** 2
    U, mask = quantum_potential(grid, rho, params, eps_mask, potential_backend)
    v, theta, vmask = velocity_field(grid, psi, params, eps_velocity, velocity_backend)
    curvature = grid.deriv_masked(U, mask, 2, Backend.FD4)
    force = quantum_force(grid, U, mask)
    return MadelungFields(
        grid=grid, rho=rho, R=np.sqrt(rho), U=U, v=v, theta=theta, force=force,
        curvature=curvature, mask=mask, velocity_mask=vmask,
        edge=edge_flags(mask, edge_width, grid.periodic),
        velocity_edge=edge_flags(vmask, edge_width, grid.periodic),
        t=float(t),
    )
