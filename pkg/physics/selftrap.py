"""
Self-trapped states: densities proportional to exp(-beta U) where U is their own
quantum potential.

In x = Lambda q and u = beta U the profile obeys u'' = u'^2 / 2 + u with
u(0) = u0, u'(0) = 0. The solver integrates the equivalent amplitude form
r'' = r ln r for r = exp(-u / 2), which stays regular where u blows up: the
support edge x_m is the first zero of r.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import BPoly, PchipInterpolator
from scipy.special import xlogy
from scipy.stats import linregress

from common.errors import ConfigurationError, DivergenceError, DomainError
from common.grid import Grid
from physics.params import GaussianSpec, PhysParams

logger = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
DEFAULT_RHO_FLOOR = 1e-16
DEFAULT_X_LIMIT = 100.0
DEFAULT_NODE_SPACING = 1e-4
FIT_FRACTION = 0.2
FIT_SAMPLES = 16
# Tolerance tightening for the refined solve; DOP853 error scales as h^8
REFINE_FACTOR = 2.0 ** 8
MIN_RTOL = 100.0 * np.finfo(float).eps


class Interpolation(str, Enum):
    """Transfer of the amplitude onto grid abscissas."""
    DIRECT = "direct"    # re-integrate with steps no longer than the grid spacing
    HERMITE = "hermite"  # quintic Hermite from (r, r', r'') node data
    PCHIP = "pchip"      # monotone cubic (Fritsch-Carlson)


@dataclass(frozen=True)
class DimensionlessProfile:
    """Solution of the self-trap ODE in x = Lambda q, u = beta U."""
    u0: float
    x_nodes: np.ndarray
    u_values: np.ndarray
    up_values: np.ndarray
    x_m: float
    x_m_uncertainty: float
    r_values: np.ndarray = field(repr=False)
    rp_values: np.ndarray = field(repr=False)
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    rho_floor: float = DEFAULT_RHO_FLOOR
    x_limit: float = DEFAULT_X_LIMIT

    @property
    def upp_values(self) -> np.ndarray:
        """u'' at the nodes, taken from the ODE itself."""
        return 0.5 * self.up_values ** 2 + self.u_values

    @property
    def x_stop(self) -> float:
        return float(self.x_nodes[-1])

    @property
    def node_spacing(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])

    def amplitude(self, x, method: Interpolation = Interpolation.DIRECT,
                  max_step: Optional[float] = None) -> np.ndarray:
        """
        r(x) = exp(-u(x) / 2) for x >= 0.

        DIRECT solves the ODE again with steps capped at max_step (default: the node
        spacing) and reads the dense output, so that no structure on the node scale
        reaches second differences taken on a finer grid. Between the stop node and
        x_m the amplitude is continued linearly to zero; beyond x_m it is zero.
        """
        x = np.asarray(x, dtype=float)
        method = Interpolation(method)
        r = np.zeros_like(x)
        inside = x <= self.x_stop
        if np.any(inside):
            r[inside] = self._interpolant(method, max_step)(x[inside])
        tail = (x > self.x_stop) & (x < self.x_m)
        if np.any(tail):
            r_stop = self.r_values[-1]
            r[tail] = r_stop * (self.x_m - x[tail]) / (self.x_m - self.x_stop)
        return np.clip(r, 0.0, None)

    def _interpolant(self, method: Interpolation, max_step: Optional[float]):
        if method == Interpolation.DIRECT:
            step = self.node_spacing if max_step is None else float(max_step)
            if not step > 0.0:
                raise ConfigurationError(f"max_step must be > 0, got {max_step}")
            sol = _integrate(self.u0, self.rtol, self.atol, self.rho_floor, self.x_limit, max_step=step)
            logger.debug(f"Direct amplitude u0={self.u0}: {sol.t.size} steps of at most {step:.3g}")
            return lambda x: sol.sol(x)[0]
        if method == Interpolation.HERMITE:
            rpp = xlogy(self.r_values, self.r_values)
            return BPoly.from_derivatives(self.x_nodes, np.column_stack([self.r_values, self.rp_values, rpp]))
        return PchipInterpolator(self.x_nodes, self.r_values)

    def u(self, x, method: Interpolation = Interpolation.DIRECT) -> np.ndarray:
        """u(x) from amplitude(); NaN at and beyond x_m."""
        r = self.amplitude(x, method)
        out = np.full_like(r, np.nan)
        pos = r > 0.0
        out[pos] = -2.0 * np.log(r[pos])
        return out


@dataclass(frozen=True)
class SelfTrapState:
    """Self-trapped state sampled on a grid symmetric about 0."""
    params: PhysParams
    grid: Grid
    rho: np.ndarray
    U: np.ndarray  # NaN outside the support
    q_m: float
    Z: float
    second_moment: float
    profile: DimensionlessProfile = field(repr=False)

    @property
    def u0(self) -> float:
        return self.profile.u0

    @property
    def U0(self) -> float:
        return self.profile.u0 / self.params.beta

    @property
    def q_m_uncertainty(self) -> float:
        return self.profile.x_m_uncertainty / self.params.lam

    @property
    def R(self) -> np.ndarray:
        return np.sqrt(self.rho)

    @property
    def support(self) -> np.ndarray:
        return self.rho > 0.0


def _amplitude_rhs(x, y):
    r, rp = y
    return [rp, xlogy(r, abs(r))]


def _integrate(u0: float, rtol: float, atol: float, rho_floor: float, x_limit: float,
               max_step: float = np.inf):
    """Run the amplitude ODE to the stop threshold; returns the solve_ivp result."""
    r0 = math.exp(-0.5 * u0)
    r_stop = r0 * rho_floor
    r_enter = r0 * rho_floor ** (1.0 - FIT_FRACTION)

    def enter_fit(x, y):
        return y[0] - r_enter

    def reach_stop(x, y):
        return y[0] - r_stop

    enter_fit.direction = -1.0
    reach_stop.direction = -1.0
    reach_stop.terminal = True

    sol = solve_ivp(
        _amplitude_rhs, (0.0, x_limit), [r0, 0.0], method="DOP853",
        rtol=max(rtol, MIN_RTOL), atol=atol, dense_output=True, max_step=max_step,
        events=[enter_fit, reach_stop],
    )
    if sol.status == -1:
        raise DivergenceError(f"self-trap integration failed for u0={u0}: {sol.message}")
    if sol.status != 1 or len(sol.t_events[1]) == 0:
        raise DivergenceError(
            f"u did not reach u_stop={u0 + 2.0 * math.log(1.0 / rho_floor):.6g} within x_limit={x_limit}"
        )
    return sol


def _fit_x_m(sol) -> float:
    """Zero of the least-squares line r(x) on the final blow-up segment."""
    x_stop = float(sol.t_events[1][0])
    x_enter = float(sol.t_events[0][0]) if len(sol.t_events[0]) else float(sol.t[-2])
    xs = np.linspace(x_enter, x_stop, FIT_SAMPLES)
    fit = linregress(xs, sol.sol(xs)[0])
    if fit.slope >= 0.0:
        raise DivergenceError(f"amplitude is not decreasing at the support edge (slope {fit.slope})")
    return -fit.intercept / fit.slope


def solve_dimensionless(u0: float, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                        rho_floor: float = DEFAULT_RHO_FLOOR, x_limit: float = DEFAULT_X_LIMIT,
                        node_spacing: float = DEFAULT_NODE_SPACING) -> DimensionlessProfile:
    """
    Solve u'' = u'^2 / 2 + u from the origin until u reaches u0 + 2 ln(1 / rho_floor).

    Args:
        u0: beta U at the origin, must be > 0
        rtol, atol: Runge-Kutta tolerances
        rho_floor: Density floor defining the stop threshold
        x_limit: Give up beyond this abscissa
        node_spacing: Spacing of the stored profile nodes

    Returns:
        DimensionlessProfile with nodes, x_m and its step-halving uncertainty

    Raises:
        DomainError: u0 <= 0
        DivergenceError: stop threshold not reached
    """
    if not np.isfinite(u0) or u0 <= 0.0:
        raise DomainError(f"u0 must be > 0, got {u0}")
    if not 0.0 < rho_floor < 1.0:
        raise DomainError(f"rho_floor must lie in (0, 1), got {rho_floor}")
    if node_spacing <= 0.0:
        raise ConfigurationError(f"node_spacing must be > 0, got {node_spacing}")

    sol = _integrate(u0, rtol, atol, rho_floor, x_limit)
    x_m = _fit_x_m(sol)

    refined = _integrate(u0, rtol / REFINE_FACTOR, atol / REFINE_FACTOR, rho_floor, x_limit)
    x_m_uncertainty = abs(_fit_x_m(refined) - x_m)

    x_stop = float(sol.t_events[1][0])
    x_nodes = np.arange(0.0, x_stop, node_spacing)
    if x_stop - x_nodes[-1] < 1e-3 * node_spacing:
        x_nodes = x_nodes[:-1]
    r, rp = sol.sol(x_nodes)
    r0 = math.exp(-0.5 * u0)
    r_stop = r0 * rho_floor
    # The event root is located to a few ulp in x, which is more than r_stop in r
    x_nodes = np.append(x_nodes, x_stop)
    r = np.append(np.maximum(r, r_stop), r_stop)
    rp = np.append(rp, sol.y_events[1][0][1])
    r[0], rp[0] = r0, 0.0

    logger.debug(f"Self-trap ODE u0={u0}: {sol.t.size} steps, {x_nodes.size} nodes, x_stop={x_stop:.12g}")
    return DimensionlessProfile(
        u0=float(u0),
        x_nodes=x_nodes,
        u_values=-2.0 * np.log(r),
        up_values=-2.0 * rp / r,
        x_m=float(x_m),
        x_m_uncertainty=float(x_m_uncertainty),
        r_values=r,
        rp_values=rp,
        rtol=float(rtol),
        atol=float(atol),
        rho_floor=float(rho_floor),
        x_limit=float(x_limit),
    )


def rescale(profile: DimensionlessProfile, params: PhysParams, grid: Grid,
            method: Interpolation = Interpolation.DIRECT) -> SelfTrapState:
    """
    Map a dimensionless profile onto a physical grid symmetric about 0.

    U(q) = u(Lambda |q|) / beta on the open support, rho = exp(-beta U) / Z there
    and exactly 0 outside.

    Raises:
        ConfigurationError: grid not symmetric or too small to hold the support
    """
    lam = params.lam
    q_m = profile.x_m / lam
    grid.mirror_index()
    if grid.x_max < q_m:
        raise ConfigurationError(
            f"grid half-width {grid.x_max:.6g} does not contain the support q_m={q_m:.6g}"
        )

    x = lam * np.abs(grid.x)
    r = profile.amplitude(x, method, max_step=lam * grid.dx)
    if np.any(np.diff(r[grid.x >= 0.0]) > 0.0):
        logger.warning(f"Interpolated amplitude ({Interpolation(method).value}) is not monotone in |q|")
    support = r > 0.0
    weight = r ** 2
    Z = grid.integrate(weight)
    rho = weight / Z

    U = np.full(grid.n, np.nan)
    U[support] = -2.0 * np.log(r[support]) / params.beta
    second_moment = grid.integrate(grid.x ** 2 * rho)

    logger.info(
        f"Self-trapped state u0={profile.u0}: q_m={q_m:.12g} (+/- {profile.x_m_uncertainty / lam:.2g}), "
        f"Z={Z:.12g}, <q^2>={second_moment:.12g}"
    )
    return SelfTrapState(
        params=params, grid=grid, rho=rho, U=U, q_m=q_m, Z=Z,
        second_moment=second_moment, profile=profile,
    )


def solve_state(u0: float, params: PhysParams, grid: Grid,
                method: Interpolation = Interpolation.DIRECT, **solver_options) -> SelfTrapState:
    """solve_dimensionless followed by rescale."""
    return rescale(solve_dimensionless(u0, **solver_options), params, grid, method)


def cosh_approx(U_Q: float, Q: float, params: PhysParams, q):
    """Near-extremum approximation U_Q cosh(Lambda (q - Q)), valid for Lambda |q - Q| << 1."""
    return U_Q * np.cosh(params.lam * (np.asarray(q, dtype=float) - Q))


def matched_gaussian(state: SelfTrapState) -> GaussianSpec:
    """Gaussian with the same second moment as the state."""
    if state.second_moment <= 0.0:
        raise ConfigurationError(f"second moment must be > 0, got {state.second_moment}")
    return GaussianSpec(sigma=math.sqrt(state.second_moment), params=state.params)


def gaussian_density(spec: GaussianSpec, grid: Grid) -> np.ndarray:
    """rho_G(q) = (2 pi sigma^2)^(-1/2) exp(-q^2 / (2 sigma^2))."""
    s2 = spec.sigma ** 2
    return np.exp(-grid.x ** 2 / (2.0 * s2)) / math.sqrt(2.0 * math.pi * s2)


def support_grid(q_m: float, n: int, padding: float = 1.2) -> Grid:
    """Bounded grid of half-width padding * q_m."""
    return Grid.symmetric(padding * q_m, n)
