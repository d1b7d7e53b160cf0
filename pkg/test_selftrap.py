"""
Test the self-trapped state construction.

Tests:
1. x_m agrees with the quadrature of the first integral r'^2 = r^2 ln r - r^2/2 + C
2. Edge slope, origin curvature and the support ordering x_m(2) < x_m(1)
3. For u0 in {0.25, 0.5, 1, 2, 4}: normalization, symmetry, minimum U0 at q = 0,
   discrete convexity of U, concavity of R, exact zero outside the support
4. rho ~ (q_m - |q|)^2 near the edge, cosh approximation, parameter scaling
5. U recomputed from rho by the quantum potential closes on the ODE U, also on
   refined grids
6. Tight solver tolerances keep the stop node positive
7. Matched Gaussian and error cases

Usage:
    python3 -m pytest test_selftrap.py -v
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import xlogy
from scipy.stats import linregress

from common.errors import ConfigurationError, DivergenceError, DomainError
from common.grid import Backend, Grid
from physics.madelung import convexity_min, edge_flags, quantum_potential
from physics.params import PhysParams
from physics.selftrap import (
    Interpolation, cosh_approx, gaussian_density, matched_gaussian, rescale,
    solve_dimensionless, support_grid,
)

U0_SWEEP = (0.25, 0.5, 1.0, 2.0, 4.0)
PARAMS = PhysParams()  # hbar = m = beta = 1, Lambda = 2
N_POINTS = 40001


def x_m_oracle(u0: float) -> float:
    """x_m = integral of dr / sqrt(G(r)) over (0, r0), with r = r0 - s^2 to remove the endpoint singularity."""
    r0 = math.exp(-0.5 * u0)
    c = 0.5 * r0 ** 2 * (1.0 + u0)

    def integrand(s):
        r = r0 - s * s
        g = r * xlogy(r, abs(r)) - 0.5 * r * r + c
        return 2.0 * s / math.sqrt(g)

    value, _ = quad(integrand, 0.0, math.sqrt(r0), epsabs=1e-13, epsrel=1e-12, limit=200)
    return value


@pytest.fixture(scope="module")
def profiles():
    return {u0: solve_dimensionless(u0) for u0 in U0_SWEEP}


@pytest.fixture(scope="module")
def states(profiles):
    out = {}
    for u0, profile in profiles.items():
        q_m = profile.x_m / PARAMS.lam
        out[u0] = rescale(profile, PARAMS, support_grid(q_m, N_POINTS))
    return out


@pytest.mark.parametrize("u0", U0_SWEEP)
def test_x_m_matches_quadrature(profiles, u0):
    profile = profiles[u0]
    expected = x_m_oracle(u0)
    assert abs(profile.x_m - expected) < 1e-7, f"x_m={profile.x_m!r}, quadrature {expected!r}"
    assert 0.0 <= profile.x_m_uncertainty < 1e-6
    print(f"✓ u0={u0}: x_m={profile.x_m:.12f} (quadrature {expected:.12f})")


@pytest.mark.parametrize("u0", U0_SWEEP)
def test_edge_slope(profiles, u0):
    """r' reaches -r0 sqrt((1 + u0) / 2) as r -> 0."""
    profile = profiles[u0]
    a = math.exp(-0.5 * u0) * math.sqrt(0.5 * (1.0 + u0))
    assert abs(profile.rp_values[-1] + a) < 1e-8 * a


def test_profile_shape(profiles):
    profile = profiles[1.0]
    assert profile.x_nodes[0] == 0.0
    assert profile.u_values[0] == pytest.approx(1.0, abs=1e-15)
    assert profile.up_values[0] == 0.0
    # u''(0) = u0, both from the ODE and from the node values
    assert profile.upp_values[0] == pytest.approx(1.0)
    # u(x) = u0 + u0 x^2 / 2 + x^4 / 12 for u0 = 1
    h = profile.x_nodes[100]
    fd = 2.0 * (profile.u_values[100] - profile.u_values[0]) / h ** 2
    assert fd == pytest.approx(1.0 + h ** 2 / 6.0, abs=1e-5)
    assert np.all(np.diff(profile.u_values) > 0.0)
    assert np.all(profile.upp_values > 0.0)
    assert profile.x_stop < profile.x_m


def test_larger_u0_has_smaller_support(profiles):
    x_m = [profiles[u0].x_m for u0 in U0_SWEEP]
    assert all(a > b for a, b in zip(x_m, x_m[1:])), x_m


@pytest.mark.parametrize("u0", U0_SWEEP)
def test_state_invariants(states, u0):
    state = states[u0]
    grid = state.grid
    assert abs(grid.integrate(state.rho) - 1.0) < 1e-8
    assert np.max(np.abs(state.rho - state.rho[grid.mirror_index()])) < 1e-8

    support = np.isfinite(state.U)
    assert np.array_equal(support, state.rho > 0.0)
    assert np.all(state.rho[np.abs(grid.x) >= state.q_m] == 0.0)
    assert np.all(state.rho[np.abs(grid.x) < 0.99 * state.q_m] > 0.0)

    center = grid.nearest(0.0)
    assert abs(state.U[center] - state.U0) < 1e-8
    assert np.nanargmin(state.U) == center
    assert np.all(state.U[support] >= state.U0 - 1e-12)
    assert state.rho[center] * state.Z == pytest.approx(math.exp(-u0), rel=1e-12)


@pytest.mark.parametrize("u0", U0_SWEEP)
def test_convexity_and_concavity(states, u0):
    """Second differences of U are positive and of R negative on the support interior."""
    state = states[u0]
    grid = state.grid
    support = np.isfinite(state.U)
    assert convexity_min(grid, state.U, support, backend=Backend.FD2) > 0.0

    region = support & (state.rho > 1e-16)
    d2R = grid.deriv_masked(state.R, region, 2, Backend.FD2)
    inner = region & ~edge_flags(region, 1) & np.isfinite(d2R)
    assert inner.sum() > 1000
    assert np.max(d2R[inner]) < 0.0


def test_log_linear_relation(states):
    """ln rho = -beta U - ln Z on the open support."""
    state = states[1.0]
    support = np.isfinite(state.U)
    residual = np.log(state.rho[support]) + PARAMS.beta * state.U[support] + math.log(state.Z)
    assert np.max(np.abs(residual)) < 1e-10


def test_boundary_exponent(states):
    """rho ~ C (q_m - |q|)^p with p = 2 on the last decade of the support."""
    state = states[1.0]
    s = state.q_m - state.grid.x
    near = (s >= 1e-3 * state.q_m) & (s <= 1e-2 * state.q_m) & (state.rho > 0.0)
    assert near.sum() > 50
    p = linregress(np.log(s[near]), np.log(state.rho[near])).slope
    assert abs(p - 2.0) < 0.1, f"boundary exponent {p}"


def test_cosh_approx():
    assert cosh_approx(1.0, 0.0, PARAMS, 0.0) == 1.0
    assert cosh_approx(1.0, 0.0, PARAMS, 0.1) == pytest.approx(1.0200668, abs=1e-7)
    assert cosh_approx(2.5, 1.0, PARAMS, 1.0) == 2.5


def test_cosh_departs_monotonically(profiles):
    profile = profiles[1.0]
    x, u = profile.x_nodes, profile.u_values
    deviation = u - profile.u0 * np.cosh(x)
    small = x <= 0.1
    assert np.max(np.abs(deviation[small])) <= 1e-3 * profile.u0
    grow = deviation[x >= 0.1]
    assert np.all(np.diff(grow) > 0.0)


def test_scaling_covariance(profiles):
    """Quartering beta doubles Lambda: same profile on half the length, four times the energy."""
    profile = profiles[1.0]
    quarter = PhysParams(beta=0.25)
    assert quarter.lam == pytest.approx(2.0 * PARAMS.lam)
    assert quarter.lam ** 2 * quarter.hbar ** 2 * quarter.beta == pytest.approx(4.0 * quarter.m)

    q_m = profile.x_m / PARAMS.lam
    a = rescale(profile, PARAMS, Grid.symmetric(1.2 * q_m, 4001))
    b = rescale(profile, quarter, Grid.symmetric(0.6 * q_m, 4001))
    assert b.q_m * quarter.lam == pytest.approx(a.q_m * PARAMS.lam, rel=1e-14)
    assert b.U0 == pytest.approx(4.0 * a.U0)
    assert np.allclose(b.rho, 2.0 * a.rho, rtol=1e-9, atol=1e-12)
    inside = np.isfinite(a.U) & np.isfinite(b.U)
    assert np.allclose(b.U[inside], 4.0 * a.U[inside], rtol=1e-9)


def test_closure_with_quantum_potential(states):
    """U computed from rho through -(hbar^2/2m) R''/R reproduces the ODE U within 1e-4 U0."""
    state = states[1.0]
    grid = state.grid
    U_re, mask = quantum_potential(grid, state.rho, PARAMS, backend=Backend.FD4)
    zone = mask & (state.rho > 1e-6) & ~edge_flags(mask, 5)
    err = np.max(np.abs(U_re[zone] - state.U[zone]))
    assert err <= 1e-4 * state.U0, f"closure error {err}"
    print(f"✓ closure max error {err:.3g} (limit {1e-4 * state.U0:.3g})")


@pytest.mark.parametrize("n", [40001, 80001])
def test_closure_holds_under_refinement(profiles, n):
    """Second differences on a finer grid must not pick up structure from the amplitude transfer."""
    profile = profiles[1.0]
    state = rescale(profile, PARAMS, support_grid(profile.x_m / PARAMS.lam, n))
    U_re, mask = quantum_potential(state.grid, state.rho, PARAMS, backend=Backend.FD4)
    zone = mask & (state.rho > 1e-6) & ~edge_flags(mask, 5)
    err = np.max(np.abs(U_re[zone] - state.U[zone]))
    assert err <= 1e-4 * state.U0, f"n={n}: closure error {err}"
    print(f"✓ n={n}: closure max error {err:.3g}")


def test_tight_tolerances_keep_stop_node_positive():
    profile = solve_dimensionless(1.0, rtol=1e-13, atol=1e-16)
    assert np.all(profile.r_values > 0.0)
    assert profile.r_values[-1] == math.exp(-0.5) * 1e-16
    assert np.all(np.isfinite(profile.u_values))
    assert np.all(np.isfinite(profile.up_values))
    assert profile.atol == 1e-16

    q_m = profile.x_m / PARAMS.lam
    for method in Interpolation:
        state = rescale(profile, PARAMS, support_grid(q_m, 4001), method)
        assert abs(state.grid.integrate(state.rho) - 1.0) < 1e-12
        assert np.all(np.isfinite(state.rho))


def test_pchip_variant(profiles):
    profile = profiles[1.0]
    q_m = profile.x_m / PARAMS.lam
    state = rescale(profile, PARAMS, support_grid(q_m, 4001), Interpolation.PCHIP)
    assert abs(state.grid.integrate(state.rho) - 1.0) < 1e-12
    assert np.max(np.abs(state.rho - state.rho[state.grid.mirror_index()])) < 1e-8
    assert state.q_m == q_m


def test_matched_gaussian(states):
    state = states[1.0]
    spec = matched_gaussian(state)
    assert spec.sigma ** 2 == pytest.approx(state.second_moment)

    wide = Grid.symmetric(max(2.5 * state.q_m, 12.0 * spec.sigma), 20001)
    rho = rescale(state.profile, PARAMS, wide).rho
    rho_g = gaussian_density(spec, wide)
    assert wide.integrate(wide.x ** 2 * rho_g) == pytest.approx(spec.sigma ** 2, rel=1e-10)
    center = wide.nearest(0.0)
    assert rho_g[center] > rho[center]
    at_two_q_m = wide.nearest(2.0 * state.q_m)
    assert rho[at_two_q_m] == 0.0 and rho_g[at_two_q_m] > 0.0


def test_errors(profiles):
    with pytest.raises(DomainError):
        solve_dimensionless(0.0)
    with pytest.raises(DomainError):
        solve_dimensionless(-1.0)
    with pytest.raises(DivergenceError):
        solve_dimensionless(1.0, x_limit=0.5)
    profile = profiles[1.0]
    q_m = profile.x_m / PARAMS.lam
    with pytest.raises(ConfigurationError):
        rescale(profile, PARAMS, Grid.symmetric(0.5 * q_m, 101))
    with pytest.raises(ConfigurationError):
        rescale(profile, PARAMS, Grid(0.0, 2.0 * q_m, 101))
