"""
Free Schrodinger evolution on a periodic grid with Madelung diagnostics.

The free Hamiltonian is diagonal in momentum, so a step multiplies each
Fourier mode by exp(-i hbar k^2 dt / 2m) and carries no time-stepping error.
A run samples fluid diagnostics every observer_stride steps, records when the
quantum potential stops being convex and when the velocity divergence dives
below a blow-up threshold, and follows Lagrangian traces through the stored
velocity fields.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from common.errors import ConfigurationError, DataError
from common.grid import Backend, Grid, mask_runs
from physics.madelung import (
    EDGE_WIDTH, EPS_MASK, EPS_VELOCITY, CollapseReading, MadelungFields,
    caustic_bound, collapse_condition, convexity_min, diagnostic_region, madelung_fields,
)
from physics.params import GaussianSpec, PhysParams

logger = logging.getLogger(__name__)

NORM_TOL = 1e-8
GAUSSIAN_EDGE_RATIO = 1e-14
SPECTRAL_TAIL_LIMIT = 1e-6
LEAK_REGION = 0.01          # fraction of the box at each end watched for leaks
MIN_POINTS_COMPACT = 4096
PADDING_FACTOR = 2.0
THETA_FLOOR = 1e-6          # |theta(0)| below this counts as zero divergence
T_BAND_FACTORS = (0.01, 1.0, 100.0)


class PhaseKind(str, Enum):
    """Initial phase imprinted on |psi0|."""
    ZERO = "zero"
    QUADRATIC = "quadratic"  # S = m a q^2 / 2, uniform divergence a
    CUSTOM = "custom"        # S given on the grid


class RunStatus(str, Enum):
    COMPLETED = "completed"
    NEAR_CAUSTIC = "near_caustic"
    LEAKED = "leaked"


@dataclass(frozen=True)
class PhaseSpec:
    kind: PhaseKind = PhaseKind.ZERO
    a: float = 0.0
    S: Optional[np.ndarray] = None

    @classmethod
    def zero(cls) -> "PhaseSpec":
        return cls(PhaseKind.ZERO)

    @classmethod
    def quadratic(cls, a: float) -> "PhaseSpec":
        return cls(PhaseKind.QUADRATIC, a=float(a))

    @classmethod
    def custom(cls, S) -> "PhaseSpec":
        return cls(PhaseKind.CUSTOM, S=np.asarray(S, dtype=float))

    @property
    def theta0(self) -> Optional[float]:
        """Uniform initial divergence, when the phase defines one."""
        if self.kind == PhaseKind.ZERO:
            return 0.0
        if self.kind == PhaseKind.QUADRATIC:
            return self.a
        return None

    def apply(self, grid: Grid, amplitude: np.ndarray, params: PhysParams) -> np.ndarray:
        amplitude = np.abs(amplitude).astype(complex)
        if self.kind == PhaseKind.ZERO:
            return amplitude
        if self.kind == PhaseKind.QUADRATIC:
            S = 0.5 * params.m * self.a * grid.x ** 2
        else:
            S = grid.check(self.S, "custom phase")
        return amplitude * np.exp(1j * S / params.hbar)


@dataclass(frozen=True)
class WaveField:
    """Complex wave function on a grid at time t."""
    grid: Grid
    psi: np.ndarray
    t: float = 0.0

    @property
    def rho(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    @property
    def norm(self) -> float:
        return self.grid.integrate(self.rho)

    @property
    def mean(self) -> float:
        return self.grid.integrate(self.grid.x * self.rho)

    @property
    def variance(self) -> float:
        return self.grid.integrate(self.grid.x ** 2 * self.rho) - self.mean ** 2


@dataclass(frozen=True)
class EvolutionConfig:
    """Time stepping and diagnostic conventions of a run."""
    dt: float
    t_end: float
    grid: Grid
    params: PhysParams = field(default_factory=PhysParams)
    observer_stride: int = 1
    theta_blowup_threshold: float = -1e3
    boundary_leak_tol: float = 1e-8
    eps_mask: float = EPS_MASK
    eps_velocity: float = EPS_VELOCITY
    edge_width: int = EDGE_WIDTH
    window: Optional[float] = None
    core_fraction: Optional[float] = None
    filter_fraction: Optional[float] = None
    filter_order: int = 2
    potential_backend: Backend = Backend.FD4
    velocity_backend: Optional[Backend] = None  # spectral on periodic grids
    trace_count: int = 24
    trace_span: float = 0.9
    stop_at_caustic: bool = True
    min_points_compact: int = MIN_POINTS_COMPACT

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigurationError(f"evolve.dt must be > 0, got {self.dt}")
        if not self.t_end >= 0.0:
            raise ConfigurationError(f"evolve.t_end must be >= 0, got {self.t_end}")
        if int(self.observer_stride) != self.observer_stride or self.observer_stride < 1:
            raise ConfigurationError(f"evolve.observer_stride must be an integer >= 1, got {self.observer_stride}")
        if not self.grid.periodic:
            raise ConfigurationError("evolution requires a periodic grid")
        if self.window is not None and self.window <= 0.0:
            raise ConfigurationError(f"evolve.window must be > 0, got {self.window}")
        if self.core_fraction is not None and not 0.0 < self.core_fraction < 1.0:
            raise ConfigurationError(f"evolve.core_fraction must lie in (0, 1), got {self.core_fraction}")
        if self.trace_count < 1 or not 0.0 < self.trace_span <= 1.0:
            raise ConfigurationError("evolve.trace_count must be >= 1 and trace_span in (0, 1]")
        if self.edge_width < 0:
            raise ConfigurationError(f"evolve.edge_width must be >= 0, got {self.edge_width}")
        for name in ("observer_stride", "edge_width", "trace_count", "filter_order", "min_points_compact"):
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "potential_backend", Backend(self.potential_backend))
        object.__setattr__(self, "velocity_backend", Backend(self.velocity_backend or Backend.SPECTRAL))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class Snapshot:
    t: float
    wave: Optional[WaveField]
    fields: MadelungFields


@dataclass
class LagrangianTrace:
    """Path q(t) of a fluid element with theta and d_q^2 U sampled along it."""
    q0: float
    t: np.ndarray
    q: np.ndarray
    theta: np.ndarray
    curvature: np.ndarray
    exited: bool = False

    @property
    def theta0(self) -> float:
        return float(self.theta[0])

    def dtheta_dt(self) -> np.ndarray:
        """Forward difference of theta over each stored interval."""
        return np.diff(self.theta) / np.diff(self.t)

    def focusing_residual(self, m: float) -> np.ndarray:
        """m d_t theta + m theta^2 + d_q^2 U at interior samples (centered in time)."""
        if len(self.t) < 3:
            return np.array([])
        rate = (self.theta[2:] - self.theta[:-2]) / (self.t[2:] - self.t[:-2])
        return m * rate + m * self.theta[1:-1] ** 2 + self.curvature[1:-1]

    def bound_margin(self) -> np.ndarray:
        """theta^-1(t) - (theta(0)^-1 + t - t0); non-negative under a convex potential."""
        with np.errstate(divide="ignore"):
            return 1.0 / self.theta - (1.0 / self.theta[0] + (self.t - self.t[0]))


@dataclass
class EvolutionRecord:
    """Samples of one run plus its derived events."""
    snapshots: List[Snapshot]
    config: Optional[EvolutionConfig] = None
    phase: PhaseSpec = field(default_factory=PhaseSpec)
    norm_series: np.ndarray = field(default_factory=lambda: np.array([]))
    variance_series: np.ndarray = field(default_factory=lambda: np.array([]))
    convexity_min_series: np.ndarray = field(default_factory=lambda: np.array([]))
    theta_min_series: np.ndarray = field(default_factory=lambda: np.array([]))
    spectral_tail_series: np.ndarray = field(default_factory=lambda: np.array([]))
    boundary_density_series: np.ndarray = field(default_factory=lambda: np.array([]))
    T_convexity: Optional[float] = None
    t_near_caustic: Optional[float] = None
    traces: List[LagrangianTrace] = field(default_factory=list)
    status: RunStatus = RunStatus.COMPLETED

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def leaked(self) -> bool:
        return self.status == RunStatus.LEAKED

    @property
    def theta0(self) -> Optional[float]:
        return self.phase.theta0

    @property
    def caustic_bound(self) -> Optional[float]:
        return caustic_bound(self.theta0) if self.theta0 is not None else None

    @property
    def T_lower_bound(self) -> Optional[float]:
        """Last sample time when convexity was never lost, else None."""
        if self.T_convexity is None and self.snapshots:
            return float(self.snapshots[-1].t)
        return None

    @property
    def T_convexity_kind(self) -> str:
        """Whether T_convexity was observed in the run or only bounded below by its length."""
        return "measured" if self.T_convexity is not None else "lower_bound"


def kinetic_factor(grid: Grid, dt: float, params: PhysParams) -> np.ndarray:
    """exp(-i hbar k^2 dt / 2m) in FFT order."""
    return np.exp(-1j * params.hbar * grid.k ** 2 * dt / (2.0 * params.m))


def step(wave: WaveField, dt: float, params: PhysParams = PhysParams()) -> WaveField:
    """Exact free propagation of wave over dt (negative dt runs backwards)."""
    if not wave.grid.periodic:
        raise ConfigurationError("step requires a periodic grid")
    psi = wave.grid.check(wave.psi, "psi")
    out = np.fft.ifft(kinetic_factor(wave.grid, dt, params) * np.fft.fft(psi))
    return WaveField(wave.grid, out, wave.t + dt)


def gaussian_analytic(spec: GaussianSpec, t: float, grid: Grid) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Spreading Gaussian packet at time t.

    Returns:
        (rho, U, psi) with U = -hbar^2 q^2 / (8 m sigma_t^4) + hbar^2 / (4 m sigma_t^2)

    Raises:
        ConfigurationError: grid edge density above 1e-14 of the peak
    """
    hbar, m = spec.params.hbar, spec.params.m
    s2t = spec.sigma_t2(t)
    edge = min(abs(grid.x_min), abs(grid.x_max))
    if edge ** 2 / (2.0 * s2t) < math.log(1.0 / GAUSSIAN_EDGE_RATIO):
        raise ConfigurationError(
            f"grid half-width {edge:g} too narrow for a Gaussian of width {math.sqrt(s2t):g} at t={t:g}"
        )
    q = grid.x
    z = 1.0 + 1j * spec.tau(t)
    psi = (2.0 * math.pi * spec.sigma ** 2) ** -0.25 / np.sqrt(z) * np.exp(-q ** 2 / (4.0 * spec.sigma ** 2 * z))
    rho = np.exp(-q ** 2 / (2.0 * s2t)) / math.sqrt(2.0 * math.pi * s2t)
    U = -hbar ** 2 * q ** 2 / (8.0 * m * s2t ** 2) + hbar ** 2 / (4.0 * m * s2t)
    return rho, U, psi


def gaussian_velocity(spec: GaussianSpec, t: float, q) -> np.ndarray:
    """v(q, t) = q (hbar^2 t / (4 m^2 sigma^2)) / sigma_t^2."""
    hbar, m = spec.params.hbar, spec.params.m
    return np.asarray(q) * (hbar ** 2 * t / (4.0 * m ** 2 * spec.sigma ** 2)) / spec.sigma_t2(t)


def _diagnostic_psi(psi: np.ndarray, config: EvolutionConfig) -> np.ndarray:
    if config.filter_fraction is None:
        return psi
    return config.grid.lowpass(psi, config.filter_fraction, config.filter_order)


def _fields(psi: np.ndarray, t: float, config: EvolutionConfig,
            eps_mask: Optional[float] = None) -> MadelungFields:
    return madelung_fields(
        config.grid, _diagnostic_psi(psi, config), config.params, t,
        eps_mask=config.eps_mask if eps_mask is None else eps_mask,
        eps_velocity=config.eps_velocity,
        potential_backend=config.potential_backend,
        velocity_backend=config.velocity_backend,
        edge_width=config.edge_width,
    )


def _region(fields: MadelungFields, mask: np.ndarray, config: EvolutionConfig) -> np.ndarray:
    region = diagnostic_region(config.grid, mask, config.edge_width, config.window)
    if config.core_fraction is not None:
        region &= fields.rho >= config.core_fraction * fields.rho.max()
    return region


def _convexity(fields: MadelungFields, config: EvolutionConfig) -> float:
    curvature = fields.curvature
    if config.core_fraction is not None:
        core = fields.rho >= config.core_fraction * fields.rho.max()
        curvature = np.where(core, curvature, np.nan)
    return convexity_min(
        config.grid, fields.U, fields.mask, edge_width=config.edge_width,
        window=config.window, curvature=curvature,
    )


def _theta_min(fields: MadelungFields, config: EvolutionConfig) -> float:
    region = _region(fields, fields.velocity_mask, config) & np.isfinite(fields.theta)
    if not region.any():
        logger.warning(f"No nodes left for the divergence diagnostic at t={fields.t:g}")
        return float("nan")
    return float(np.min(fields.theta[region]))


def _check_initial(psi0: WaveField, config: EvolutionConfig):
    grid = config.grid
    if psi0.grid != grid:
        raise ConfigurationError("initial wave function lives on a different grid than the run")
    grid.check(psi0.psi, "psi0")
    norm = psi0.norm
    if abs(norm - 1.0) > NORM_TOL:
        raise DataError(f"psi0 is not normalized (norm={norm:.12g})")
    rho = psi0.rho
    if np.any(rho == 0.0):
        half = float(np.max(np.abs(grid.x[rho > 0.0])))
        padding = min(abs(grid.x_min), abs(grid.x_max)) - half
        if padding < PADDING_FACTOR * half:
            raise ConfigurationError(
                f"compact support of half-width {half:.6g} needs padding >= {PADDING_FACTOR * half:.6g}, "
                f"grid gives {padding:.6g}"
            )
        if grid.n < config.min_points_compact:
            raise ConfigurationError(
                f"compact support needs grid.n >= {config.min_points_compact}, got {grid.n}"
            )


def _boundary_density(rho: np.ndarray) -> float:
    k = max(1, int(LEAK_REGION * rho.size))
    return float(max(rho[:k].max(), rho[-k:].max()))


def _trace_seeds(snapshot: Snapshot, config: EvolutionConfig) -> np.ndarray:
    """Evenly spaced starting points across the support of the initial density, window or not."""
    grid, fields = config.grid, snapshot.fields
    support = fields.velocity_mask
    if snapshot.wave is not None:
        support = support & (snapshot.wave.rho >= config.eps_velocity)
    region = diagnostic_region(grid, support, config.edge_width) & np.isfinite(fields.theta)
    runs = list(mask_runs(region))
    if not runs:
        return np.array([])
    center = grid.nearest(0.0)
    start, stop = max(runs, key=lambda r: (r[0] <= center < r[1], r[1] - r[0]))
    lo, hi = grid.x[start], grid.x[stop - 1]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * config.trace_span
    return np.linspace(mid - half, mid + half, config.trace_count)


def run(psi0: WaveField, phase: PhaseSpec, config: EvolutionConfig) -> EvolutionRecord:
    """
    Imprint phase on |psi0| and evolve to t_end, sampling diagnostics.

    Raises:
        DataError: unnormalized input or non-finite values during the run
        ConfigurationError: grid mismatch or insufficient padding for compact data
    """
    _check_initial(psi0, config)
    grid, params = config.grid, config.params
    n_steps = config.n_steps
    if abs(n_steps * config.dt - config.t_end) > 1e-9 * max(config.t_end, config.dt):
        logger.warning(f"t_end={config.t_end:g} is not a multiple of dt={config.dt:g}; stopping at {n_steps * config.dt:g}")

    psi = phase.apply(grid, psi0.psi, params)
    record = EvolutionRecord(snapshots=[], config=config, phase=phase)
    series = {"norm": [], "variance": [], "convexity": [], "theta": [], "tail": [], "boundary": []}
    factor = kinetic_factor(grid, config.dt, params)
    psi_hat = np.fft.fft(psi)

    for index in range(n_steps + 1):
        if index > 0:
            psi_hat *= factor
            if index % config.observer_stride and index != n_steps:
                continue
            psi = np.fft.ifft(psi_hat)
        t = index * config.dt
        if not np.all(np.isfinite(psi)):
            raise DataError(f"non-finite wave function at t={t:g}; check dt and grid")

        wave = WaveField(grid, psi.copy(), t)
        fields = _fields(psi, t, config)
        conv = _convexity(fields, config)
        theta_min = _theta_min(fields, config)
        record.snapshots.append(Snapshot(t, wave, fields))
        series["norm"].append(wave.norm)
        series["variance"].append(wave.variance)
        series["convexity"].append(conv)
        series["theta"].append(theta_min)
        series["tail"].append(grid.spectral_tail(psi))
        logger.debug(f"t={t:.6g} norm={wave.norm:.15f} convexity_min={conv:.6g} theta_min={theta_min:.6g}")

        if record.T_convexity is None and conv < 0.0:
            record.T_convexity = t
        leak = _boundary_density(wave.rho)
        series["boundary"].append(leak)
        if leak > config.boundary_leak_tol:
            logger.warning(f"Boundary density {leak:.3g} exceeds {config.boundary_leak_tol:g} at t={t:g}; aborting run")
            record.status = RunStatus.LEAKED
            break
        if theta_min < config.theta_blowup_threshold:
            record.t_near_caustic = t
            record.status = RunStatus.NEAR_CAUSTIC
            logger.info(f"theta_min={theta_min:.6g} crossed {config.theta_blowup_threshold:g} at t={t:.6g}")
            if config.stop_at_caustic:
                break

    record.norm_series = np.array(series["norm"])
    record.variance_series = np.array(series["variance"])
    record.convexity_min_series = np.array(series["convexity"])
    record.theta_min_series = np.array(series["theta"])
    record.spectral_tail_series = np.array(series["tail"])
    record.boundary_density_series = np.array(series["boundary"])

    tail = float(np.max(record.spectral_tail_series))
    if tail > SPECTRAL_TAIL_LIMIT:
        logger.warning(f"Spectral tail energy {tail:.3g} exceeds {SPECTRAL_TAIL_LIMIT:g}; the initial state is under-resolved")

    for q0 in _trace_seeds(record.snapshots[0], config):
        record.traces.append(lagrangian_trace(record, float(q0)))

    logger.info(
        f"Run finished ({record.status.value}): {len(record.snapshots)} samples to t={record.times[-1]:.6g}, "
        f"T_convexity={record.T_convexity}, t_near_caustic={record.t_near_caustic}"
    )
    return record


def _sample(grid: Grid, values: np.ndarray, q: float) -> float:
    """Linear interpolation in q; NaN if a neighbouring node is NaN or q is off the grid."""
    x = grid.x
    if grid.periodic:
        q = grid.x_min + (q - grid.x_min) % grid.length
        x = np.append(x, grid.x_max)
        values = np.append(values, values[0])
    if not x[0] <= q <= x[-1]:
        return float("nan")
    i = min(int((q - x[0]) / grid.dx), len(x) - 2)
    w = (q - x[i]) / grid.dx
    a, b = values[i], values[i + 1]
    if w == 0.0:
        return float(a)
    return float((1.0 - w) * a + w * b)


def _trace_fields(fields: MadelungFields) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    inside = fields.velocity_mask & ~fields.velocity_edge
    v = np.where(inside, fields.v, np.nan)
    theta = np.where(inside, fields.theta, np.nan)
    return v, theta, fields.curvature


def lagrangian_trace(record: EvolutionRecord, q0: float) -> LagrangianTrace:
    """
    Integrate dq/dt = v(q, t) through the stored snapshots with the midpoint rule.

    Velocities are interpolated linearly in q and t. The trace ends early when it
    leaves the velocity mask.

    Raises:
        DataError: q0 outside the initial mask
    """
    snaps = record.snapshots
    if not snaps:
        raise DataError("record has no snapshots")
    grid = snaps[0].fields.grid
    v0, th0, cu0 = _trace_fields(snaps[0].fields)
    theta_start = _sample(grid, th0, q0)
    if not np.isfinite(_sample(grid, v0, q0)) or not np.isfinite(theta_start):
        raise DataError(f"trace start q0={q0:g} is outside the initial mask")

    ts, qs, thetas, curvs = [snaps[0].t], [q0], [theta_start], [_sample(grid, cu0, q0)]
    q, exited = q0, False
    va_field = v0
    for nxt in snaps[1:]:
        vb_field, thb, cub = _trace_fields(nxt.fields)
        h = nxt.t - ts[-1]
        va = _sample(grid, va_field, q)
        q_half = q + 0.5 * h * va
        v_half = 0.5 * (_sample(grid, va_field, q_half) + _sample(grid, vb_field, q_half))
        q_next = q + h * v_half
        theta = _sample(grid, thb, q_next)
        if not (np.isfinite(v_half) and np.isfinite(theta)):
            exited = True
            break
        q = q_next
        ts.append(nxt.t)
        qs.append(q)
        thetas.append(theta)
        curvs.append(_sample(grid, cub, q))
        va_field = vb_field

    return LagrangianTrace(
        q0=q0, t=np.array(ts), q=np.array(qs), theta=np.array(thetas),
        curvature=np.array(curvs), exited=exited,
    )


@dataclass(frozen=True)
class FocusingReport:
    intervals: int
    violations: int
    max_rate: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def focusing_check(record: EvolutionRecord) -> FocusingReport:
    """
    d_t theta < 0 along every trace on each interval where convexity_min > 0 at both ends.

    An interval also needs d_q^2 U > 0 at both ends of the trace itself; traces
    near the support edge leave the windowed region that convexity_min watches.
    """
    convex = record.convexity_min_series > 0.0
    intervals = violations = 0
    max_rate = -np.inf
    for trace in record.traces:
        rates = trace.dtheta_dt()
        local = trace.curvature > 0.0
        for i, rate in enumerate(rates):
            if not (convex[i] and convex[i + 1] and local[i] and local[i + 1]):
                continue
            intervals += 1
            max_rate = max(max_rate, float(rate))
            if not rate < 0.0:
                violations += 1
    if violations:
        logger.warning(f"Focusing violated on {violations} of {intervals} trace intervals")
    return FocusingReport(intervals, violations, float(max_rate))


@dataclass(frozen=True)
class BoundViolation:
    q0: float
    t: float
    margin: float


def caustic_bound_violations(record: EvolutionRecord, tol: float = 0.1,
                             require_convexity: bool = True,
                             local_convexity: bool = True) -> List[BoundViolation]:
    """
    Check theta^-1(t) >= theta(0)^-1 + t - tol |theta(0)^-1| along each trace.

    Each trace uses its own theta(0) and is checked while theta keeps that sign,
    with require_convexity while convexity_min > 0, and with local_convexity while
    d_q^2 U > 0 at the trace position.
    """
    convex = record.convexity_min_series > 0.0
    found = []
    for trace in record.traces:
        theta0 = trace.theta0
        if abs(theta0) < THETA_FLOOR:
            continue
        margin = trace.bound_margin()
        allowance = tol / abs(theta0)
        for i in range(len(trace.t)):
            if require_convexity and not convex[i]:
                break
            if local_convexity and not trace.curvature[i] > 0.0:
                break
            if np.sign(trace.theta[i]) != np.sign(theta0):
                break
            if margin[i] < -allowance:
                found.append(BoundViolation(trace.q0, float(trace.t[i]), float(margin[i])))
    return found


def continuity_residual(record: EvolutionRecord) -> np.ndarray:
    """Max |d_t rho + d_q J| on the diagnostic region at each interior sample."""
    snaps = record.snapshots
    out = []
    for prev, cur, nxt in zip(snaps[:-2], snaps[1:-1], snaps[2:]):
        f = cur.fields
        grid = f.grid
        drho = (nxt.fields.rho - prev.fields.rho) / (nxt.t - prev.t)
        dJ = grid.deriv_masked(np.where(f.velocity_mask, f.current, np.nan), f.velocity_mask, 1, Backend.FD4)
        region = f.velocity_mask & ~f.velocity_edge
        if record.config is not None:
            region &= grid.window_mask(record.config.window)
        region &= np.isfinite(dJ)
        out.append(float(np.max(np.abs(drho + dJ)[region])))
    return np.array(out)


def focusing_residual(record: EvolutionRecord, params: Optional[PhysParams] = None) -> float:
    """Largest |m d_t theta + m theta^2 + d_q^2 U| over all traces."""
    params = params or (record.config.params if record.config else PhysParams())
    worst = 0.0
    for trace in record.traces:
        res = trace.focusing_residual(params.m)
        res = res[np.isfinite(res)]
        if res.size:
            worst = max(worst, float(np.max(np.abs(res))))
    return worst


def _first_concave_time(record: EvolutionRecord, config: EvolutionConfig,
                        eps_mask: Optional[float] = None) -> Optional[float]:
    for snap in record.snapshots:
        fields = _fields(snap.wave.psi, snap.t, config, eps_mask=eps_mask)
        if _convexity(fields, config) < 0.0:
            return snap.t
    return None


def convexity_time_band(record: EvolutionRecord,
                        factors: Sequence[float] = T_BAND_FACTORS) -> Dict[float, Optional[float]]:
    """T_convexity recomputed from the stored wave functions with eps_mask scaled by each factor."""
    config = record.config
    band = {factor: _first_concave_time(record, config, config.eps_mask * factor) for factor in factors}
    logger.info(f"T_convexity eps_mask sensitivity: {band}")
    return band


def convexity_time_conventions(record: EvolutionRecord) -> Dict[str, Optional[float]]:
    """T_convexity recomputed with the diagnostic window and the low-pass filter switched off in turn."""
    config = record.config
    variants = {
        "configured": config,
        "no_window": replace(config, window=None),
        "no_filter": replace(config, filter_fraction=None),
        "no_window_no_filter": replace(config, window=None, filter_fraction=None),
    }
    out = {name: _first_concave_time(record, variant) for name, variant in variants.items()}
    logger.info(f"T_convexity window/filter sensitivity: {out}")
    return out


def initial_wave(rho: np.ndarray, grid: Grid) -> WaveField:
    """Real, non-negative wave function sqrt(rho) at t = 0."""
    return WaveField(grid, np.sqrt(grid.check(rho, "rho")).astype(complex), 0.0)


@dataclass
class CausticExperiment:
    """Convexity time at zero phase, then a collapse run with theta0 = -1/(safety T0)."""
    T0: float
    T0_is_lower_bound: bool
    theta0: float
    t_c_upper: float
    focus: EvolutionRecord
    collapse: EvolutionRecord
    violations: List[BoundViolation]
    T_band: Dict[float, Optional[float]]
    T_conventions: Dict[str, Optional[float]] = field(default_factory=dict)

    @property
    def t_near_caustic(self) -> Optional[float]:
        return self.collapse.t_near_caustic

    @property
    def collapse_expected(self) -> Dict[str, bool]:
        return {r.value: collapse_condition(self.theta0, self.T0, r) for r in CollapseReading}

    @property
    def passed(self) -> bool:
        t = self.t_near_caustic
        return t is not None and t < self.t_c_upper and not self.violations


def caustic_experiment(psi0: WaveField, config: EvolutionConfig, safety: float = 0.8,
                       threshold_factor: float = 10.0, steps: int = 50,
                       bound_tol: float = 0.1, k_guard: float = 0.9) -> CausticExperiment:
    """
    Measure T(0), then evolve with a quadratic phase whose bound 1/|theta0| is safety * T(0).

    The collapse run is unfiltered, uses threshold_factor * theta0 as its blow-up
    threshold and checks the caustic bound along every trace while d_q^2 U > 0
    at the trace position.

    Raises:
        DataError: convexity already lost at t = 0
        ConfigurationError: the grid cannot resolve the imprinted phase
    """
    if not 0.0 < safety <= 0.8:
        raise ConfigurationError(f"safety must lie in (0, 0.8], got {safety}")
    focus = run(psi0, PhaseSpec.zero(), config)
    if focus.T_convexity is None:
        T0, lower = focus.T_lower_bound, True
    else:
        T0, lower = focus.T_convexity, False
    if not T0 > 0.0:
        raise DataError("convexity is lost at t=0; no caustic time to test")
    band = convexity_time_band(focus)
    conventions = convexity_time_conventions(focus)

    theta0 = -1.0 / (safety * T0)
    t_c = 1.0 / abs(theta0)
    params, grid = config.params, config.grid
    half = float(np.max(np.abs(grid.x[psi0.rho >= config.eps_mask])))
    k_needed = params.m * abs(theta0) * half / params.hbar
    if k_needed > k_guard * grid.k_max:
        raise ConfigurationError(
            f"phase gradient k={k_needed:.4g} at the support edge exceeds {k_guard} k_max={grid.k_max:.4g}"
        )

    collapse_config = replace(
        config, dt=t_c / steps, t_end=t_c, observer_stride=1, filter_fraction=None,
        theta_blowup_threshold=threshold_factor * theta0, stop_at_caustic=True,
    )
    logger.info(f"Caustic run: T0={T0:.6g}{' (lower bound)' if lower else ''}, theta0={theta0:.6g}, 1/|theta0|={t_c:.6g}")
    collapse = run(psi0, PhaseSpec.quadratic(theta0), collapse_config)
    violations = caustic_bound_violations(collapse, bound_tol, require_convexity=False)
    if violations:
        logger.warning(f"Caustic bound violated at {len(violations)} trace samples")
    return CausticExperiment(
        T0=T0, T0_is_lower_bound=lower, theta0=theta0, t_c_upper=t_c,
        focus=focus, collapse=collapse, violations=violations, T_band=band,
        T_conventions=conventions,
    )
