"""
Uniform 1-D grid with finite-difference and spectral derivatives, quadrature
and the spectral low-pass filter used by the evolution diagnostics.

Fields are plain numpy arrays of length grid.n.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from common.errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

MIN_POINTS = 8


class GridMode(str, Enum):
    """Boundary treatment of a grid."""
    BOUNDED = "bounded"    # endpoints included, one-sided edge stencils
    PERIODIC = "periodic"  # x_max identified with x_min


class Backend(str, Enum):
    """Derivative backend."""
    FD2 = "fd2"
    FD4 = "fd4"
    SPECTRAL = "spectral"


# Minimum contiguous nodes per backend and derivative order
STENCIL_WIDTH = {
    (Backend.FD2, 1): 3,
    (Backend.FD2, 2): 4,
    (Backend.FD4, 1): 5,
    (Backend.FD4, 2): 6,
}

# One-sided edge rows: (offset from edge node, coefficients over nodes 0..len-1)
_EDGE_ROWS = {
    (Backend.FD2, 1): [(0, (-3.0, 4.0, -1.0), 2.0)],
    (Backend.FD2, 2): [(0, (2.0, -5.0, 4.0, -1.0), 1.0)],
    (Backend.FD4, 1): [
        (0, (-25.0, 48.0, -36.0, 16.0, -3.0), 12.0),
        (1, (-3.0, -10.0, 18.0, -6.0, 1.0), 12.0),
    ],
    (Backend.FD4, 2): [
        (0, (45.0, -154.0, 214.0, -156.0, 61.0, -10.0), 12.0),
        (1, (10.0, -15.0, -4.0, 14.0, -6.0, 1.0), 12.0),
    ],
}


def _central(f: np.ndarray, backend: Backend, order: int, periodic: bool) -> np.ndarray:
    """Interior central stencil; undefined rows are left for the edge pass."""
    def shift(s: int) -> np.ndarray:
        if periodic:
            return np.roll(f, -s)
        out = np.zeros_like(f)
        if s >= 0:
            out[:len(f) - s] = f[s:]
        else:
            out[-s:] = f[:len(f) + s]
        return out

    if backend == Backend.FD2:
        if order == 1:
            return (shift(1) - shift(-1)) / 2.0
        return shift(-1) - 2.0 * f + shift(1)
    if order == 1:
        return (shift(-2) - 8.0 * shift(-1) + 8.0 * shift(1) - shift(2)) / 12.0
    return (-shift(-2) + 16.0 * shift(-1) - 30.0 * f + 16.0 * shift(1) - shift(2)) / 12.0


def fd_derivative(f: np.ndarray, dx: float, order: int, backend: Backend,
                  periodic: bool = False) -> np.ndarray:
    """
    Finite-difference derivative of a contiguous segment.

    Args:
        f: Samples (real or complex)
        dx: Spacing
        order: 1 or 2
        backend: FD2 or FD4
        periodic: Wrap the stencil instead of using one-sided edges

    Returns:
        Derivative samples, same length as f
    """
    width = STENCIL_WIDTH[(backend, order)]
    if len(f) < width:
        raise ConfigurationError(
            f"{backend.value} derivative of order {order} needs at least {width} points, got {len(f)}"
        )
    f = np.asarray(f)
    f = f.astype(np.result_type(f.dtype, float), copy=False)
    out = _central(f, backend, order, periodic)
    if not periodic:
        # Odd derivatives flip sign at the right edge, even ones do not
        sign = -1.0 if order == 1 else 1.0
        right = f[::-1]
        for offset, coeffs, denom in _EDGE_ROWS[(backend, order)]:
            c = np.asarray(coeffs)
            out[offset] = np.dot(c, f[:len(c)]) / denom
            out[len(f) - 1 - offset] = sign * np.dot(c, right[:len(c)]) / denom
    return out / dx ** order


def mask_runs(mask: np.ndarray):
    """Yield (start, stop) of each contiguous run of True in a 1-D mask."""
    padded = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    changes = np.flatnonzero(np.diff(padded.astype(np.int8)))
    for start, stop in zip(changes[::2], changes[1::2]):
        yield int(start), int(stop)


@dataclass(frozen=True)
class Grid:
    """Uniform spatial lattice."""
    x_min: float
    x_max: float
    n: int
    mode: GridMode = GridMode.BOUNDED

    def __post_init__(self):
        if int(self.n) != self.n or self.n < MIN_POINTS:
            raise ConfigurationError(f"grid.n must be an integer >= {MIN_POINTS}, got {self.n}")
        if not np.isfinite(self.x_min) or not np.isfinite(self.x_max) or self.x_max <= self.x_min:
            raise ConfigurationError(
                f"grid requires finite x_min < x_max, got [{self.x_min}, {self.x_max}]"
            )
        object.__setattr__(self, "mode", GridMode(self.mode))

    @classmethod
    def symmetric(cls, half_width: float, n: int, mode: GridMode = GridMode.BOUNDED) -> "Grid":
        """Grid on [-half_width, half_width] (bounded) or [-half_width, half_width) (periodic)."""
        return cls(-half_width, half_width, n, mode)

    @property
    def periodic(self) -> bool:
        return self.mode == GridMode.PERIODIC

    @property
    def dx(self) -> float:
        if self.periodic:
            return (self.x_max - self.x_min) / self.n
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        if self.periodic:
            return self.x_min + self.dx * np.arange(self.n)
        return np.linspace(self.x_min, self.x_max, self.n)

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @property
    def k_max(self) -> float:
        """Nyquist wavenumber."""
        return np.pi / self.dx

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    def check(self, f, name: str = "field", allow_nan: bool = False) -> np.ndarray:
        """Validate that f is a field on this grid."""
        arr = np.asarray(f)
        if arr.shape != (self.n,):
            raise DataError(f"{name} has shape {arr.shape}, expected ({self.n},)")
        bad = ~np.isfinite(arr) if not allow_nan else np.isinf(arr)
        if np.any(bad):
            raise DataError(f"{name} contains {int(np.count_nonzero(bad))} non-finite values")
        return arr

    def _check_backend(self, backend: Backend):
        backend = Backend(backend)
        if backend == Backend.SPECTRAL:
            if not self.periodic:
                raise ConfigurationError("spectral backend requires a periodic grid")
            if self.n % 2:
                raise ConfigurationError(f"spectral backend requires even n, got {self.n}")
        return backend

    def _spectral(self, f: np.ndarray, order: int) -> np.ndarray:
        k = self.k
        if order % 2:
            k = k.copy()
            k[self.n // 2] = 0.0
        out = np.fft.ifft((1j * k) ** order * np.fft.fft(f))
        return out if np.iscomplexobj(f) else out.real

    def deriv(self, f, order: int, backend: Backend = Backend.FD4) -> np.ndarray:
        backend = self._check_backend(backend)
        f = self.check(f)
        if backend == Backend.SPECTRAL:
            return self._spectral(f, order)
        return fd_derivative(f, self.dx, order, backend, periodic=self.periodic)

    def deriv1(self, f, backend: Backend = Backend.FD4) -> np.ndarray:
        """First derivative (order 2, 4 or spectral)."""
        return self.deriv(f, 1, backend)

    def deriv2(self, f, backend: Backend = Backend.FD4) -> np.ndarray:
        """Second derivative (order 2, 4 or spectral)."""
        return self.deriv(f, 2, backend)

    def deriv_masked(self, f, mask, order: int, backend: Backend = Backend.FD4) -> np.ndarray:
        """
        Derivative restricted to masked nodes.

        Each contiguous run of the mask is differentiated on its own with one-sided
        stencils at the run ends. Nodes outside the mask, and runs too short for the
        stencil, are NaN. Values outside the mask are never read.
        """
        backend = self._check_backend(backend)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.n,):
            raise DataError(f"mask has shape {mask.shape}, expected ({self.n},)")
        arr = np.asarray(f)
        out = np.full(self.n, np.nan, dtype=np.result_type(arr.dtype, float))
        if mask.all():
            return self.deriv(arr, order, backend)
        if backend == Backend.SPECTRAL:
            raise ConfigurationError("spectral derivative needs the whole periodic grid unmasked")
        if not np.all(np.isfinite(arr[mask])):
            raise DataError("field is non-finite on masked nodes")

        # Runs that wrap around a periodic grid are joined by rolling to a gap
        shift = 0
        if self.periodic and mask[0] and mask[-1]:
            shift = int(np.flatnonzero(~mask)[0])
        m = np.roll(mask, -shift)
        g = np.roll(arr, -shift)
        d = np.full(self.n, np.nan, dtype=out.dtype)
        width = STENCIL_WIDTH[(backend, order)]
        for start, stop in mask_runs(m):
            if stop - start < width:
                logger.debug(f"Skipping mask run of {stop - start} nodes (stencil needs {width})")
                continue
            d[start:stop] = fd_derivative(g[start:stop], self.dx, order, backend)
        return np.roll(d, shift)

    def integrate(self, f) -> float:
        """Trapezoid rule (bounded) or rectangle rule (periodic)."""
        f = self.check(f)
        if self.periodic:
            return float(np.sum(f) * self.dx)
        return float(self.dx * (np.sum(f) - 0.5 * (f[0] + f[-1])))

    def lowpass(self, f, fraction: float, order: int = 2) -> np.ndarray:
        """
        Exponential spectral filter exp(-36 (|k|/k_c)^order) with k_c = fraction * k_max.

        Damping reaches machine precision at k_c. Order 2 is a Gaussian smoothing
        without ringing; large orders approach a sharp cutoff. Periodic grids only.
        The filter is diagonal in k, so it commutes with the free propagator.
        """
        if not self.periodic:
            raise ConfigurationError("spectral filter requires a periodic grid")
        if not 0.0 < fraction <= 1.0:
            raise ConfigurationError(f"filter fraction must lie in (0, 1], got {fraction}")
        if order < 1:
            raise ConfigurationError(f"filter order must be >= 1, got {order}")
        f = self.check(f)
        k_c = fraction * self.k_max
        damping = np.exp(-36.0 * (np.abs(self.k) / k_c) ** order)
        out = np.fft.ifft(damping * np.fft.fft(f))
        return out if np.iscomplexobj(f) else out.real

    def spectral_tail(self, f, decade: float = 0.1) -> float:
        """Fraction of spectral energy carried by the top `decade` of |k| (periodic only)."""
        if not self.periodic:
            raise ConfigurationError("spectral tail requires a periodic grid")
        power = np.abs(np.fft.fft(self.check(f))) ** 2
        total = power.sum()
        if total == 0.0:
            return 0.0
        top = np.abs(self.k) >= (1.0 - decade) * self.k_max
        return float(power[top].sum() / total)

    def mirror_index(self) -> np.ndarray:
        """Index of the node at -x for each node; requires a grid symmetric about 0."""
        if not np.isclose(self.x_min, -self.x_max, rtol=0.0, atol=1e-12 * self.length):
            raise ConfigurationError(
                f"grid [{self.x_min}, {self.x_max}] is not symmetric about 0"
            )
        idx = np.arange(self.n)
        if self.periodic:
            return (self.n - idx) % self.n
        return self.n - 1 - idx

    def nearest(self, q: float) -> int:
        """Index of the node closest to q."""
        return int(np.argmin(np.abs(self.x - q)))

    def window_mask(self, half_width: Optional[float]) -> np.ndarray:
        """Nodes with |x| <= half_width (all nodes when half_width is None)."""
        if half_width is None:
            return np.ones(self.n, dtype=bool)
        return np.abs(self.x) <= half_width
