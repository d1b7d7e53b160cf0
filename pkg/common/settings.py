"""
Run configuration: TOML file plus `--set section.key=value` overrides,
validated by pydantic models that reject unknown keys.
"""
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from common.errors import ConfigurationError
from common.grid import Backend, GridMode
from physics.params import PhysParams
from physics.selftrap import (
    DEFAULT_ATOL, DEFAULT_NODE_SPACING, DEFAULT_RHO_FLOOR, DEFAULT_RTOL, DEFAULT_X_LIMIT, Interpolation,
)

logger = logging.getLogger(__name__)

DEFAULT_OUT_DIR = "out"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SelfTrapSection(Section):
    u0: Optional[float] = None
    rtol: float = Field(DEFAULT_RTOL, gt=0)
    atol: float = Field(DEFAULT_ATOL, gt=0)
    rho_floor: float = Field(DEFAULT_RHO_FLOOR, gt=0, lt=1)
    x_limit: float = Field(DEFAULT_X_LIMIT, gt=0)
    node_spacing: float = Field(DEFAULT_NODE_SPACING, gt=0)
    interpolation: Interpolation = Interpolation.DIRECT

    def solver_options(self) -> Dict[str, float]:
        return {
            "rtol": self.rtol, "atol": self.atol, "rho_floor": self.rho_floor,
            "x_limit": self.x_limit, "node_spacing": self.node_spacing,
        }


SOLVE_POINTS = 40001   # odd so q = 0 is a node
EVOLVE_POINTS = 8192   # even for the spectral derivatives


class GridSection(Section):
    n: Optional[int] = Field(None, ge=8, description="defaults to 40001 for solve/compare, 8192 for evolve")
    mode: GridMode = GridMode.BOUNDED
    half_width: Optional[float] = Field(None, gt=0)
    padding: float = Field(1.2, ge=1.0, description="half-width in units of the support half-width when half_width is unset")

    def points(self, evolve: bool = False) -> int:
        if self.n is not None:
            return self.n
        return EVOLVE_POINTS if evolve else SOLVE_POINTS


class InitialState(str, Enum):
    SELFTRAP = "selftrap"
    GAUSSIAN = "gaussian"


class EvolveSection(Section):
    initial: InitialState = InitialState.SELFTRAP
    sigma: float = Field(1.0, gt=0, description="Gaussian width at t=0")
    dt: float = Field(1e-4, gt=0)
    t_end: float = Field(4e-3, ge=0)
    observer_stride: int = Field(5, ge=1)
    theta_blowup_threshold: float = -1e3
    boundary_leak_tol: float = Field(1e-8, gt=0)
    eps_mask: float = Field(1e-10, gt=0)
    eps_velocity: float = Field(1e-8, gt=0)
    edge_width: int = Field(5, ge=0)
    window: Optional[float] = Field(None, gt=0)
    core_fraction: Optional[float] = Field(None, gt=0, lt=1)
    filter_fraction: Optional[float] = Field(None, gt=0, le=1)
    filter_order: int = Field(2, ge=1)
    potential_backend: Backend = Backend.FD4
    velocity_backend: Optional[Backend] = None
    trace_count: int = Field(24, ge=1)
    trace_span: float = Field(0.9, gt=0, le=1)
    snapshot_files: bool = False
    bound_tol: float = Field(0.1, gt=0)
    caustic_safety: float = Field(0.8, gt=0, le=0.8)
    caustic_threshold_factor: float = Field(10.0, gt=1)
    caustic_steps: int = Field(50, ge=4)


class PhaseKindOption(str, Enum):
    ZERO = "zero"
    QUADRATIC = "quadratic"
    CUSTOM = "custom"
    AUTO = "auto"  # quadratic phase chosen from the measured convexity time


class PhaseSection(Section):
    kind: PhaseKindOption = PhaseKindOption.ZERO
    a: float = 0.0
    file: Optional[str] = Field(None, description="csv with columns q,S for a custom phase")


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


class OutputSection(Section):
    dir: Optional[str] = None
    formats: List[OutputFormat] = [OutputFormat.CSV, OutputFormat.JSON]

    @property
    def path(self) -> Path:
        return Path(self.dir or os.environ.get("SELFTRAP_LAB_OUT", DEFAULT_OUT_DIR))

    def wants(self, fmt: OutputFormat) -> bool:
        return fmt in self.formats


class RunConfig(Section):
    """Complete configuration of one command."""
    physics: PhysParams = PhysParams()
    selftrap: SelfTrapSection = SelfTrapSection()
    grid: GridSection = GridSection()
    evolve: EvolveSection = EvolveSection()
    phase: PhaseSection = PhaseSection()
    output: OutputSection = OutputSection()


def parse_override(item: str) -> Tuple[List[str], Any]:
    """Split `section.key=value`; the value is read as a TOML scalar when possible."""
    if "=" not in item:
        raise ConfigurationError(f"override '{item}' is not of the form section.key=value")
    key, raw = item.split("=", 1)
    path = [part.strip() for part in key.strip().split(".")]
    if len(path) < 2 or not all(path):
        raise ConfigurationError(f"override key '{key}' must name section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return path, value


def _set(data: Dict[str, Any], path: Sequence[str], value: Any):
    node = data
    for part in path[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigurationError(f"'{'.'.join(path)}': '{part}' is not a section")
        node = child
    node[path[-1]] = value


def _describe(error: ValidationError) -> str:
    first = error.errors()[0]
    key = ".".join(str(p) for p in first["loc"])
    extra = f" ({len(error.errors()) - 1} more)" if len(error.errors()) > 1 else ""
    return f"{key}: {first['msg']}{extra}"


def load_config(path: Optional[str] = None, overrides: Sequence[str] = (),
                out: Optional[str] = None) -> RunConfig:
    """
    Load and validate a run configuration.

    Args:
        path: Optional TOML file
        overrides: `section.key=value` strings applied after the file
        out: Output directory overriding output.dir

    Returns:
        Validated RunConfig

    Raises:
        ConfigurationError: unreadable file, bad override or invalid value (message names the key)
    """
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except OSError as e:
            raise ConfigurationError(f"cannot read config {path}: {e}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"config {path} is not valid TOML: {e}")
        logger.info(f"Loaded configuration from {path}")

    for item in overrides:
        key, value = parse_override(item)
        _set(data, key, value)
        logger.debug(f"Override {'.'.join(key)} = {value!r}")
    if out is not None:
        _set(data, ["output", "dir"], out)

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(_describe(e))
