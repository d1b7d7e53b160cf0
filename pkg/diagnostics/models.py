"""
Data models for selftrap-lab output.
Summaries written next to the csv tables, and the diagnose report.
"""
from typing import Dict, List, Optional
from pydantic import BaseModel, Field
from enum import Enum


class CheckStatus(str, Enum):
    """Outcome of one invariant check."""
    PASSED = "PASSED"
    FAILED = "FAILED"


class ParamsInfo(BaseModel):
    """Physical constants; recorded in every summary so runs are self-describing."""
    hbar: float
    m: float
    beta: float
    lambda_: float = Field(..., alias="lambda")

    model_config = {"populate_by_name": True}


class GridInfo(BaseModel):
    x_min: float
    x_max: float
    n: int
    mode: str
    dx: float


class SolveSummary(BaseModel):
    """summary.json of `solve`."""
    u0: float
    U0: float
    params: ParamsInfo
    grid: GridInfo
    x_m: float
    x_m_uncertainty: float
    q_m: float
    q_m_uncertainty: float
    Z: float
    second_moment: float
    interpolation: str


class CompareSummary(BaseModel):
    """compare.json of `compare`."""
    sigma: float
    q_m: float
    peak_ratio: float = Field(..., description="rho_G(0) / rho(0)")
    second_moment: float
    params: ParamsInfo
    grid: GridInfo


class FocusingInfo(BaseModel):
    intervals: int
    violations: int
    max_rate: Optional[float] = None


class CausticInfo(BaseModel):
    """Extra fields of an `auto` phase run."""
    T0: float = Field(..., description="T_convexity of the zero-phase run, or its length when T0_is_lower_bound")
    T0_is_lower_bound: bool
    collapse_magnitude_reading: bool = Field(..., description="1/|theta0| <= T0")
    collapse_printed_reading: bool = Field(..., description="1/theta0 <= T0")
    bound_violations: int
    passed: bool


class EvolutionSummary(BaseModel):
    """evolution.json of `evolve`."""
    initial: str
    phase: str
    theta0: Optional[float] = None
    T_convexity: Optional[float] = None
    T_convexity_lower_bound: Optional[float] = None
    T_convexity_kind: str = Field(..., description="measured, or lower_bound when convexity held for the whole run")
    T_band: Dict[str, Optional[float]] = Field(default_factory=dict, description="T_convexity for eps_mask scaled by each factor")
    T_conventions: Dict[str, Optional[float]] = Field(
        default_factory=dict, description="T_convexity with the window and the filter switched off in turn"
    )
    t_near_caustic: Optional[float] = None
    caustic_bound: Optional[float] = Field(None, description="1/|theta0| when theta0 < 0")
    leaked: bool
    max_boundary_density: float
    status: str
    samples: int
    max_norm_drift: float
    max_spectral_tail: float
    focusing: FocusingInfo
    caustic: Optional[CausticInfo] = None
    params: ParamsInfo
    grid: GridInfo
    conventions: Dict[str, Optional[float]]


class CheckResult(BaseModel):
    name: str
    status: CheckStatus
    description: str
    detail: str


class DiagnoseReport(BaseModel):
    status: CheckStatus
    checks: List[CheckResult]

    @property
    def failed(self) -> List[CheckResult]:
        return [c for c in self.checks if c.status == CheckStatus.FAILED]
