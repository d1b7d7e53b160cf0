"""
Validated physical parameter models shared by the physics modules.
"""
import math

from pydantic import BaseModel, ConfigDict, Field


class PhysParams(BaseModel):
    """Physical constants of a run (hbar, mass, inverse temperature-like beta)."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    hbar: float = Field(1.0, gt=0, allow_inf_nan=False, description="Reduced Planck constant")
    m: float = Field(1.0, gt=0, allow_inf_nan=False, description="Particle mass")
    beta: float = Field(1.0, gt=0, allow_inf_nan=False, description="Inverse energy scale of rho ~ exp(-beta U)")

    @property
    def lam(self) -> float:
        """Inverse length scale sqrt(4 m / (hbar^2 beta)) of the self-trap equation."""
        return math.sqrt(4.0 * self.m / (self.hbar ** 2 * self.beta))

    def describe(self) -> dict:
        """Parameters plus the derived Lambda, as written to summary files."""
        return {"hbar": self.hbar, "m": self.m, "beta": self.beta, "lambda": self.lam}


class GaussianSpec(BaseModel):
    """Free Gaussian packet, width sigma at t = 0."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma: float = Field(..., gt=0, allow_inf_nan=False)
    params: PhysParams = PhysParams()

    def tau(self, t: float) -> float:
        """Dimensionless spreading time hbar t / (2 m sigma^2)."""
        return self.params.hbar * t / (2.0 * self.params.m * self.sigma ** 2)

    def sigma_t2(self, t: float) -> float:
        """Squared width sigma^2 + hbar^2 t^2 / (4 m^2 sigma^2)."""
        hbar, m = self.params.hbar, self.params.m
        return self.sigma ** 2 + hbar ** 2 * t ** 2 / (4.0 * m ** 2 * self.sigma ** 2)
