"""Sufficient conditions for consensus expressed through the initial spreads (X0, V0).

Both certificates compare sqrt(V0) with an improper integral starting at
sqrt(X0). Integrals that diverge are decided from the exponent of the
integrand and reported as +inf; a divergent left-hand side means the
condition holds for every initial configuration.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import quad
from scipy.special import beta as beta_fn
from scipy.special import betainc

from .controllers import ChiRadius, PsiPowerLaw, PsiRTheta
from .flock import KernelDomainError, KernelSpec, PowerLawKernel, eval_kernel

logger = logging.getLogger(__name__)

QUAD_TOL = 1e-10
R_MAX_FLOOR = 1e3


class QuadratureToleranceError(RuntimeError):
    """Raised when adaptive quadrature cannot reach the requested tolerance."""

    def __init__(self, achieved_error: float):
        self.achieved_error = achieved_error
        super().__init__(f"quadrature error estimate {achieved_error:.3e} exceeds tolerance {QUAD_TOL:.1e}")


class DivergentFamilyError(ValueError):
    """Raised when a psi family has no finite far-field integral (theta <= 1)."""

    pass


class NoControlFamily(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["none"] = "none"


CertificateFamily = Annotated[
    Union[NoControlFamily, ChiRadius, PsiRTheta, PsiPowerLaw],
    Field(discriminator="kind"),
]


class CertificateQuery(BaseModel):
    """One (N, X0, V0, kernel, feedback family) question."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    N: int = Field(..., ge=1, description="Number of agents")
    X0: float = Field(..., ge=0.0, description="Initial position spread")
    V0: float = Field(..., ge=0.0, description="Initial velocity spread")
    kernel: KernelSpec = Field(default_factory=PowerLawKernel)
    gamma: float = Field(0.0, ge=0.0, description="Feedback strength")
    family: CertificateFamily = Field(default_factory=NoControlFamily)
    eta_bound: Optional[float] = Field(None, description="Bound on the sup of the normalizer eta; defaults to N")

    @model_validator(mode="after")
    def _check_eta(self) -> "CertificateQuery":
        if self.eta_bound is not None and not 1.0 <= self.eta_bound <= self.N:
            raise ValueError("eta_bound must lie in [1, N]")
        return self

    @property
    def eta(self) -> float:
        return float(self.N) if self.eta_bound is None else float(self.eta_bound)


class Verdict(str, Enum):
    HOLDS = "holds"
    FAILS = "fails"
    UNCONDITIONAL = "unconditional"


@dataclass(frozen=True)
class CertificateResult:
    verdict: Verdict
    lhs: float
    rhs: float
    margin: float


def arctan_tail(lower: float, N: int) -> float:
    """Closed form of the tail integral for delta = 1."""
    c = math.sqrt(2.0 * N)
    return (math.pi / 2.0 - math.atan(c * lower)) / c


def power_tail_closed_form(exponent: float, lower: float, N: int) -> float:
    """int_lower^inf (1 + 2 N r^2)^(-exponent) dr through the incomplete beta function."""
    if exponent <= 0.5:
        return math.inf
    c = math.sqrt(2.0 * N)
    s = c * lower
    z = 1.0 / (1.0 + s * s)
    a = exponent - 0.5
    return float(0.5 * beta_fn(a, 0.5) * betainc(a, 0.5, z) / c)


def _quad(func, a: float, b: float, points=None) -> float:
    if b <= a:
        return 0.0
    value, error = quad(func, a, b, epsabs=QUAD_TOL / 10.0, epsrel=1e-13, limit=500, points=points)
    if error > QUAD_TOL:
        raise QuadratureToleranceError(error)
    return value


def _power_tail(exponent: float, lower: float, N: int) -> float:
    if exponent <= 0.5:
        return math.inf
    c = math.sqrt(2.0 * N)
    r_max = max(lower, R_MAX_FLOOR)
    head = _quad(lambda r: (1.0 + c * c * r * r) ** (-exponent), lower, r_max)
    return head + power_tail_closed_form(exponent, r_max, N)


def kernel_tail_integral(kernel: KernelSpec, lower: float, N: int) -> float:
    """int_lower^inf a(sqrt(2N) r) dr, or +inf when the integral diverges.

    A tabulated kernel holds its last sample past the last radius, the same
    extrapolation eval_kernel() uses during integration. A positive last
    sample therefore gives a divergent tail; a table ending at 0 is zero
    beyond its last radius and integrates to a finite value.
    """
    if lower < 0.0:
        raise KernelDomainError("lower integration limit must be non-negative")

    if kernel.kind == "power_law":
        return _power_tail(kernel.delta, lower, N)

    if kernel.tail_value > 0.0:
        return math.inf
    c = math.sqrt(2.0 * N)
    end = kernel.radii[-1] / c
    kinks = [r / c for r in kernel.radii if lower < r / c < end]
    return _quad(lambda r: eval_kernel(kernel, c * r), lower, end, points=kinks or None)


def check_family(family: CertificateFamily) -> None:
    """Reject families the certificate is not defined for, whatever the feedback strength."""
    if family.kind == "psi_r_theta" and family.theta <= 1.0:
        raise DivergentFamilyError(f"psi_r_theta needs theta > 1, got {family.theta}")


def psi_tail_integral(family: CertificateFamily, lower: float, N: int) -> float:
    """int_lower^inf psi(sqrt(2N) r) dr for the feedback family."""
    check_family(family)
    c = math.sqrt(2.0 * N)
    if family.kind == "none":
        return 0.0
    if family.kind == "power_law":
        return _power_tail(family.epsilon, lower, N)
    if math.isinf(family.R):
        return math.inf

    near = max(0.0, family.R / c - lower)
    if family.kind == "chi_radius":
        return near

    theta = family.theta
    if c * lower <= family.R:
        return near + 1.0 / (c * (theta - 1.0))
    return (c * lower - family.R + 1.0) ** (1.0 - theta) / (c * (theta - 1.0))


def certificate_lhs(
    N: int,
    X0: float,
    kernel: KernelSpec,
    gamma: float = 0.0,
    family: Optional[CertificateFamily] = None,
    eta_bound: Optional[float] = None,
) -> float:
    """Left-hand side of the extended condition; +inf when it diverges."""
    family = family or NoControlFamily()
    check_family(family)
    lower = math.sqrt(X0)
    total = kernel_tail_integral(kernel, lower, N)
    if gamma == 0.0:
        return total
    feedback = psi_tail_integral(family, lower, N)
    if feedback > 0.0:
        eta = float(N) if eta_bound is None else eta_bound
        total += gamma * N / eta * feedback
    return total


def _result(lhs: float, V0: float) -> CertificateResult:
    rhs = math.sqrt(V0)
    if math.isinf(lhs):
        return CertificateResult(verdict=Verdict.UNCONDITIONAL, lhs=lhs, rhs=rhs, margin=math.inf)
    margin = lhs - rhs
    verdict = Verdict.HOLDS if margin >= 0.0 else Verdict.FAILS
    return CertificateResult(verdict=verdict, lhs=lhs, rhs=rhs, margin=margin)


def hhk_certificate(N: int, X0: float, V0: float, kernel: KernelSpec) -> CertificateResult:
    """Baseline condition for the uncontrolled flock."""
    if X0 < 0.0 or V0 < 0.0:
        raise ValueError("X0 and V0 must be non-negative")
    return _result(kernel_tail_integral(kernel, math.sqrt(X0), N), V0)


def extended_certificate(query: CertificateQuery) -> CertificateResult:
    """Condition for the locally normalized feedback with interaction family psi."""
    lhs = certificate_lhs(query.N, query.X0, query.kernel, query.gamma, query.family, query.eta)
    result = _result(lhs, query.V0)
    logger.debug("Certificate %s: lhs=%.12g rhs=%.12g", result.verdict.value, result.lhs, result.rhs)
    return result


def certified_boundary(
    N: int,
    kernel: KernelSpec,
    gamma: float,
    family: CertificateFamily,
    X_grid,
    eta_bound: Optional[float] = None,
) -> np.ndarray:
    """Largest certified V0 for every X0 of the grid (+inf where the condition is unconditional)."""
    X_grid = np.asarray(X_grid, dtype=np.float64)
    if np.any(X_grid < 0.0) or np.any(np.diff(X_grid) <= 0.0):
        raise ValueError("X_grid must be non-negative and strictly increasing")
    lhs = np.array([certificate_lhs(N, float(x), kernel, gamma, family, eta_bound) for x in X_grid])
    return lhs * lhs
