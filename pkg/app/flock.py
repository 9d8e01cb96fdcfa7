"""Flock state, interaction kernels and the dispersion algebra shared by every other module."""

from dataclasses import dataclass
from typing import Annotated, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.distance import cdist


class KernelDomainError(ValueError):
    """Raised when a kernel is evaluated at a negative distance."""

    pass


class InvalidStateError(ValueError):
    """Raised when positions and velocities do not form a valid flock state."""

    pass


class WeightMatrixError(ValueError):
    """Raised when a weight matrix has the wrong shape or is not symmetric."""

    pass


class PowerLawKernel(BaseModel):
    """The communication rate a(r) = (1 + r^2)^(-delta)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["power_law"] = "power_law"
    delta: float = Field(1.0, ge=0.0, description="Decay exponent of the communication rate")

    @property
    def upper_bound(self) -> float:
        return 1.0


class TabulatedKernel(BaseModel):
    """A non-increasing kernel given by samples, linearly interpolated and held constant past the last radius."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["tabulated"] = "tabulated"
    radii: list[float] = Field(..., min_length=1, description="Sample radii, starting at 0 and strictly increasing")
    values: list[float] = Field(..., min_length=1, description="Kernel values at the sample radii")

    @model_validator(mode="after")
    def _check_samples(self) -> "TabulatedKernel":
        radii = np.asarray(self.radii, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if radii.shape != values.shape:
            raise ValueError("radii and values must have the same length")
        if radii[0] != 0.0:
            raise ValueError("the first sample radius must be 0")
        if np.any(np.diff(radii) <= 0.0):
            raise ValueError("sample radii must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise ValueError("kernel values must be finite and non-negative")
        if np.any(np.diff(values) > 0.0):
            raise ValueError("kernel values must be non-increasing")
        return self

    @property
    def upper_bound(self) -> float:
        return float(self.values[0])

    @property
    def tail_value(self) -> float:
        return float(self.values[-1])


KernelSpec = Annotated[Union[PowerLawKernel, TabulatedKernel], Field(discriminator="kind")]


@dataclass(frozen=True)
class FlockState:
    """Positions and velocities of N agents in d dimensions.

    Arrays are copied to float64 and frozen on construction, so a state can be
    shared freely between workers.
    """

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        positions = np.array(self.positions, dtype=np.float64)
        velocities = np.array(self.velocities, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[0] < 1 or positions.shape[1] < 1:
            raise InvalidStateError(f"positions must be an N x d array, got shape {positions.shape}")
        if positions.shape != velocities.shape:
            raise InvalidStateError(
                f"positions {positions.shape} and velocities {velocities.shape} must have the same shape"
            )
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(velocities))):
            raise InvalidStateError("positions and velocities must be finite")
        positions.setflags(write=False)
        velocities.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "velocities", velocities)

    @classmethod
    def unchecked(cls, positions: np.ndarray, velocities: np.ndarray) -> "FlockState":
        """Wrap float64 N x d arrays as they are, without copying or validation (RK stages)."""
        state = object.__new__(cls)
        object.__setattr__(state, "positions", positions)
        object.__setattr__(state, "velocities", velocities)
        return state

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def mean_velocity(self) -> np.ndarray:
        return self.velocities.mean(axis=0)


@dataclass(frozen=True)
class DispersionPair:
    """Position spread X and velocity spread V of a flock."""

    X: float
    V: float


def eval_kernel(kernel: KernelSpec, r):
    """Evaluate a(r) for a scalar or an array of non-negative distances."""
    r_arr = np.asarray(r, dtype=np.float64)
    if np.any(r_arr < 0.0) or np.any(np.isnan(r_arr)):
        raise KernelDomainError("kernel distances must be non-negative")

    if kernel.kind == "power_law":
        values = np.power(1.0 + r_arr * r_arr, -kernel.delta)
    else:
        values = np.interp(r_arr, kernel.radii, kernel.values, right=kernel.tail_value)

    if np.ndim(r) == 0:
        return float(values)
    return values


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix r_ij."""
    return cdist(positions, positions)


def deviations(vectors: np.ndarray) -> np.ndarray:
    """Deviation of every vector from the arithmetic mean."""
    vectors = np.asarray(vectors, dtype=np.float64)
    return vectors - vectors.mean(axis=0)


def deviation_energy(vectors: np.ndarray) -> float:
    """(1/N) sum_i |a_i - mean|^2."""
    dev = deviations(vectors)
    return float(np.sum(dev * dev) / dev.shape[0])


def pairwise_energy(vectors: np.ndarray) -> float:
    """(1/2N^2) sum_ij |a_i - a_j|^2, evaluated by the double sum."""
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    diff = vectors[:, None, :] - vectors[None, :, :]
    return float(np.sum(diff * diff) / (2.0 * n * n))


def dispersion(state: FlockState) -> DispersionPair:
    return DispersionPair(X=deviation_energy(state.positions), V=deviation_energy(state.velocities))


def dispersion_pairwise(state: FlockState) -> DispersionPair:
    """Same quantities as dispersion(), through the O(N^2) pairwise definition."""
    return DispersionPair(X=pairwise_energy(state.positions), V=pairwise_energy(state.velocities))


def distance_bound(state: FlockState) -> float:
    """Upper bound sqrt(2 N X) on every pairwise distance."""
    return float(np.sqrt(2.0 * state.N * dispersion(state).X))


def check_weights(weights: np.ndarray, n: int, symmetric: bool = False) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n, n):
        raise WeightMatrixError(f"weights must have shape ({n}, {n}), got {weights.shape}")
    if symmetric and not np.array_equal(weights, weights.T):
        raise WeightMatrixError("weights must be symmetric")
    return weights


def weighted_alignment_quadratic(weights: np.ndarray, vectors: np.ndarray) -> Tuple[float, float]:
    """Both sides of the symmetric-weights alignment identity.

    lhs = (1/N^2) sum_ij w_ij <a_j - a_i, a_i>
    rhs = -(1/2N^2) sum_ij w_ij |a_i - a_j|^2

    The two agree for every symmetric w; the pair is returned so callers can
    compare them.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    weights = check_weights(weights, n, symmetric=True)

    diff = vectors[None, :, :] - vectors[:, None, :]  # diff[i, j] = a_j - a_i
    inner = np.einsum("ijk,ik->ij", diff, vectors)
    lhs = float(np.sum(weights * inner) / (n * n))
    sq = np.sum(diff * diff, axis=2)
    rhs = float(-np.sum(weights * sq) / (2.0 * n * n))
    return lhs, rhs
