"""Feedback laws u_i(x, v) and the weight diagnostics used to certify them."""

from dataclasses import dataclass
from typing import Annotated, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .flock import FlockState, check_weights, deviations, pairwise_distances


class LeaderIndexError(ValueError):
    """Raised when the leader index does not name an agent of the flock."""

    pass


class UndefinedRatioError(ValueError):
    """Raised when a decay bound needs alpha/beta but beta is zero."""

    pass


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# Interaction families psi used by the local feedback and by the extended certificate.


class ChiRadius(_Frozen):
    kind: Literal["chi_radius"] = "chi_radius"
    R: float = Field(..., ge=0.0, description="Radius of the communication ball (may be inf)")


class PsiRTheta(_Frozen):
    kind: Literal["psi_r_theta"] = "psi_r_theta"
    R: float = Field(..., ge=0.0, description="Radius of full communication")
    theta: float = Field(..., gt=0.0, description="Decay exponent of the far-field communication")


class PsiPowerLaw(_Frozen):
    kind: Literal["power_law"] = "power_law"
    epsilon: float = Field(..., ge=0.0, description="Exponent of (1 + r^2)^(-epsilon)")


PsiFamily = Annotated[Union[ChiRadius, PsiRTheta, PsiPowerLaw], Field(discriminator="kind")]


# Deviation rules for the general perturbed feedback alpha (vbar - v_i) + beta Delta_i.


class ConstantDelta(_Frozen):
    """The same deviation vector for every agent."""

    kind: Literal["constant"] = "constant"
    vector: list[float] = Field(..., min_length=1)


class ScaledDeviationDelta(_Frozen):
    """Delta_i = eps_i v_i_perp, with one eps shared or one per agent."""

    kind: Literal["scaled_deviation"] = "scaled_deviation"
    epsilon: Union[float, list[float]] = Field(..., description="Scale factor(s), non-negative")

    @model_validator(mode="after")
    def _check_epsilon(self) -> "ScaledDeviationDelta":
        if np.any(np.asarray(self.epsilon, dtype=float) < 0.0):
            raise ValueError("epsilon must be non-negative")
        return self


class TabulatedDelta(_Frozen):
    """A time series of deviations, linearly interpolated and held constant outside the table."""

    kind: Literal["tabulated"] = "tabulated"
    times: list[float] = Field(..., min_length=1)
    values: list = Field(..., description="Array of shape (len(times), d) or (len(times), N, d)")

    @model_validator(mode="after")
    def _check_table(self) -> "TabulatedDelta":
        values = np.asarray(self.values, dtype=float)
        if values.ndim not in (2, 3) or values.shape[0] != len(self.times):
            raise ValueError("values must have shape (len(times), d) or (len(times), N, d)")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        return self


DeltaProvider = Annotated[Union[ConstantDelta, ScaledDeviationDelta, TabulatedDelta], Field(discriminator="kind")]


# Controller variants.


class NoControl(_Frozen):
    kind: Literal["none"] = "none"


class UniformControl(_Frozen):
    kind: Literal["uniform"] = "uniform"
    gamma: float = Field(1.0, ge=0.0, description="Strength of the alignment towards the true mean")


class LeaderControl(_Frozen):
    kind: Literal["leader"] = "leader"
    gamma: float = Field(1.0, ge=0.0)
    q: float = Field(..., gt=0.0, le=1.0, description="Weight of the leader velocity in each local mean")
    leader_index: int = Field(0, ge=0)


class WeightedPerturbationControl(_Frozen):
    kind: Literal["weighted"] = "weighted"
    alpha: float = Field(..., ge=0.0)
    beta: float = Field(..., ge=0.0)
    epsilon: float = Field(..., ge=0.0, description="Exponent of phi(r) = (1 + r^2)^(-epsilon)")
    normalization: Literal["max_row", "per_agent"] = "max_row"


class LocalRadiusControl(_Frozen):
    kind: Literal["local"] = "local"
    gamma: float = Field(1.0, ge=0.0)
    R: float = Field(..., ge=0.0, description="Radius of the neighbourhood (may be inf)")
    normalization: Literal["exact", "max_eta"] = "max_eta"


class PsiFeedbackControl(_Frozen):
    kind: Literal["psi"] = "psi"
    gamma: float = Field(1.0, ge=0.0)
    family: PsiFamily
    eta_mode: Literal["max", "min"] = "max"


class GeneralPerturbedControl(_Frozen):
    kind: Literal["perturbed"] = "perturbed"
    alpha: float = Field(..., ge=0.0)
    beta: float = Field(..., ge=0.0)
    delta: DeltaProvider


ControllerSpec = Annotated[
    Union[
        NoControl,
        UniformControl,
        LeaderControl,
        WeightedPerturbationControl,
        LocalRadiusControl,
        PsiFeedbackControl,
        GeneralPerturbedControl,
    ],
    Field(discriminator="kind"),
]


@dataclass(frozen=True)
class WeightDiagnostics:
    """Quantities I, S of the weighted decay estimate and the bounds built from them."""

    I: float
    S: float
    decay_bound: Optional[float] = None
    decay_bound_normalized: Optional[float] = None
    stochastic_margin: Optional[float] = None


def control_uniform(state: FlockState, gamma: float) -> np.ndarray:
    return gamma * (state.mean_velocity() - state.velocities)


def control_leader(state: FlockState, gamma: float, q: float, leader: int) -> np.ndarray:
    """u_i = gamma (vbar_i - v_i) with vbar_i = (1 - q) v_i + q v_leader."""
    if not 0 <= leader < state.N:
        raise LeaderIndexError(f"leader index {leader} out of range for {state.N} agents")
    return gamma * q * (state.velocities[leader] - state.velocities)


def _distances(state: FlockState, distances: Optional[np.ndarray]) -> np.ndarray:
    return pairwise_distances(state.positions) if distances is None else distances


def phi_matrix(state: FlockState, epsilon: float, distances: Optional[np.ndarray] = None) -> np.ndarray:
    r = _distances(state, distances)
    return np.power(1.0 + r * r, -epsilon)


def build_weights_phi(
    state: FlockState,
    epsilon: float,
    normalization: str = "max_row",
    distances: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Weights phi(r_ij) / eta.

    With max_row, eta is the largest row sum of phi, so the matrix stays
    symmetric and its largest row sum is exactly 1. With per_agent, row i is
    divided by its own mean (1/N) sum_j phi(r_ij), which breaks symmetry.
    """
    phi = phi_matrix(state, epsilon, distances)
    row_sums = phi.sum(axis=1)
    if normalization == "max_row":
        return phi / row_sums.max()
    if normalization == "per_agent":
        return phi / (row_sums[:, None] / state.N)
    raise ValueError(f"unknown normalization {normalization!r}")


def control_weighted(state: FlockState, alpha: float, beta: float, weights: np.ndarray) -> np.ndarray:
    """u_i = alpha (vbar - v_i) + beta sum_j w_ij v_j_perp."""
    weights = check_weights(weights, state.N)
    return alpha * (state.mean_velocity() - state.velocities) + beta * (weights @ deviations(state.velocities))


def neighbourhood(state: FlockState, R: float, distances: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean matrix of r_ij <= R; the diagonal is always set."""
    return _distances(state, distances) <= R


def local_mean(state: FlockState, R: float, distances: Optional[np.ndarray] = None) -> np.ndarray:
    mask = neighbourhood(state, R, distances).astype(np.float64)
    return (mask @ state.velocities) / mask.sum(axis=1)[:, None]


def eval_psi(family: PsiFamily, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if family.kind == "chi_radius":
        return (r <= family.R).astype(np.float64)
    if family.kind == "psi_r_theta":
        far = np.power(np.maximum(r - family.R, 0.0) + 1.0, -family.theta)
        return np.where(r <= family.R, 1.0, far)
    return np.power(1.0 + r * r, -family.epsilon)


def psi_weights(state: FlockState, family: PsiFamily, distances: Optional[np.ndarray] = None) -> np.ndarray:
    return eval_psi(family, _distances(state, distances))


def control_psi(
    state: FlockState,
    gamma: float,
    family: PsiFamily,
    eta_mode: str = "max",
    distances: Optional[np.ndarray] = None,
) -> np.ndarray:
    """u_i = (gamma / eta) sum_j psi(r_ij) (v_j - v_i) with a common normalizer eta."""
    psi = psi_weights(state, family, distances)
    row_sums = psi.sum(axis=1)
    eta = row_sums.max() if eta_mode == "max" else row_sums.min()
    v = state.velocities
    return (gamma / eta) * (psi @ v - row_sums[:, None] * v)


def control_local(
    state: FlockState,
    gamma: float,
    R: float,
    mode: str = "max_eta",
    distances: Optional[np.ndarray] = None,
) -> np.ndarray:
    if mode == "exact":
        return gamma * (local_mean(state, R, distances) - state.velocities)
    if mode == "max_eta":
        return control_psi(state, gamma, ChiRadius(R=R), "max", distances)
    raise ValueError(f"unknown local normalization {mode!r}")


def delta_values(provider: DeltaProvider, state: FlockState, t: float) -> np.ndarray:
    """Per-agent deviation Delta_i(t) as an N x d array."""
    shape = (state.N, state.d)
    if provider.kind == "constant":
        return np.broadcast_to(np.asarray(provider.vector, dtype=np.float64), shape).copy()
    if provider.kind == "scaled_deviation":
        eps = np.asarray(provider.epsilon, dtype=np.float64)
        return np.reshape(eps, (-1, 1)) * deviations(state.velocities)

    times = np.asarray(provider.times, dtype=np.float64)
    values = np.asarray(provider.values, dtype=np.float64)
    flat = values.reshape(len(times), -1)
    row = np.array([np.interp(t, times, flat[:, k]) for k in range(flat.shape[1])])
    return np.broadcast_to(row.reshape(values.shape[1:]), shape).copy()


def controller_shape_errors(controller: ControllerSpec, N: int, d: int) -> list[Tuple[Tuple[str, ...], str]]:
    """Parameters that do not fit a flock of N agents in d dimensions, as (field path, message) pairs."""
    if controller.kind == "leader" and controller.leader_index >= N:
        return [(("leader_index",), f"leader_index {controller.leader_index} out of range for N={N}")]
    if controller.kind != "perturbed":
        return []

    provider = controller.delta
    if provider.kind == "constant" and len(provider.vector) != d:
        return [(("delta", "vector"), f"vector has {len(provider.vector)} entries, expected d={d}")]
    if provider.kind == "scaled_deviation" and isinstance(provider.epsilon, list) and len(provider.epsilon) != N:
        return [(("delta", "epsilon"), f"epsilon has {len(provider.epsilon)} entries, expected N={N}")]
    if provider.kind == "tabulated":
        shape = np.shape(provider.values)[1:]
        if shape not in ((d,), (N, d)):
            return [(("delta", "values"), f"table rows have shape {shape}, expected ({d},) or ({N}, {d})")]
    return []


def control_perturbed(state: FlockState, alpha: float, beta: float, delta: np.ndarray) -> np.ndarray:
    return alpha * (state.mean_velocity() - state.velocities) + beta * delta


def compute_control(
    state: FlockState,
    controller: ControllerSpec,
    t: float = 0.0,
    distances: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Evaluate the feedback selected by a ControllerSpec at time t.

    distances may carry the r_ij matrix of the state when the caller already has it.
    """
    kind = controller.kind
    if kind == "none":
        return np.zeros_like(state.velocities)
    if kind == "uniform":
        return control_uniform(state, controller.gamma)
    if kind == "leader":
        return control_leader(state, controller.gamma, controller.q, controller.leader_index)
    if kind == "weighted":
        weights = build_weights_phi(state, controller.epsilon, controller.normalization, distances)
        return control_weighted(state, controller.alpha, controller.beta, weights)
    if kind == "local":
        return control_local(state, controller.gamma, controller.R, controller.normalization, distances)
    if kind == "psi":
        return control_psi(state, controller.gamma, controller.family, controller.eta_mode, distances)
    if kind == "perturbed":
        delta = delta_values(controller.delta, state, t)
        return control_perturbed(state, controller.alpha, controller.beta, delta)
    raise ValueError(f"unknown controller kind {kind!r}")


def perturbation_form(state: FlockState, controller: ControllerSpec, t: float = 0.0) -> Tuple[float, float, np.ndarray]:
    """Rewrite a controller as alpha (vbar - v_i) + beta Delta_i and return (alpha, beta, Delta)."""
    zeros = np.zeros_like(state.velocities)
    kind = controller.kind
    if kind == "none":
        return 0.0, 0.0, zeros
    if kind == "uniform":
        return controller.gamma, 0.0, zeros
    if kind == "leader":
        if not 0 <= controller.leader_index < state.N:
            raise LeaderIndexError(f"leader index {controller.leader_index} out of range for {state.N} agents")
        dev = deviations(state.velocities)
        delta = (1.0 - controller.q) * dev + controller.q * dev[controller.leader_index]
        return controller.gamma, controller.gamma, delta
    if kind == "weighted":
        weights = build_weights_phi(state, controller.epsilon, controller.normalization)
        return controller.alpha, controller.beta, weights @ deviations(state.velocities)
    if kind == "perturbed":
        return controller.alpha, controller.beta, delta_values(controller.delta, state, t)

    # local and psi feedbacks: alpha = beta = gamma, Delta_i = u_i / gamma - (vbar - v_i)
    gamma = controller.gamma
    if gamma == 0.0:
        return 0.0, 0.0, zeros
    u = compute_control(state, controller, t)
    return gamma, gamma, u / gamma - (state.mean_velocity() - state.velocities)


def weight_diagnostics(
    weights: np.ndarray,
    alpha: float,
    beta: float,
    eta: Optional[float] = None,
    with_decay: bool = True,
) -> WeightDiagnostics:
    """I = min w_ij, S = max row sum, and the bound S - N I - alpha/beta.

    A negative decay_bound certifies exponential decay of V. When eta is given
    the normalized form S - N I - (alpha/beta) eta is reported as well.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.shape[0]
    low = float(weights.min())
    top = float(weights.sum(axis=1).max())
    if not with_decay:
        return WeightDiagnostics(I=low, S=top)
    if beta == 0.0:
        raise UndefinedRatioError("decay bound needs beta > 0")

    ratio = alpha / beta
    return WeightDiagnostics(
        I=low,
        S=top,
        decay_bound=top - n * low - ratio,
        decay_bound_normalized=None if eta is None else top - n * low - ratio * eta,
        stochastic_margin=low - (beta - alpha) / (n * beta),
    )


def phi_corollary_holds(N: int, alpha: float, beta: float, eta: float) -> bool:
    """Check 1 <= N beta / alpha <= eta."""
    if alpha <= 0.0:
        return False
    ratio = N * beta / alpha
    return 1.0 <= ratio <= eta


def mean_velocity_drift(state: FlockState, controller: ControllerSpec, t: float = 0.0) -> np.ndarray:
    """d/dt of the mean velocity, beta times the mean of Delta (alignment terms cancel pairwise)."""
    _, beta, delta = perturbation_form(state, controller, t)
    return beta * delta.mean(axis=0)
