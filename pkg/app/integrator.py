"""Fixed-step RK4 integration of the controlled flock and the decay monitor built on it."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .controllers import ControllerSpec, build_weights_phi, compute_control, perturbation_form, weight_diagnostics
from .flock import (
    FlockState,
    InvalidStateError,
    KernelDomainError,
    KernelSpec,
    deviation_energy,
    deviations,
    eval_kernel,
    pairwise_distances,
)

logger = logging.getLogger(__name__)


class IntegrationBlowupError(RuntimeError):
    """Raised when the integrated state stops being finite."""

    def __init__(self, step: int, message: Optional[str] = None):
        self.step = step
        super().__init__(message or f"integration produced a non-finite state at step {step}")


class SimConfig(BaseModel):
    """Time stepping and consensus criterion of a single simulation."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = Field(0.01, gt=0.0, description="RK4 time step")
    T: float = Field(20.0, gt=0.0, description="Integration horizon")
    record_stride: int = Field(10, ge=1, description="Record X, V and the mean velocity every this many steps")
    consensus_threshold: float = Field(1e-5, gt=0.0, description="Consensus is declared when V(T) is at most this")
    record_snapshots: bool = Field(False, description="Keep the full state at every recorded step")

    @model_validator(mode="after")
    def _check_horizon(self) -> "SimConfig":
        if self.dt > self.T:
            raise ValueError("dt must not exceed T")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ValueError(f"T={self.T} is not a whole number of steps of dt={self.dt}")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    X_series: np.ndarray
    V_series: np.ndarray
    mean_velocity_series: np.ndarray
    snapshots: Optional[Tuple[FlockState, ...]]
    consensus: bool
    first_crossing_time: Optional[float]
    final_state: FlockState


@dataclass(frozen=True)
class DecayReport:
    """Finite-difference dV/dt against the right-hand side of the V-decay estimate."""

    times: np.ndarray
    dV_dt: np.ndarray
    bound: np.ndarray
    residual: np.ndarray
    weighted_bound: Optional[np.ndarray]
    coarse: bool

    @property
    def max_residual(self) -> float:
        return float(self.residual.max())


def rhs(state: FlockState, kernel: KernelSpec, controller: ControllerSpec, t: float = 0.0):
    """Time derivative (dx/dt, dv/dt) of the controlled Cucker-Smale system."""
    v = state.velocities
    r = pairwise_distances(state.positions)
    rates = eval_kernel(kernel, r)
    alignment = (rates @ v - rates.sum(axis=1)[:, None] * v) / state.N
    return v.copy(), alignment + compute_control(state, controller, t, distances=r)


def rk4_increment(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float) -> np.ndarray:
    """One classical four-stage Runge-Kutta step for y' = f(t, y)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def rk4_step(
    state: FlockState,
    kernel: KernelSpec,
    controller: ControllerSpec,
    dt: float,
    t: float = 0.0,
    step: int = 0,
) -> FlockState:
    def f(time: float, y: np.ndarray) -> np.ndarray:
        dx, dv = rhs(FlockState.unchecked(y[0], y[1]), kernel, controller, time)
        return np.stack((dx, dv))

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            y = rk4_increment(f, t, np.stack((state.positions, state.velocities)), dt)
        return FlockState(y[0], y[1])
    except (InvalidStateError, KernelDomainError) as e:
        # a non-finite stage shows up as a NaN distance before the step completes
        logger.warning("Integration blew up at step %d (t=%.6g)", step, t)
        raise IntegrationBlowupError(step) from e


def simulate(initial: FlockState, kernel: KernelSpec, controller: ControllerSpec, config: SimConfig) -> Trajectory:
    """Integrate to the horizon T, recording X, V and the mean velocity every record_stride steps."""
    n_steps = config.n_steps
    threshold = config.consensus_threshold

    times, xs, vs, means, snapshots = [], [], [], [], []

    def record(state: FlockState, t: float):
        times.append(t)
        xs.append(deviation_energy(state.positions))
        vs.append(deviation_energy(state.velocities))
        means.append(state.mean_velocity())
        if config.record_snapshots:
            snapshots.append(state)

    state = initial
    record(state, 0.0)
    first_crossing = 0.0 if vs[0] <= threshold else None

    for step in range(1, n_steps + 1):
        state = rk4_step(state, kernel, controller, config.dt, (step - 1) * config.dt, step)
        t = step * config.dt
        if first_crossing is None and deviation_energy(state.velocities) <= threshold:
            first_crossing = t
        if step % config.record_stride == 0 or step == n_steps:
            record(state, t)

    V_final = deviation_energy(state.velocities)
    return Trajectory(
        times=np.asarray(times),
        X_series=np.asarray(xs),
        V_series=np.asarray(vs),
        mean_velocity_series=np.asarray(means),
        snapshots=tuple(snapshots) if config.record_snapshots else None,
        consensus=bool(V_final <= threshold),
        first_crossing_time=first_crossing,
        final_state=state,
    )


def decay_monitor(
    trajectory: Trajectory,
    kernel: KernelSpec,
    controller: ControllerSpec,
    max_spacing: float = 0.05,
) -> DecayReport:
    """Compare dV/dt along a recorded trajectory with its decay estimate.

    At every snapshot the bound is
        -2 a(sqrt(2 N X)) V - 2 alpha V + (2 beta / N) sum_i <Delta_i, v_i_perp>
    with (alpha, beta, Delta) from perturbation_form(). For the weighted
    feedback the estimate -2 a V + 2 beta (S - N I - alpha/beta) V is returned
    as well. Residuals dV/dt - bound should not exceed the finite-difference
    error of the recording stride.
    """
    if trajectory.snapshots is None:
        raise ValueError("decay_monitor needs a trajectory recorded with record_snapshots=True")
    if len(trajectory.times) < 3:
        raise ValueError("decay_monitor needs at least three recorded steps")

    times = trajectory.times
    coarse = bool(np.max(np.diff(times)) > max_spacing)
    if coarse:
        logger.warning("Recording stride %.3g is coarse for finite differences", float(np.max(np.diff(times))))

    V = trajectory.V_series
    dV_dt = np.gradient(V, times, edge_order=2)

    bound = np.empty_like(V)
    weighted = np.empty_like(V) if controller.kind == "weighted" and controller.beta > 0.0 else None
    for k, (t, snap) in enumerate(zip(times, trajectory.snapshots)):
        X_k = deviation_energy(snap.positions)
        V_k = deviation_energy(snap.velocities)
        a_min = eval_kernel(kernel, np.sqrt(2.0 * snap.N * X_k))
        alpha, beta, delta = perturbation_form(snap, controller, float(t))
        coupling = float(np.sum(delta * deviations(snap.velocities)))
        bound[k] = -2.0 * a_min * V_k - 2.0 * alpha * V_k + 2.0 * beta * coupling / snap.N
        if weighted is not None:
            weights = build_weights_phi(snap, controller.epsilon, controller.normalization)
            diag = weight_diagnostics(weights, controller.alpha, controller.beta)
            weighted[k] = -2.0 * a_min * V_k + 2.0 * controller.beta * diag.decay_bound * V_k

    return DecayReport(
        times=times,
        dV_dt=dV_dt,
        bound=bound,
        residual=dV_dt - bound,
        weighted_bound=weighted,
        coarse=coarse,
    )
