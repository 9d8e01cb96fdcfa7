"""Monte-Carlo consensus probabilities over a grid of initial spreads (X0, V0).

Initial conditions are drawn i.i.d. uniform on [-1, 1] with numpy's PCG64
bit generator. The generator of sample k in cell (i, j) is seeded with
SeedSequence(master_seed, spawn_key=(i, j, k, attempt)), where attempt is
only increased when a draw has zero spread and must be redrawn. The grid is
therefore the same whatever the order or the number of workers.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .certificates import (
    CertificateFamily,
    CertificateQuery,
    DivergentFamilyError,
    NoControlFamily,
    Verdict,
    extended_certificate,
)
from .controllers import ChiRadius, ControllerSpec, NoControl, controller_shape_errors
from .flock import FlockState, KernelSpec, PowerLawKernel, dispersion
from .integrator import IntegrationBlowupError, SimConfig, simulate

logger = logging.getLogger(__name__)

SEED_SCHEME = "PCG64(SeedSequence(master_seed, spawn_key=(x_index, v_index, sample_index, attempt)))"
MAX_RESAMPLES = 100


class DegenerateInitialConditionError(ValueError):
    """Raised when a raw configuration has zero spread and cannot be rescaled."""

    pass


class SweepConfig(BaseModel):
    """A grid of (X0, V0) cells and the simulations run in each."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    N: int = Field(..., ge=2, description="Number of agents")
    d: int = Field(2, ge=1, description="Spatial dimension")
    X_grid: list[float] = Field(..., min_length=1, description="Increasing positive X0 values")
    V_grid: list[float] = Field(..., min_length=1, description="Increasing positive V0 values")
    samples_per_cell: int = Field(20, ge=1)
    master_seed: int = Field(0, ge=0)
    controller: ControllerSpec = Field(default_factory=NoControl)
    kernel: KernelSpec = Field(default_factory=PowerLawKernel)
    sim: SimConfig = Field(default_factory=SimConfig)
    workers: int = Field(1, ge=1, description="Worker processes used to run the cells")

    @field_validator("X_grid", "V_grid")
    @classmethod
    def _check_grid(cls, grid: list[float]) -> list[float]:
        values = np.asarray(grid, dtype=float)
        if np.any(values <= 0.0) or np.any(np.diff(values) <= 0.0):
            raise ValueError("grid values must be positive and strictly increasing")
        return grid

    @model_validator(mode="after")
    def _check_controller_fits_flock(self) -> "SweepConfig":
        errors = controller_shape_errors(self.controller, self.N, self.d)
        if errors:
            path, message = errors[0]
            raise ValueError(f"controller.{'.'.join(path)}: {message}")
        return self


@dataclass(frozen=True)
class ProbabilityGrid:
    X_grid: np.ndarray
    V_grid: np.ndarray
    probabilities: np.ndarray
    certified: np.ndarray
    simulations: int
    blowups: int
    resamples: int
    runtime_seconds: float


def cell_seed(master_seed: int, x_index: int, v_index: int, sample: int, attempt: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(x_index, v_index, sample, attempt))


def generate_ic(N: int, d: int, seed: Union[int, np.random.SeedSequence]) -> FlockState:
    """Positions then velocities, each N x d uniform on [-1, 1]."""
    rng = np.random.Generator(np.random.PCG64(seed))
    positions = rng.uniform(-1.0, 1.0, size=(N, d))
    velocities = rng.uniform(-1.0, 1.0, size=(N, d))
    return FlockState(positions, velocities)


def rescale_ic(raw: FlockState, X0: float, V0: float) -> FlockState:
    """Scale positions and velocities so that the spreads become exactly (X0, V0)."""
    if X0 <= 0.0 or V0 <= 0.0:
        raise ValueError("target spreads must be positive")
    spread = dispersion(raw)
    if spread.X == 0.0 or spread.V == 0.0:
        raise DegenerateInitialConditionError("raw configuration has zero spread")
    return FlockState(np.sqrt(X0 / spread.X) * raw.positions, np.sqrt(V0 / spread.V) * raw.velocities)


def draw_cell_ic(config: SweepConfig, x_index: int, v_index: int, sample: int) -> Tuple[FlockState, int]:
    """Rescaled initial condition of one sample, with the number of redraws it needed."""
    X0 = config.X_grid[x_index]
    V0 = config.V_grid[v_index]
    for attempt in range(MAX_RESAMPLES):
        raw = generate_ic(config.N, config.d, cell_seed(config.master_seed, x_index, v_index, sample, attempt))
        try:
            return rescale_ic(raw, X0, V0), attempt
        except DegenerateInitialConditionError:
            logger.warning("Degenerate draw in cell (%d, %d) sample %d, redrawing", x_index, v_index, sample)
    raise DegenerateInitialConditionError(f"no usable draw after {MAX_RESAMPLES} attempts")


def _run_sample(config: SweepConfig, x_index: int, v_index: int, sample: int):
    initial, resamples = draw_cell_ic(config, x_index, v_index, sample)
    try:
        trajectory = simulate(initial, config.kernel, config.controller, config.sim)
        return x_index, v_index, trajectory.consensus, False, resamples
    except IntegrationBlowupError as e:
        logger.warning("Blowup in cell (%d, %d) sample %d at step %d", x_index, v_index, sample, e.step)
        return x_index, v_index, False, True, resamples


def _run_task(args):
    return _run_sample(*args)


def certificate_family_for(controller: ControllerSpec) -> Optional[Tuple[float, CertificateFamily]]:
    """(gamma, family) of the extended certificate covering a controller, if any."""
    if controller.kind == "none":
        return 0.0, NoControlFamily()
    if controller.kind == "uniform":
        return controller.gamma, ChiRadius(R=float("inf"))
    if controller.kind == "local" and controller.normalization == "max_eta":
        return controller.gamma, ChiRadius(R=controller.R)
    if controller.kind == "psi":
        return controller.gamma, controller.family
    return None


def certified_cells(config: SweepConfig) -> np.ndarray:
    certified = np.zeros((len(config.X_grid), len(config.V_grid)), dtype=bool)
    covered = certificate_family_for(config.controller)
    if covered is None:
        logger.info("No certificate covers controller %r; certified matrix left empty", config.controller.kind)
        return certified
    gamma, family = covered
    try:
        for i, X0 in enumerate(config.X_grid):
            for j, V0 in enumerate(config.V_grid):
                query = CertificateQuery(N=config.N, X0=X0, V0=V0, kernel=config.kernel, gamma=gamma, family=family)
                certified[i, j] = extended_certificate(query).verdict != Verdict.FAILS
    except DivergentFamilyError as e:
        logger.info("Certificate undefined for this controller: %s", e)
        certified[:] = False
    return certified


def run_sweep(config: SweepConfig) -> ProbabilityGrid:
    started = time.perf_counter()
    n_x, n_v = len(config.X_grid), len(config.V_grid)
    tasks = [
        (config, i, j, k) for i in range(n_x) for j in range(n_v) for k in range(config.samples_per_cell)
    ]
    logger.info("Running %d simulations on %d worker(s)", len(tasks), config.workers)

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, config.samples_per_cell)))
    else:
        results = [_run_task(task) for task in tasks]

    hits = np.zeros((n_x, n_v), dtype=np.int64)
    blowups = resamples = 0
    for i, j, consensus, blowup, redraws in results:
        hits[i, j] += int(consensus)
        blowups += int(blowup)
        resamples += redraws

    return ProbabilityGrid(
        X_grid=np.asarray(config.X_grid, dtype=np.float64),
        V_grid=np.asarray(config.V_grid, dtype=np.float64),
        probabilities=hits / config.samples_per_cell,
        certified=certified_cells(config),
        simulations=len(results),
        blowups=blowups,
        resamples=resamples,
        runtime_seconds=time.perf_counter() - started,
    )
