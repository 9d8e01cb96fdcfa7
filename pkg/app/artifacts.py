"""CSV, JSON and plot-script artifacts.

Every float column is written with "%.17g" so values read back bit-exact.
Infinite values in JSON documents are written as the string "inf".
"""

import json
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .certificates import CertificateResult
from .experiments import SEED_SCHEME, ProbabilityGrid, SweepConfig
from .flock import FlockState
from .integrator import DecayReport, Trajectory

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _axis_labels(prefix: str, d: int) -> list[str]:
    return [f"{prefix}_{k}" for k in range(1, d + 1)]


def jsonable(value):
    """Convert numpy scalars, arrays and infinite floats into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def to_json(payload: dict) -> str:
    return json.dumps(jsonable(payload), indent=2)


def write_json(path: Path, payload: dict) -> None:
    Path(path).write_text(to_json(payload) + "\n", encoding="utf-8")


def _write_frame(path: Path, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug("Wrote %d rows to %s", len(frame), path)


def trajectory_frame(trajectory: Trajectory) -> pd.DataFrame:
    frame = pd.DataFrame({"t": trajectory.times, "X": trajectory.X_series, "V": trajectory.V_series})
    means = trajectory.mean_velocity_series
    for k, label in enumerate(_axis_labels("vbar", means.shape[1])):
        frame[label] = means[:, k]
    return frame


def write_trajectory_csv(path: Path, trajectory: Trajectory) -> None:
    _write_frame(path, trajectory_frame(trajectory))


def write_snapshots_csv(path: Path, trajectory: Trajectory, dt: float) -> None:
    if trajectory.snapshots is None:
        raise ValueError("trajectory was recorded without snapshots")
    d = trajectory.final_state.d
    rows = []
    for t, snap in zip(trajectory.times, trajectory.snapshots):
        step = int(round(t / dt))
        for agent in range(snap.N):
            rows.append([step, t, agent, *snap.positions[agent], *snap.velocities[agent]])
    columns = ["step", "t", "agent", *_axis_labels("x", d), *_axis_labels("v", d)]
    _write_frame(path, pd.DataFrame(rows, columns=columns))


def write_decay_csv(path: Path, report: DecayReport) -> None:
    frame = pd.DataFrame(
        {"t": report.times, "dV_dt": report.dV_dt, "bound": report.bound, "residual": report.residual}
    )
    if report.weighted_bound is not None:
        frame["weighted_bound"] = report.weighted_bound
    _write_frame(path, frame)


def trajectory_summary(trajectory: Trajectory) -> dict:
    return {
        "consensus": trajectory.consensus,
        "first_crossing_time": trajectory.first_crossing_time,
        "final_X": float(trajectory.X_series[-1]),
        "final_V": float(trajectory.V_series[-1]),
    }


def certificate_record(result: CertificateResult) -> dict:
    return {"verdict": result.verdict.value, "lhs": result.lhs, "rhs": result.rhs, "margin": result.margin}


def grid_frame(grid: ProbabilityGrid) -> pd.DataFrame:
    X, V = np.meshgrid(grid.X_grid, grid.V_grid, indexing="ij")
    return pd.DataFrame(
        {
            "X0": X.ravel(),
            "V0": V.ravel(),
            "probability": grid.probabilities.ravel(),
            "certified": grid.certified.ravel().astype(int),
        }
    )


def write_grid_csv(path: Path, grid: ProbabilityGrid) -> None:
    _write_frame(path, grid_frame(grid))


def sweep_manifest(config: SweepConfig, grid: ProbabilityGrid, config_echo: Optional[str] = None) -> dict:
    return {
        "config": config.model_dump(),
        "config_echo": config_echo,
        "seeds": {"master_seed": config.master_seed, "scheme": SEED_SCHEME},
        "runtime": {
            "simulations": grid.simulations,
            "blowups": grid.blowups,
            "resamples": grid.resamples,
            "workers": config.workers,
            "seconds": grid.runtime_seconds,
        },
    }


def write_contour_csv(path: Path, polylines: list[np.ndarray]) -> None:
    rows = [(index, x, v) for index, line in enumerate(polylines) for x, v in line]
    _write_frame(path, pd.DataFrame(rows, columns=["polyline", "X0", "V0"]))


def ic_frame(state: FlockState) -> pd.DataFrame:
    frame = pd.DataFrame({"agent": np.arange(state.N)})
    for k, label in enumerate(_axis_labels("x", state.d)):
        frame[label] = state.positions[:, k]
    for k, label in enumerate(_axis_labels("v", state.d)):
        frame[label] = state.velocities[:, k]
    return frame


def write_ic_csv(path, state: FlockState) -> None:
    _write_frame(path, ic_frame(state))


def read_ic_csv(path) -> FlockState:
    frame = pd.read_csv(path, float_precision="round_trip").sort_values("agent")
    x_cols = [c for c in frame.columns if c.startswith("x_")]
    v_cols = [c for c in frame.columns if c.startswith("v_")]
    if not x_cols or len(x_cols) != len(v_cols):
        raise ValueError(f"{path}: expected columns agent, x_1..x_d, v_1..v_d")
    return FlockState(frame[x_cols].to_numpy(dtype=np.float64), frame[v_cols].to_numpy(dtype=np.float64))


def plot_script(grid_csv: str, contour_csv: Optional[str] = None, level: Optional[float] = None) -> str:
    """gnuplot script drawing the probability heatmap, certified cells and the optional level curve."""
    lines = [
        "set terminal pngcairo size 900,700",
        f"set output '{Path(grid_csv).stem}.png'",
        "set datafile separator ','",
        "set key outside",
        "set xlabel 'X0'",
        "set ylabel 'V0'",
        "set cbrange [0:1]",
        "set cblabel 'probability of consensus'",
        "set view map",
        f"plot '{grid_csv}' using 1:2:3 skip 1 with image title 'empirical', \\",
        f"     '{grid_csv}' using 1:($4 > 0 ? $2 : 1/0) skip 1 with points pt 7 ps 0.4 lc rgb 'black'"
        " title 'certified'",
    ]
    if contour_csv is not None:
        label = "level" if level is None else f"level {level:g}"
        lines[-1] += ", \\"
        lines.append(f"     '{contour_csv}' using 2:3:1 skip 1 with points pt 7 ps 0.3 lc variable title '{label}'")
    return "\n".join(lines) + "\n"
