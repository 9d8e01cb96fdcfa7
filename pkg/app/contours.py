"""Level curves of a sampled probability field by marching squares."""

import logging
from collections import defaultdict

import numpy as np

from .experiments import ProbabilityGrid

logger = logging.getLogger(__name__)

# Square corners in counter-clockwise order, as (dx, dv) offsets from the lower-left node.
CORNERS = ((0, 0), (1, 0), (1, 1), (0, 1))
# Edge k joins corner k to corner k + 1.
EDGES = tuple((k, (k + 1) % 4) for k in range(4))


def lerp_point(p0: np.ndarray, p1: np.ndarray, v0: float, v1: float) -> np.ndarray:
    t = v0 / (v0 - v1)
    t = min(max(t, 0.0), 1.0)
    return p0 * (1.0 - t) + t * p1


def _square_segments(above, centre_above: bool):
    """Pairs of crossed edge indices for one square."""
    crossed = [k for k, (a, b) in enumerate(EDGES) if above[a] != above[b]]
    if len(crossed) == 2:
        return [tuple(crossed)]
    if len(crossed) == 4:
        # saddle: cut off the two corners whose side differs from the centre
        return [((c - 1) % 4, c) for c in range(4) if above[c] != centre_above]
    return []


def level_lines(X_grid, V_grid, field, level: float) -> list[np.ndarray]:
    """Polylines of field == level, field[i, j] sampled at (X_grid[i], V_grid[j]).

    Each polyline is a (k, 2) array of (X0, V0) vertices in curve order; closed
    curves repeat their first vertex at the end.
    """
    X_grid = np.asarray(X_grid, dtype=np.float64)
    V_grid = np.asarray(V_grid, dtype=np.float64)
    values = np.asarray(field, dtype=np.float64) - level
    if values.shape != (len(X_grid), len(V_grid)):
        raise ValueError(f"field shape {values.shape} does not match the grid")

    points = {}
    links = defaultdict(list)
    for i, j in np.ndindex(values.shape[0] - 1, values.shape[1] - 1):
        nodes = [(i + dx, j + dv) for dx, dv in CORNERS]
        samples = [values[n] for n in nodes]
        above = [s >= 0.0 for s in samples]
        centre_above = float(np.mean(samples)) >= 0.0

        for e0, e1 in _square_segments(above, centre_above):
            keys = []
            for e in (e0, e1):
                a, b = EDGES[e]
                key = tuple(sorted((nodes[a], nodes[b])))
                if key not in points:
                    p0 = np.array([X_grid[nodes[a][0]], V_grid[nodes[a][1]]])
                    p1 = np.array([X_grid[nodes[b][0]], V_grid[nodes[b][1]]])
                    points[key] = lerp_point(p0, p1, samples[a], samples[b])
                keys.append(key)
            links[keys[0]].append(keys[1])
            links[keys[1]].append(keys[0])

    polylines = []
    visited = set()
    # open curves start at a boundary crossing, then closed loops
    starts = [k for k in sorted(links) if len(links[k]) == 1] + sorted(links)
    for start in starts:
        if start in visited:
            continue
        path = [start]
        visited.add(start)
        current = start
        while True:
            following = [k for k in links[current] if k not in visited]
            if not following:
                break
            current = following[0]
            visited.add(current)
            path.append(current)
        if len(path) > 2 and start in links[current]:
            path.append(start)
        polylines.append(np.array([points[k] for k in path]))

    logger.debug("Level %.3g: %d polyline(s)", level, len(polylines))
    return polylines


def contour_extract(grid: ProbabilityGrid, level: float) -> list[np.ndarray]:
    """Level curves of the consensus probability; an empty list for a field that never crosses the level."""
    if not 0.0 < level < 1.0:
        raise ValueError("contour level must lie in (0, 1)")
    return level_lines(grid.X_grid, grid.V_grid, grid.probabilities, level)


def contour_max_level_extent(grid: ProbabilityGrid, level: float) -> float:
    """Largest V0 reached by the region where the probability stays at or above the level.

    Each X0 row is scanned upwards in V0 and cut where the probability first
    falls below the level, linearly interpolated between the two samples.
    A row that never falls reaches V_grid[-1]; a row that starts below the
    level contributes 0.
    """
    V_grid = grid.V_grid
    extent = 0.0
    for row in grid.probabilities:
        below = np.flatnonzero(row < level)
        if below.size == 0:
            reach = float(V_grid[-1])
        elif below[0] == 0:
            reach = 0.0
        else:
            k = below[0]
            w = (row[k - 1] - level) / (row[k - 1] - row[k])
            reach = float(V_grid[k - 1] + w * (V_grid[k] - V_grid[k - 1]))
        extent = max(extent, reach)
    return extent
