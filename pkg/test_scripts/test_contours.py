import math

import numpy as np
import pytest

from app.contours import contour_extract, contour_max_level_extent, level_lines
from app.experiments import ProbabilityGrid


def make_grid(X_grid, V_grid, probabilities) -> ProbabilityGrid:
    probabilities = np.asarray(probabilities, dtype=float)
    return ProbabilityGrid(
        X_grid=np.asarray(X_grid, dtype=float),
        V_grid=np.asarray(V_grid, dtype=float),
        probabilities=probabilities,
        certified=np.zeros(probabilities.shape, dtype=bool),
        simulations=0,
        blowups=0,
        resamples=0,
        runtime_seconds=0.0,
    )


def step_grid() -> ProbabilityGrid:
    X_grid = [1.0, 2.0, 3.0]
    V_grid = [1.0, 2.0, 3.0, 4.0]
    probabilities = [[1.0 if v <= 2.0 else 0.0 for v in V_grid] for _ in X_grid]
    return make_grid(X_grid, V_grid, probabilities)


def test_constant_field_has_no_contour():
    grid = make_grid([1.0, 2.0], [1.0, 2.0, 3.0], np.ones((2, 3)))
    assert contour_extract(grid, 0.8) == []


def test_step_field_gives_one_horizontal_line():
    polylines = contour_extract(step_grid(), 0.5)
    assert len(polylines) == 1
    line = polylines[0]
    np.testing.assert_allclose(line[:, 1], 2.5)
    assert sorted(line[:, 0]) == [1.0, 2.0, 3.0]
    assert np.all(np.abs(np.diff(line[:, 0])) == 1.0)


def test_exponential_field_level_set():
    c = 0.5
    X_grid = np.linspace(0.1, 2.0, 5)
    V_grid = np.linspace(0.02, 1.0, 50)
    field = np.exp(-np.tile(V_grid, (len(X_grid), 1)) / c)
    polylines = contour_extract(make_grid(X_grid, V_grid, field), 0.8)
    assert len(polylines) == 1
    cell_height = V_grid[1] - V_grid[0]
    np.testing.assert_allclose(polylines[0][:, 1], -c * math.log(0.8), atol=cell_height)


def test_bump_gives_a_closed_curve_inside_the_grid():
    axis = np.linspace(-1.0, 1.0, 21)
    X, V = np.meshgrid(axis, axis, indexing="ij")
    field = np.exp(-(X**2 + V**2) / 0.2)
    polylines = level_lines(axis, axis, field, 0.5)
    assert len(polylines) == 1
    loop = polylines[0]
    np.testing.assert_array_equal(loop[0], loop[-1])
    radius = np.hypot(loop[:, 0], loop[:, 1])
    np.testing.assert_allclose(radius, math.sqrt(0.2 * math.log(2.0)), atol=0.1)


def test_vertices_stay_inside_the_grid():
    rng = np.random.default_rng(0)
    grid = make_grid(np.linspace(1.0, 3.0, 8), np.linspace(0.5, 2.0, 6), rng.uniform(size=(8, 6)))
    for line in contour_extract(grid, 0.5):
        assert np.all((line[:, 0] >= 1.0) & (line[:, 0] <= 3.0))
        assert np.all((line[:, 1] >= 0.5) & (line[:, 1] <= 2.0))
        # consecutive vertices share a grid cell
        assert np.all(np.abs(np.diff(line[:, 0])) <= 2.0 / 7.0 + 1e-12)


@pytest.mark.parametrize("level", [0.0, 1.0, 1.5])
def test_level_must_lie_strictly_inside_the_unit_interval(level):
    with pytest.raises(ValueError):
        contour_extract(step_grid(), level)


def test_max_level_extent():
    assert contour_max_level_extent(step_grid(), 0.5) == pytest.approx(2.5)
    assert contour_max_level_extent(step_grid(), 0.75) == pytest.approx(2.25)
    ones = make_grid([1.0, 2.0], [1.0, 2.0], np.ones((2, 2)))
    assert contour_max_level_extent(ones, 0.8) == 2.0
    assert contour_max_level_extent(make_grid([1.0, 2.0], [1.0, 2.0], np.zeros((2, 2))), 0.5) == 0.0


def test_max_level_extent_takes_the_farthest_row():
    probabilities = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.6], [0.0, 0.0, 0.0]]
    grid = make_grid([0.5, 1.0, 2.0], [0.1, 0.2, 0.4], probabilities)
    assert contour_max_level_extent(grid, 0.8) == pytest.approx(0.3)
    assert contour_max_level_extent(grid, 0.5) == pytest.approx(0.4)
