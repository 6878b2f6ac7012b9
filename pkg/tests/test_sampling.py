import numpy as np
import pytest
from numpy.testing import assert_allclose

from neurtv.sampling import (
    CoordinateMap,
    SampleSet,
    axis_coordinates,
    indices_to_canonical,
    make_meshgrid,
    normalize_coords,
)


def test_normalize_maps_range_to_unit_interval():
    raw = np.array([[0.0], [5.0], [10.0]])
    canonical, cmap = normalize_coords(raw)
    assert_allclose(canonical[:, 0], [-1.0, 0.0, 1.0])
    assert_allclose(cmap.denormalize(canonical), raw)


def test_normalize_round_trip_random():
    rng = np.random.default_rng(3)
    raw = rng.uniform(-7, 13, size=(50, 3))
    canonical, cmap = normalize_coords(raw)
    assert canonical.min() >= -1.0 - 1e-12 and canonical.max() <= 1.0 + 1e-12
    assert_allclose(cmap.denormalize(canonical), raw, rtol=1e-13, atol=1e-12)


def test_normalize_with_explicit_ranges():
    raw = np.array([[2.0, 1.0]])
    canonical, _ = normalize_coords(raw, ranges=[(0, 4), (0, 2)])
    assert_allclose(canonical, [[0.0, 0.0]])


def test_degenerate_range_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        normalize_coords(np.array([[1.0], [1.0]]))
    with pytest.raises(ValueError, match="degenerate"):
        CoordinateMap((0.0,), (0.0,))


def test_meshgrid_counts_and_spacing():
    grid = make_meshgrid((4, 4), factor=1)
    assert grid.n_points == 16
    assert grid.provenance == "data-meshgrid"
    grid3 = make_meshgrid((4, 4), factor=3)
    assert grid3.n_points == 144
    assert grid3.provenance == "dense-meshgrid"
    assert_allclose(grid3.spacings, (2.0 / 12, 2.0 / 12))
    # spacing is exactly (hi - lo) / partitions
    assert_allclose(np.diff(grid3.axes[0]), 2.0 / 12)


def test_axis_uses_right_endpoints():
    ax = axis_coordinates(4, factor=2)
    assert_allclose(ax, -1.0 + 2.0 * np.arange(1, 9) / 8)
    assert ax[-1] == 1.0


def test_factor_one_grid_nested_in_factor_k():
    base = set(np.round(axis_coordinates(5, 1), 12))
    dense = set(np.round(axis_coordinates(5, 3), 12))
    assert base <= dense


def test_points_enumerate_grid_in_row_major_order():
    grid = make_meshgrid((2, 3))
    rebuilt = np.stack(
        np.meshgrid(grid.axes[0], grid.axes[1], indexing="ij"), axis=-1
    ).reshape(-1, 2)
    assert np.array_equal(grid.points, rebuilt)
    # flat index i of a (2, 3) value tensor corresponds to points[i]
    values = np.arange(6).reshape(2, 3)
    assert values.reshape(-1)[4] == values[1, 1]
    assert_allclose(grid.points[4], [grid.axes[0][1], grid.axes[1][1]])


def test_indices_to_canonical_matches_factor_one_axis():
    shape = (5, 7)
    idx = np.array([[0, 0], [4, 6], [2, 3]])
    pts = indices_to_canonical(idx, shape)
    ax0, ax1 = axis_coordinates(5), axis_coordinates(7)
    assert_allclose(pts[0], [ax0[0], ax1[0]])
    assert_allclose(pts[1], [ax0[4], ax1[6]])
    assert_allclose(pts[2], [ax0[2], ax1[3]])


def test_index_out_of_range_rejected():
    with pytest.raises(ValueError, match="out of range"):
        indices_to_canonical(np.array([[5, 0]]), (5, 7))


def test_meshgrid_point_cap():
    with pytest.raises(ValueError, match="cap"):
        make_meshgrid((4000, 4000), factor=1)


def test_scattered_sample_set():
    pts = np.random.default_rng(0).uniform(-1, 1, size=(10, 4))
    ss = SampleSet.from_points(pts)
    assert not ss.is_meshgrid
    assert ss.n_points == 10 and ss.n_dims == 4


def test_bad_factor_rejected():
    with pytest.raises(ValueError, match="factor"):
        make_meshgrid((4, 4), factor=0)
