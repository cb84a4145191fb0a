import math

import numpy as np
import pytest
from scipy import ndimage

from conftest import walled_room
from errors import DegenerateFieldError, EmptyFieldError
from grid import CellState, GridGeometry, Pose2, TernaryGrid
from sdf import brute_force_sdf, compute_sdf, load_sdf, save_sdf, sdf_to_gray, submap_to_sdf

O, F, U = CellState.OCCUPIED, CellState.FREE, CellState.UNKNOWN


def _ternary(cells, res=1.0, origin=None):
    cells = np.asarray(cells, dtype=np.int8)
    h, w = cells.shape
    return TernaryGrid(GridGeometry(w, h, res, origin or Pose2.identity()), cells)


def test_single_obstacle_three_by_three():
    """Centre OCCUPIED, rest FREE: corners sqrt(2), edges 1, centre -1"""
    sdf = compute_sdf(_ternary([[F, F, F], [F, O, F], [F, F, F]]))
    r2 = math.sqrt(2.0)
    np.testing.assert_allclose(sdf.values, [[r2, 1.0, r2], [1.0, -1.0, 1.0], [r2, 1.0, r2]], atol=1e-12)
    assert sdf.valid.all()


def test_row_scaled_by_resolution():
    sdf = compute_sdf(_ternary([[O, F, F, F]], res=0.5))
    np.testing.assert_allclose(sdf.values[0], [-0.5, 0.5, 1.0, 1.5], atol=1e-12)


def test_unknown_cells_are_transparent():
    # the unknown cell between the wall and the probe neither blocks nor acts as surface
    sdf = compute_sdf(_ternary([[O, U, F, F]]))
    assert not sdf.valid[0, 1]
    np.testing.assert_allclose(sdf.values[0, 2:], [2.0, 3.0])
    assert sdf.values[0, 0] == pytest.approx(-2.0)


def test_matches_brute_force_on_random_grids():
    """100 seeded 64x64 ternary grids agree with the exhaustive search"""
    rng = np.random.default_rng(11)
    for _ in range(100):
        cells = rng.choice([O, F, U], size=(64, 64), p=[0.25, 0.55, 0.2]).astype(np.int8)
        cells[0, 0], cells[-1, -1] = O, F
        t = _ternary(cells, res=float(rng.uniform(0.02, 0.5)))
        fast, slow = compute_sdf(t), brute_force_sdf(t)
        np.testing.assert_array_equal(fast.valid, slow.valid)
        np.testing.assert_allclose(fast.values[fast.valid], slow.values[slow.valid], atol=1e-9)


def test_sign_follows_cell_state():
    t = _ternary(np.where(walled_room(12, 9) > 0.5, O, np.where(walled_room(12, 9) < 0, U, F)))
    sdf = compute_sdf(t)
    assert (sdf.values[t.free] > 0).all()
    assert (sdf.values[t.occupied] < 0).all()
    np.testing.assert_array_equal(sdf.valid, t.observed)


def test_same_sign_neighbours_are_lipschitz():
    """Distance to a set changes by at most one cell between 4-neighbours of the same side"""
    rng = np.random.default_rng(2)
    cells = rng.choice([O, F], size=(40, 40), p=[0.1, 0.9]).astype(np.int8)
    sdf = compute_sdf(_ternary(cells, res=0.1))
    v = sdf.values
    for a, b in ((v[:, 1:], v[:, :-1]), (v[1:, :], v[:-1, :])):
        same = np.sign(a) == np.sign(b)
        assert (np.abs(a - b)[same] <= 0.1 + 1e-12).all()


def test_padding_with_unknown_is_translation_equivariant():
    cells = np.where(walled_room(15, 10, pad=0) > 0.5, O, F).astype(np.int8)
    base = compute_sdf(_ternary(cells, res=0.1))
    padded_cells = np.full((cells.shape[0] + 7, cells.shape[1] + 4), U, dtype=np.int8)
    padded_cells[5:5 + cells.shape[0], 3:3 + cells.shape[1]] = cells
    padded = compute_sdf(_ternary(padded_cells, res=0.1))
    np.testing.assert_allclose(padded.values[5:5 + cells.shape[0], 3:3 + cells.shape[1]], base.values)


def test_all_unknown_is_empty():
    with pytest.raises(EmptyFieldError):
        compute_sdf(_ternary([[U, U], [U, U]]))


@pytest.mark.parametrize("cells", [[[F, F], [U, F]], [[O, O], [O, U]], [[F]]])
def test_single_class_is_degenerate(cells):
    with pytest.raises(DegenerateFieldError):
        compute_sdf(_ternary(cells))


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    cells = rng.choice([O, F, U], size=(13, 21)).astype(np.int8)
    cells[0, 0], cells[0, 1] = O, F
    sdf = compute_sdf(_ternary(cells, res=0.05, origin=Pose2(1.5, -0.5, 0.25)))
    path = tmp_path / "field.sdf"
    save_sdf(sdf, path, "field", Pose2(3.0, 2.0, 1.0))
    loaded = load_sdf(path)
    assert loaded.geometry == sdf.geometry
    np.testing.assert_array_equal(loaded.valid, sdf.valid)
    # float32 storage
    np.testing.assert_allclose(loaded.values[loaded.valid], sdf.values[sdf.valid], rtol=1e-6)


def test_gray_image_flips_rows_and_marks_unknown():
    sdf = compute_sdf(_ternary([[O, F, F], [U, U, U]]))
    gray = sdf_to_gray(sdf)
    assert gray.shape == (2, 3)
    # top image row is the largest y, which is the all-unknown row
    assert (gray[0] == 128).all()
    assert gray[1, 0] == 0 and gray[1, 2] == 255


def test_submap_to_sdf(square_room):
    sdf = submap_to_sdf(square_room, 0.5)
    assert sdf.values.max() == pytest.approx(2.1)  # 21 cells from the centre to the wall


def test_eikonal_away_from_skeleton():
    """|grad f| stays near 1 in open space away from the medial axis"""
    room = walled_room(196, 196, boxes=[(40, 50, 12, 8), (120, 130, 20, 20), (150, 30, 6, 30)], pad=0)
    t = _ternary(np.where(room > 0.5, O, F), res=0.05)
    sdf = compute_sdf(t)
    gy, gx = np.gradient(sdf.values, 0.05)
    magnitude = np.hypot(gx, gy)

    # direction to the nearest surface cell; the skeleton is where it turns by 90 degrees or more
    _, (near_r, near_c) = ndimage.distance_transform_edt(~t.occupied, return_indices=True)
    rows, cols = np.indices(t.cells.shape)
    vr, vc = near_r - rows, near_c - cols
    skeleton = np.zeros_like(t.free)
    for axis in (0, 1):
        dot = vr * np.roll(vr, 1, axis) + vc * np.roll(vc, 1, axis)
        skeleton |= (dot <= 0) & t.free & np.roll(t.free, 1, axis)
    near_skeleton = ndimage.binary_dilation(skeleton, iterations=2)
    qualifying = t.free & (sdf.values > 2 * 0.05) & ~near_skeleton
    qualifying[:3] = qualifying[-3:] = False
    qualifying[:, :3] = qualifying[:, -3:] = False
    assert qualifying.sum() > 1000
    in_band = (magnitude >= 0.8) & (magnitude <= 1.2)
    assert in_band[qualifying].mean() >= 0.9
