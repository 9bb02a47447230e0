import itertools

import pytest

from bricklab import geometry as geo


def test_rotation_table_has_24_elements_with_identity_first():
    assert len(geo.ROTATIONS) == 24
    assert geo.ROTATIONS[0] == ((1, 0, 0), (0, 1, 0), (0, 0, 1))
    assert len(set(geo.ROTATIONS)) == 24


def test_rotation_group_closed_with_identity_and_inverses():
    for a, b in itertools.product(range(24), repeat=2):
        assert 0 <= geo.compose(a, b) < 24
    for a in range(24):
        assert geo.compose(a, geo.IDENTITY) == a
        assert geo.compose(geo.IDENTITY, a) == a
        assert geo.compose(a, geo.inverse(a)) == geo.IDENTITY
        assert geo.compose(geo.inverse(a), a) == geo.IDENTITY


def test_every_rotation_reachable_by_at_most_two_quarter_turn_steps():
    # Face-axis rotations generate the group quickly; the repair logic
    # relies on being able to reduce any orientation error by a single
    # click-rotation step.
    face_rotations = {
        geo.rotation_about(axis, k) for axis in geo.AXIS_UNITS for k in (1, 2, 3)
    }
    reachable = {geo.IDENTITY} | face_rotations
    two_steps = {geo.compose(f, r) for f in face_rotations for r in reachable}
    assert reachable | two_steps == set(range(24))


def test_rotation_about_axis_quarter_turn_matrix():
    yaw = geo.rotation_about((0, 0, 1), 1)
    assert geo.ROTATIONS[yaw] == ((0, -1, 0), (1, 0, 0), (0, 0, 1))
    assert geo.rotation_about((0, 0, 1), 4) == geo.IDENTITY
    half = geo.rotation_about((1, 0, 0), 2)
    assert geo.rotate_vec(half, (0, 1, 0)) == (0, -1, 0)


def test_minimal_rotation_mapping_cases():
    up = (0, 0, 1)
    assert geo.minimal_rotation_mapping(up, up) == geo.IDENTITY
    quarter = geo.minimal_rotation_mapping(up, (1, 0, 0))
    assert geo.rotation_angle(quarter) == 90
    assert geo.rotate_vec(quarter, up) == (1, 0, 0)
    flip = geo.minimal_rotation_mapping(up, (0, 0, -1))
    assert geo.rotation_angle(flip) == 180
    assert geo.rotate_vec(flip, up) == (0, 0, -1)


def test_pose_apply_identity_and_translation():
    assert geo.Pose().apply((0, 0, 0)) == (0, 0, 0)
    assert geo.Pose(translation=(20, 0, 0)).apply((0, 0, 0)) == (20, 0, 0)


def test_pose_yaw_moves_lateral_snap():
    # Hand check: the canonical quarter yaw maps (20, 0, 0) to (0, 20, 0).
    yaw = geo.rotation_about((0, 0, 1), 1)
    pose = geo.Pose(rotation=yaw)
    assert pose.apply((20, 0, 0)) == (0, 20, 0)
    assert geo.rotate_vec(yaw, (0, 0, 1)) == (0, 0, 1)


def test_pose_compose_and_inverse_roundtrip():
    a = geo.Pose(geo.rotation_about((0, 1, 0), 1), (20, -40, 8))
    b = geo.Pose(geo.rotation_about((0, 0, 1), 3), (4, 0, 24))
    p = (34, -6, 16)
    assert a.compose(b).apply(p) == a.apply(b.apply(p))
    assert a.compose(a.inverse()) == geo.Pose()
    assert a.inverse().compose(a) == geo.Pose()


def test_pose_rejects_off_grid_translation():
    with pytest.raises(ValueError):
        geo.Pose(translation=(1, 0, 0))
    with pytest.raises(ValueError):
        geo.Pose(rotation=24)


def test_rotate_pose_about_point_keeps_point_fixed():
    pose = geo.Pose(geo.IDENTITY, (40, 0, 0))
    turn = geo.rotation_about((0, 0, 1), 1)
    moved = geo.rotate_pose_about_point(pose, turn, (40, 0, 24))
    # The pivot itself must not move.
    local_pivot = pose.inverse().apply((40, 0, 24))
    assert moved.apply(local_pivot) == (40, 0, 24)


def test_cell_box_dimensions():
    lo, hi = geo.cell_box((0, 0, 0))
    assert lo == (-10, -10, 0)
    assert hi == (10, 10, 8)
    lo, hi = geo.cell_box((2, -1, 3))
    assert lo == (30, -30, 24)
    assert hi == (50, -10, 32)


def test_merge_cells_collapses_cuboids():
    cells = [(x, y, z) for x in range(2) for y in range(4) for z in range(3)]
    boxes = geo.merge_cells(cells)
    assert boxes == (((-10, -10, 0), (30, 70, 24)),)


def test_merge_cells_exact_cover_of_irregular_shape():
    cells = {(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)}
    boxes = geo.merge_cells(cells)
    covered = set()
    for (x0, y0, z0), (x1, y1, z1) in boxes:
        for cx in range((x0 + 10) // 20, (x1 + 10) // 20):
            for cy in range((y0 + 10) // 20, (y1 + 10) // 20):
                for cz in range(z0 // 8, z1 // 8):
                    assert (cx, cy, cz) not in covered
                    covered.add((cx, cy, cz))
    assert covered == cells


def test_boxes_overlap_open_boundaries():
    a = ((0, 0, 0), (20, 20, 8))
    touching = ((20, 0, 0), (40, 20, 8))
    overlapping = ((19, 0, 0), (39, 20, 8))
    assert not geo.boxes_overlap(a, touching)
    assert geo.boxes_overlap(a, overlapping)


def test_transform_box_under_quarter_turn():
    box = ((0, -10, 0), (20, 10, 8))
    pose = geo.Pose(geo.rotation_about((0, 0, 1), 1), (0, 0, 0))
    lo, hi = geo.transform_box(pose, box)
    assert lo == (-10, 0, 0)
    assert hi == (10, 20, 8)
