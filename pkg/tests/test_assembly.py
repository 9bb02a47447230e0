import numpy as np
import pytest

from bricklab import geometry as geo
from bricklab.assembly import (
    Assembly,
    BrickInstance,
    check_collision,
    derive_edges,
    is_connected,
    load_assembly,
    mate_pose,
    save_assembly,
    transform_assembly,
    validate_assembly,
    world_boxes,
    world_snap,
)
from bricklab.shapes import ANTI_STUD, STUD, builtin_catalog

CAT = builtin_catalog()


def brick(shape_name, color=4, pose=geo.Pose(), instance_id=1):
    return BrickInstance(instance_id, CAT.shape_named(shape_name).shape_id, color, pose)


def stack_of_two_2x4():
    asm = Assembly()
    asm.add(CAT.shape_named("brick2x4").shape_id, 4, geo.Pose())
    asm.add(CAT.shape_named("brick2x4").shape_id, 6, geo.Pose(translation=(0, 0, 24)))
    return asm


def test_world_snap_identity_and_translation():
    b = brick("brick1x1")
    pos, axis, gender = world_snap(CAT, b, 1)  # bottom socket at the origin
    assert pos == (0, 0, 0)
    assert axis == (0, 0, -1)
    assert gender == ANTI_STUD
    shifted = brick("brick1x1", pose=geo.Pose(translation=(20, 0, 0)))
    pos, axis, _ = world_snap(CAT, shifted, 1)
    assert pos == (20, 0, 0)
    assert axis == (0, 0, -1)


def test_world_snap_quarter_yaw_hand_computed():
    # The canonical quarter yaw matrix sends (20, 0, 0) to (0, 20, 0).
    yaw = geo.rotation_about((0, 0, 1), 1)
    b = brick("brick1x2", pose=geo.Pose(rotation=yaw))
    shape = CAT.shape_named("brick1x2")
    stud = next(s for s in shape.snaps if s.position == (0, 20, 24))
    pos, axis, _ = world_snap(CAT, b, stud.snap_index)
    assert pos == (-20, 0, 24)
    assert axis == (0, 0, 1)


def test_world_snap_bad_index_raises():
    with pytest.raises(IndexError):
        world_snap(CAT, brick("brick1x1"), 99)


def brute_force_edges(assembly):
    edges = set()
    ids = sorted(assembly.bricks)
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            sa = CAT.shape(assembly.bricks[a].shape_id)
            sb = CAT.shape(assembly.bricks[b].shape_id)
            for na in sa.snaps:
                for nb in sb.snaps:
                    pa, xa, ga = world_snap(CAT, assembly.bricks[a], na.snap_index)
                    pb, xb, gb = world_snap(CAT, assembly.bricks[b], nb.snap_index)
                    anti = all(xa[k] + xb[k] == 0 for k in range(3))
                    if pa == pb and anti and ga != gb:
                        edges.add((a, na.snap_index, b, nb.snap_index))
    return edges


def test_derive_edges_empty_and_disjoint():
    assert derive_edges(CAT, Assembly()) == frozenset()
    asm = Assembly()
    asm.add(CAT.shape_named("brick2x4").shape_id, 4, geo.Pose())
    asm.add(CAT.shape_named("brick2x4").shape_id, 6, geo.Pose(translation=(200, 0, 0)))
    assert derive_edges(CAT, asm) == frozenset()


def test_derive_edges_stacked_2x4_has_eight_edges():
    asm = stack_of_two_2x4()
    edges = derive_edges(CAT, asm)
    assert len(edges) == 8
    assert {(e.instance_a, e.snap_a, e.instance_b, e.snap_b) for e in edges} == (
        brute_force_edges(asm)
    )


def test_derive_edges_matches_brute_force_on_random_scenes(rng=None):
    rng = np.random.default_rng(7)
    shapes = [CAT.shape_named(n).shape_id for n in ("brick1x1", "plate2x2", "headlight1x1", "wheel")]
    for _ in range(25):
        asm = Assembly()
        for _ in range(rng.integers(1, 5)):
            pose = geo.Pose(
                int(rng.integers(0, 24)),
                (
                    int(rng.integers(-2, 3)) * 20,
                    int(rng.integers(-2, 3)) * 20,
                    int(rng.integers(0, 4)) * 8,
                ),
            )
            asm.add(int(rng.choice(shapes)), 0, pose)
        got = {
            (e.instance_a, e.snap_a, e.instance_b, e.snap_b)
            for e in derive_edges(CAT, asm)
        }
        assert got == brute_force_edges(asm)


def test_check_collision_empty_identical_and_offset():
    asm = Assembly()
    b = brick("brick2x4")
    assert not check_collision(CAT, asm, b)
    asm.add(b.shape_id, b.color_id, b.pose)
    dup = BrickInstance(99, b.shape_id, 0, b.pose)
    assert check_collision(CAT, asm, dup)
    clear = BrickInstance(99, b.shape_id, 0, geo.Pose(translation=(40, 0, 0)))
    assert not check_collision(CAT, asm, clear)


def test_check_collision_agrees_with_point_sampling():
    # Independent oracle: sample the fine 4 LDU lattice inside both boxes.
    rng = np.random.default_rng(3)
    shape = CAT.shape_named("brick2x2")
    for _ in range(40):
        pose_a = geo.Pose(int(rng.integers(0, 24)), (0, 0, 0))
        pose_b = geo.Pose(
            int(rng.integers(0, 24)),
            (
                int(rng.integers(-1, 2)) * 20,
                int(rng.integers(-1, 2)) * 20,
                int(rng.integers(-1, 2)) * 8,
            ),
        )
        a = BrickInstance(1, shape.shape_id, 0, pose_a)
        b = BrickInstance(2, shape.shape_id, 0, pose_b)
        asm = Assembly({1: a}, 2)
        fast = check_collision(CAT, asm, b)
        slow = False
        for box_a in world_boxes(CAT, a):
            for box_b in world_boxes(CAT, b):
                lo = tuple(max(box_a[0][k], box_b[0][k]) for k in range(3))
                hi = tuple(min(box_a[1][k], box_b[1][k]) for k in range(3))
                if all(lo[k] < hi[k] for k in range(3)):
                    slow = True
        assert fast == slow


def test_transform_assembly_identity_inverse_and_edge_count():
    asm = stack_of_two_2x4()
    ident = transform_assembly(asm, geo.Pose())
    assert ident.state_key() == asm.state_key()
    t = geo.Pose(geo.rotation_about((0, 0, 1), 1), (40, -20, 8))
    there = transform_assembly(asm, t)
    back = transform_assembly(there, t.inverse())
    assert back.state_key() == asm.state_key()
    assert len(derive_edges(CAT, there)) == len(derive_edges(CAT, asm))


def test_mate_pose_lands_snaps_coincident():
    asm = Assembly()
    base_id = asm.add(CAT.shape_named("brick2x2").shape_id, 4, geo.Pose())
    base = asm.bricks[base_id]
    shape = CAT.shape_named("brick2x2")
    stud = next(s for s in shape.snaps if s.gender == STUD)
    dest_pos, dest_axis, _ = world_snap(CAT, base, stud.snap_index)
    mover = BrickInstance(9, CAT.shape_named("plate2x2").shape_id, 0, geo.Pose(translation=(0, 0, 96)))
    plate = CAT.shape_named("plate2x2")
    socket = next(s for s in plate.snaps if s.gender == ANTI_STUD)
    landed = mate_pose(CAT, mover, socket.snap_index, dest_pos, dest_axis)
    moved = BrickInstance(9, mover.shape_id, 0, landed)
    pos, axis, _ = world_snap(CAT, moved, socket.snap_index)
    assert pos == dest_pos
    assert all(axis[k] + dest_axis[k] == 0 for k in range(3))
    assert not check_collision(CAT, asm, moved)


def test_mate_pose_sideways_socket_onto_side_stud():
    asm = Assembly()
    head_id = asm.add(CAT.shape_named("headlight1x1").shape_id, 4, geo.Pose())
    side = CAT.shape_named("headlight1x1").snaps[2]
    dest_pos, dest_axis, _ = world_snap(CAT, asm.bricks[head_id], side.snap_index)
    assert dest_axis == (1, 0, 0)
    cap = BrickInstance(5, CAT.shape_named("round1x1").shape_id, 0, geo.Pose())
    landed = mate_pose(CAT, cap, 1, dest_pos, dest_axis)
    moved = BrickInstance(5, cap.shape_id, 0, landed)
    pos, axis, _ = world_snap(CAT, moved, 1)
    assert pos == dest_pos
    assert axis == (-1, 0, 0)
    assert not check_collision(CAT, asm, moved)


def test_validate_assembly_rejects_overlap():
    asm = Assembly()
    asm.add(CAT.shape_named("brick2x4").shape_id, 4, geo.Pose())
    asm.add(CAT.shape_named("brick1x1").shape_id, 4, geo.Pose())
    with pytest.raises(ValueError):
        validate_assembly(CAT, asm)


def test_connectivity_checks():
    asm = stack_of_two_2x4()
    assert is_connected(CAT, asm)
    asm.add(CAT.shape_named("brick1x1").shape_id, 4, geo.Pose(translation=(200, 0, 0)))
    assert not is_connected(CAT, asm)


def test_assembly_file_roundtrip(tmp_path):
    asm = stack_of_two_2x4()
    path = tmp_path / "stack.json"
    save_assembly(CAT, asm, path)
    loaded = load_assembly(CAT, path)
    assert loaded.state_key() == asm.state_key()
    text = path.read_text()
    assert '"version": 1' in text
    assert '"shape": "brick2x4"' in text
