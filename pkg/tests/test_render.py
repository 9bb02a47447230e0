import math

import numpy as np

from bricklab import geometry as geo
from bricklab.assembly import Assembly, derive_edges, world_boxes
from bricklab.render import (
    BACKGROUND,
    Camera,
    default_camera,
    empty_frame,
    render,
    sample_camera,
    snap_pixels,
    visible_snaps,
    write_pgm16,
    write_png,
    write_ppm,
)
from bricklab.shapes import STUD, builtin_catalog

CAT = builtin_catalog()


def single(name, pose=geo.Pose()):
    asm = Assembly()
    asm.add(CAT.shape_named(name).shape_id, 4, pose)
    return asm


def test_empty_assembly_renders_background_only():
    fb = render(CAT, Assembly())
    assert (fb.color == np.array(BACKGROUND, dtype=np.uint8)).all()
    assert (fb.instance == 0).all()
    assert (fb.snap_instance == 0).all()
    assert np.isinf(fb.depth).all()


def test_determinism_bit_identical():
    asm = single("brick2x4")
    asm.add(CAT.shape_named("plate2x2").shape_id, 8, geo.Pose(translation=(0, 0, 24)))
    a = render(CAT, asm)
    b = render(CAT, asm)
    assert (a.color == b.color).all()
    assert (a.depth == b.depth).all()
    assert (a.instance == b.instance).all()
    assert (a.snap_instance == b.snap_instance).all()
    assert (a.snap_index == b.snap_index).all()


def test_single_brick_every_top_stud_clickable():
    asm = single("brick2x4")
    fb = render(CAT, asm)
    shape = CAT.shape_named("brick2x4")
    visible = visible_snaps(fb)
    for spec in shape.snaps:
        if spec.gender == STUD:
            assert (1, spec.snap_index) in visible
            assert len(snap_pixels(fb, 1, spec.snap_index)) >= 1


def test_single_brick_visibility_covers_camera_facing_snaps():
    # Free snaps stay clickable in the snap buffer even when the body
    # hides them, so the visible set is a superset of the camera-facing
    # free snaps and never includes mated ones.
    asm = single("brick2x4")
    fb = render(CAT, asm)
    visible = visible_snaps(fb)
    _, _, forward = default_camera().basis()
    brick = asm.bricks[1]
    for spec in CAT.shape_named("brick2x4").snaps:
        axis = geo.rotate_vec(brick.pose.rotation, spec.axis)
        if np.dot(axis, forward) < 0:  # facing the camera hemisphere
            assert (1, spec.snap_index) in visible
    assert len(visible) <= len(CAT.shape_named("brick2x4").snaps)


def test_stacked_bricks_hide_mated_snaps():
    asm = single("brick2x4")
    asm.add(CAT.shape_named("brick2x4").shape_id, 6, geo.Pose(translation=(0, 0, 24)))
    fb = render(CAT, asm)
    edges = derive_edges(CAT, asm)
    assert len(edges) == 8
    visible = visible_snaps(fb)
    for e in edges:
        assert (e.instance_a, e.snap_a) not in visible
        assert (e.instance_b, e.snap_b) not in visible


def test_visible_snaps_bounded_by_total_snaps():
    asm = single("headlight1x1")
    fb = render(CAT, asm)
    assert len(visible_snaps(fb)) <= len(CAT.shape_named("headlight1x1").snaps)
    assert visible_snaps(empty_frame()) == set()


def test_depth_buffer_matches_ray_oracle_on_small_scenes():
    # Independent check: per pixel, intersect the view ray with every
    # world box and compare the winning instance.
    asm = single("brick2x4")
    asm.add(CAT.shape_named("brick2x2").shape_id, 6, geo.Pose(translation=(0, 0, 24)))
    asm.add(CAT.shape_named("plate2x2").shape_id, 9, geo.Pose(translation=(80, 40, 0)))
    camera = default_camera()
    fb = render(CAT, asm, camera)
    right, up, forward = camera.basis()
    look = np.array(camera.look_at)
    size = fb.size
    boxes = []
    for instance_id in sorted(asm.bricks):
        for box in world_boxes(CAT, asm.bricks[instance_id]):
            boxes.append((instance_id, np.array(box[0], float), np.array(box[1], float)))

    def ray_hits(origin, pad):
        hits = []
        for instance_id, lo, hi in boxes:
            t0, t1 = -np.inf, np.inf
            ok = True
            for k in range(3):
                a = (lo[k] - pad - origin[k]) / forward[k]
                b = (hi[k] + pad - origin[k]) / forward[k]
                t0 = max(t0, min(a, b))
                t1 = min(t1, max(a, b))
                if t0 > t1:
                    ok = False
                    break
            if ok:
                hits.append((t0, instance_id))
        return hits

    for i in range(0, size, 3):
        for j in range(0, size, 3):
            origin = look + ((j + 0.5) - size / 2) * camera.scale * right
            origin = origin + (size / 2 - (i + 0.5)) * camera.scale * up
            interior = ray_hits(origin, -0.05)
            grown = ray_hits(origin, 0.05)
            got = int(fb.instance[i, j])
            allowed = set()
            if fb.snap_instance[i, j] > 0:
                allowed.add(int(fb.snap_instance[i, j]))
            if interior:
                # Strict pixel: the winner must be a front-most box.
                nearest = min(t for t, _ in interior)
                allowed |= {inst for t, inst in grown if t <= nearest + 0.2}
            elif grown:
                # Silhouette boundary: partial coverage, either way is fine.
                allowed |= {0} | {inst for _, inst in grown}
            else:
                allowed.add(0)
            assert got in allowed, (i, j, got, allowed)


def test_sample_camera_zero_jitter_is_identity():
    rng = np.random.default_rng(0)
    cam = Camera()
    assert sample_camera(cam, rng) is cam


def test_sample_camera_offsets_within_bounds():
    rng = np.random.default_rng(1)
    base = Camera(rot_jitter=0.1, trans_jitter=10.0)
    for _ in range(2000):
        cam = sample_camera(base, rng)
        assert abs(cam.azimuth - base.azimuth) <= 0.1
        assert abs(cam.elevation - base.elevation) <= 0.1
        for got, want in zip(cam.look_at, base.look_at):
            assert abs(got - want) <= 10.0


def test_sample_camera_seeded_sequence_reproducible():
    base = Camera(rot_jitter=0.1, trans_jitter=10.0)
    seq_a = [sample_camera(base, np.random.default_rng(42)) for _ in range(1)]
    seq_b = [sample_camera(base, np.random.default_rng(42)) for _ in range(1)]
    assert seq_a == seq_b


def test_image_exports(tmp_path):
    fb = render(CAT, single("brick2x2"))
    write_ppm(tmp_path / "frame.ppm", fb.color)
    write_png(tmp_path / "frame.png", fb.color)
    write_pgm16(tmp_path / "instance.pgm", fb.instance)
    raw = (tmp_path / "frame.ppm").read_bytes()
    assert raw.startswith(b"P6\n128 128\n255\n")
    assert (tmp_path / "frame.png").stat().st_size > 0
    assert (tmp_path / "instance.pgm").read_bytes().startswith(b"P5\n128 128\n65535\n")


def test_jittered_frames_differ_pixelwise():
    asm = single("brick2x4")
    base = Camera(rot_jitter=0.1, trans_jitter=10.0)
    rng = np.random.default_rng(5)
    a = render(CAT, asm, sample_camera(base, rng))
    b = render(CAT, asm, sample_camera(base, rng))
    assert (a.color != b.color).any()
