"""Deterministic orthographic rasterizer with id picking buffers.

Renders an assembly into a small color image plus per-pixel instance and
snap id buffers. Bricks are drawn as their merged occupancy boxes with
flat per-face shading at three brightness levels and exact z buffering.

Snap discs form the cursor ground truth. Every unmated snap is written
into the snap buffers regardless of occlusion so that it stays
selectable (sockets on the underside of a floating brick and pins on the
camera-far side of a vehicle must remain clickable); mated snaps are
interior geometry and are never drawn. Between overlapping discs the one
nearest the camera wins. Snaps that additionally pass a biased depth
test against the scene geometry are marked in the color image as small
bright (stud) or dark (socket) dots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from bricklab.assembly import Assembly, derive_edges, world_boxes
from bricklab.geometry import rotate_vec
from bricklab.shapes import STUD, Catalog

DEFAULT_SIZE = 128
BACKGROUND = (236, 236, 240)
SNAP_DEPTH_BIAS = 4.0
# Brightness per world face normal axis keeps rotated geometry legible.
_FACE_LEVELS = {0: 0.80, 1: 0.62, 2: 1.00}
_STUD_DOT = 1.22
_SOCKET_DOT = 0.78


@dataclass(frozen=True)
class Camera:
    """Fixed-scale orthographic camera.

    The default viewing direction is chosen so that no small lattice
    vector is parallel to the view ray; otherwise snap discs that sit
    behind one another on the stud grid would shadow each other in the
    picking buffers and become unselectable.
    """

    azimuth: float = math.radians(31.0)
    elevation: float = math.radians(36.0)
    scale: float = 3.2  # LDU per pixel; fixed so images stay comparable
    look_at: tuple[float, float, float] = (0.0, 0.0, 40.0)
    rot_jitter: float = 0.0
    trans_jitter: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("camera scale must be positive")
        if self.rot_jitter < 0 or self.trans_jitter < 0:
            raise ValueError("jitter ranges must be non-negative")

    def basis(self):
        ca, sa = math.cos(self.azimuth), math.sin(self.azimuth)
        ce, se = math.cos(self.elevation), math.sin(self.elevation)
        forward = np.array([-ce * ca, -ce * sa, -se])
        right = np.array([-sa, ca, 0.0])
        up = np.cross(right, forward)
        return right, up, forward


def default_camera(jitter: bool = False) -> Camera:
    if jitter:
        return Camera(rot_jitter=0.1, trans_jitter=10.0)
    return Camera()


def sample_camera(base: Camera, rng: np.random.Generator) -> Camera:
    """Jittered copy of a camera; the draw count is fixed for determinism."""
    da, de = rng.uniform(-base.rot_jitter, base.rot_jitter, size=2)
    dt = rng.uniform(-base.trans_jitter, base.trans_jitter, size=3)
    if base.rot_jitter == 0 and base.trans_jitter == 0:
        return base
    look = tuple(float(c + d) for c, d in zip(base.look_at, dt))
    return replace(
        base,
        azimuth=base.azimuth + float(da),
        elevation=base.elevation + float(de),
        look_at=look,
    )


@dataclass
class FrameBuffers:
    """Color image plus picking buffers, all at the same resolution."""

    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64, +inf at background
    instance: np.ndarray  # (H, W) int32, 0 at background
    snap_instance: np.ndarray  # (H, W) int32, 0 where no snap
    snap_index: np.ndarray  # (H, W) int32, valid where snap_instance > 0

    @property
    def size(self) -> int:
        return self.color.shape[0]


def empty_frame(size: int = DEFAULT_SIZE) -> FrameBuffers:
    color = np.empty((size, size, 3), dtype=np.uint8)
    color[...] = BACKGROUND
    return FrameBuffers(
        color=color,
        depth=np.full((size, size), np.inf),
        instance=np.zeros((size, size), dtype=np.int32),
        snap_instance=np.zeros((size, size), dtype=np.int32),
        snap_index=np.zeros((size, size), dtype=np.int32),
    )


_FACES = (
    # (axis, side): corner picks for P0, P1, P3 per box (lo, hi)
    (0, 1),
    (0, 0),
    (1, 1),
    (1, 0),
    (2, 1),
    (2, 0),
)


def _face_corners(lo, hi, axis, side):
    fixed = hi[axis] if side else lo[axis]
    other = [0, 1, 2]
    other.remove(axis)
    u_axis, v_axis = other
    p0 = [0.0, 0.0, 0.0]
    p0[axis] = fixed
    p0[u_axis] = lo[u_axis]
    p0[v_axis] = lo[v_axis]
    p1 = list(p0)
    p1[u_axis] = hi[u_axis]
    p3 = list(p0)
    p3[v_axis] = hi[v_axis]
    return np.array([p0, p1, p3])


def render(
    catalog: Catalog,
    assembly: Assembly,
    camera: Camera | None = None,
    size: int = DEFAULT_SIZE,
    edges=None,
) -> FrameBuffers:
    """Rasterize an assembly; deterministic for fixed inputs."""
    camera = camera or default_camera()
    fb = empty_frame(size)
    right, up, forward = camera.basis()
    look = np.array(camera.look_at)
    half = size / 2.0

    def project(points):
        rel = points - look
        px = rel @ right / camera.scale + half
        py = half - rel @ up / camera.scale
        d = rel @ forward
        return px, py, d

    for instance_id in sorted(assembly.bricks):
        brick = assembly.bricks[instance_id]
        rgb = np.array(catalog.color(brick.color_id).rgb, dtype=np.float64)
        for lo, hi in world_boxes(catalog, brick):
            for axis, side in _FACES:
                normal = 1.0 if side else -1.0
                if normal * forward[axis] >= 0:
                    continue  # facing away
                corners = _face_corners(lo, hi, axis, side)
                _raster_face(
                    fb,
                    project,
                    corners,
                    instance_id,
                    np.clip(rgb * _FACE_LEVELS[axis], 0, 255).astype(np.uint8),
                )

    _raster_snaps(catalog, assembly, fb, project, camera, edges)
    return fb


def _raster_face(fb, project, corners, instance_id, rgb):
    px, py, d = project(corners)
    # corners hold P0, P1, P3 of the parallelogram; include P2 in the bbox.
    px_all = (px[0], px[1], px[2], px[1] + px[2] - px[0])
    py_all = (py[0], py[1], py[2], py[1] + py[2] - py[0])
    size = fb.size
    j0 = max(0, int(math.ceil(min(px_all) - 0.5)))
    j1 = min(size - 1, int(math.floor(max(px_all) - 0.5)))
    i0 = max(0, int(math.ceil(min(py_all) - 0.5)))
    i1 = min(size - 1, int(math.floor(max(py_all) - 0.5)))
    if j0 > j1 or i0 > i1:
        return
    e1 = (px[1] - px[0], py[1] - py[0])
    e2 = (px[2] - px[0], py[2] - py[0])
    det = e1[0] * e2[1] - e1[1] * e2[0]
    if abs(det) < 1e-12:
        return  # edge-on face
    qx = np.arange(j0, j1 + 1) + 0.5 - px[0]
    qy = (np.arange(i0, i1 + 1) + 0.5 - py[0])[:, None]
    a = (qx * e2[1] - qy * e2[0]) / det
    b = (e1[0] * qy - e1[1] * qx) / det
    eps = 1e-9
    inside = (a >= -eps) & (a <= 1 + eps) & (b >= -eps) & (b <= 1 + eps)
    if not inside.any():
        return
    depth = d[0] + a * (d[1] - d[0]) + b * (d[2] - d[0])
    window = (slice(i0, i1 + 1), slice(j0, j1 + 1))
    mask = inside & (depth < fb.depth[window])
    if not mask.any():
        return
    fb.depth[window][mask] = depth[mask]
    fb.instance[window][mask] = instance_id
    fb.color[window][mask] = rgb


def snap_radius_px(camera: Camera) -> int:
    return max(1, int(round(6.0 / camera.scale)))


def _raster_snaps(catalog, assembly, fb, project, camera, edges):
    if not assembly.bricks:
        return
    if edges is None:
        edges = derive_edges(catalog, assembly)
    mated = set()
    for e in edges:
        mated.add((e.instance_a, e.snap_a))
        mated.add((e.instance_b, e.snap_b))

    owners, indices, studs, positions = [], [], [], []
    for instance_id in sorted(assembly.bricks):
        brick = assembly.bricks[instance_id]
        shape = catalog.shape(brick.shape_id)
        for spec in shape.snaps:
            if (instance_id, spec.snap_index) in mated:
                continue
            owners.append(instance_id)
            indices.append(spec.snap_index)
            studs.append(spec.gender == STUD)
            positions.append(brick.pose.apply(spec.position))
    if not owners:
        return
    px, py, d = project(np.array(positions, dtype=np.float64))
    biased = d - SNAP_DEPTH_BIAS
    radius = snap_radius_px(camera)
    size = fb.size

    pix_i, pix_j, pix_depth, pix_owner, pix_index, pix_stud = [], [], [], [], [], []
    span = np.arange(-radius, radius + 1)
    for k in range(len(owners)):
        if not (-radius <= px[k] < size + radius and -radius <= py[k] < size + radius):
            continue
        jc = int(math.floor(px[k]))
        ic = int(math.floor(py[k]))
        jj = jc + span
        ii = ic + span
        dx = jj + 0.5 - px[k]
        dy = (ii + 0.5 - py[k])[:, None]
        hit = (dx * dx + dy * dy) <= radius * radius
        keep = (
            hit
            & (jj >= 0)
            & (jj < size)
            & ((ii >= 0) & (ii < size))[:, None]
        )
        ys, xs = np.nonzero(keep)
        if not len(ys):
            continue
        pix_i.append(ii[ys])
        pix_j.append(jj[xs])
        n = len(ys)
        pix_depth.append(np.full(n, biased[k]))
        pix_owner.append(np.full(n, owners[k], dtype=np.int32))
        pix_index.append(np.full(n, indices[k], dtype=np.int32))
        pix_stud.append(np.full(n, studs[k], dtype=bool))
    if not pix_i:
        return
    pi = np.concatenate(pix_i)
    pj = np.concatenate(pix_j)
    pd = np.concatenate(pix_depth)
    po = np.concatenate(pix_owner)
    px_idx = np.concatenate(pix_index)
    ps = np.concatenate(pix_stud)

    flat = pi * size + pj
    order = np.lexsort((px_idx, po, pd, flat))
    flat_sorted = flat[order]
    _, first = np.unique(flat_sorted, return_index=True)
    win = order[first]

    wi, wj = pi[win], pj[win]
    fb.snap_instance[wi, wj] = po[win]
    fb.snap_index[wi, wj] = px_idx[win]

    # Overlapping discs can bury a snap completely, which would make it
    # unselectable; reserve every snap's own center pixel (nearest snap
    # wins when two centers share a pixel).
    ci = np.floor(py).astype(np.int64)
    cj = np.floor(px).astype(np.int64)
    owners_arr = np.array(owners, dtype=np.int32)
    indices_arr = np.array(indices, dtype=np.int32)
    in_frame = (ci >= 0) & (ci < size) & (cj >= 0) & (cj < size)
    if in_frame.any():
        cflat = ci[in_frame] * size + cj[in_frame]
        cdepth = biased[in_frame]
        corder = np.lexsort(
            (indices_arr[in_frame], owners_arr[in_frame], cdepth, cflat)
        )
        _, cfirst = np.unique(cflat[corder], return_index=True)
        cwin = corder[cfirst]
        ri = ci[in_frame][cwin]
        rj = cj[in_frame][cwin]
        fb.snap_instance[ri, rj] = owners_arr[in_frame][cwin]
        fb.snap_index[ri, rj] = indices_arr[in_frame][cwin]

    mask = fb.snap_instance > 0
    background = mask & (fb.instance == 0)
    fb.instance[background] = fb.snap_instance[background]

    # Dots in the color image only where the disc clears the geometry.
    seen = pd[win] < fb.depth[wi, wj]
    if seen.any():
        di, dj = wi[seen], wj[seen]
        colors = np.array(
            [catalog.color(assembly.bricks[o].color_id).rgb for o in po[win][seen]],
            dtype=np.float64,
        )
        factor = np.where(ps[win][seen], _STUD_DOT, _SOCKET_DOT)[:, None]
        fb.color[di, dj] = np.clip(colors * factor, 0, 255).astype(np.uint8)


def visible_snaps(fb: FrameBuffers) -> set[tuple[int, int]]:
    """All snap ids with at least one pixel in the snap buffer."""
    mask = fb.snap_instance > 0
    if not mask.any():
        return set()
    pairs = np.stack([fb.snap_instance[mask], fb.snap_index[mask]], axis=1)
    return {(int(a), int(b)) for a, b in np.unique(pairs, axis=0)}


def snap_pixels(fb: FrameBuffers, instance_id: int, snap_index: int) -> np.ndarray:
    """(N, 2) array of (row, col) pixels belonging to one snap."""
    mask = (fb.snap_instance == instance_id) & (fb.snap_index == snap_index)
    ii, jj = np.nonzero(mask)
    return np.stack([ii, jj], axis=1)


def write_ppm(path, rgb: np.ndarray) -> None:
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def write_pgm16(path, values: np.ndarray) -> None:
    data = np.ascontiguousarray(values, dtype=np.uint16)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(data.byteswap().tobytes())  # PGM is big endian


def write_png(path, rgb: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(path)
