"""Integer lattice geometry: axis-aligned rotations, poses, and boxes.

All distances are in LDU: 20 LDU is one stud pitch, 8 LDU is one plate
height, 24 LDU is one brick height. Orientations come from the 24-element
group of orientation-preserving axis-aligned rotations (3x3 matrices with
entries in {-1, 0, 1} and determinant +1) and are referenced by index into
a canonical table. Translations are integer LDU triples on a 2 LDU grid,
the finest offset that mating side-mounted connection points can produce.

The occupancy cell at integer coordinates (cx, cy, cz) is the half-open
box centered on x = 20*cx, y = 20*cy with z spanning [8*cz, 8*cz + 8).
Cell centers in x and y keep stud positions on multiples of the stud
pitch; cell floors in z keep stud positions on multiples of the plate
height.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

Vec = tuple[int, int, int]
Box = tuple[Vec, Vec]  # half-open [min, max) corner pair

STUD_PITCH = 20
PLATE_HEIGHT = 8
BRICK_HEIGHT = 24
TRANSLATION_GRID = 2

AXIS_UNITS: tuple[Vec, ...] = (
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
)


def _det3(m) -> int:
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


def _build_rotations() -> tuple[tuple[tuple[int, int, int], ...], ...]:
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = [[0, 0, 0] for _ in range(3)]
            for row, (col, sign) in enumerate(zip(perm, signs)):
                m[row][col] = sign
            if _det3(m) == 1:
                mats.append(tuple(tuple(row) for row in m))
    # Identity first, then decreasing trace (increasing rotation angle),
    # lexicographic within a trace class. The order is part of the pose
    # file format and must never change.
    mats.sort(key=lambda m: (-(m[0][0] + m[1][1] + m[2][2]), m))
    return tuple(mats)


ROTATIONS = _build_rotations()
IDENTITY = 0
_INDEX_OF = {m: i for i, m in enumerate(ROTATIONS)}

assert len(ROTATIONS) == 24
assert ROTATIONS[IDENTITY] == ((1, 0, 0), (0, 1, 0), (0, 0, 1))


def _matmul(a, b):
    return tuple(
        tuple(sum(a[i][k] * b[k][j] for k in range(3)) for j in range(3))
        for i in range(3)
    )


def _transpose(m):
    return tuple(tuple(m[j][i] for j in range(3)) for i in range(3))


COMPOSE = tuple(
    tuple(_INDEX_OF[_matmul(a, b)] for b in ROTATIONS) for a in ROTATIONS
)
# Axis-aligned rotation matrices are orthogonal, so the inverse is the
# transpose.
INVERSE = tuple(_INDEX_OF[_transpose(m)] for m in ROTATIONS)


def compose(a: int, b: int) -> int:
    """Index of the rotation "apply b, then a"."""
    return COMPOSE[a][b]


def inverse(a: int) -> int:
    return INVERSE[a]


def rotate_vec(rotation: int, v: Vec) -> Vec:
    m = ROTATIONS[rotation]
    return (
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    )


def trace(rotation: int) -> int:
    m = ROTATIONS[rotation]
    return m[0][0] + m[1][1] + m[2][2]


_ANGLE_BY_TRACE = {3: 0, 1: 90, 0: 120, -1: 180}


def rotation_angle(rotation: int) -> int:
    """Rotation angle in degrees (0, 90, 120, or 180)."""
    return _ANGLE_BY_TRACE[trace(rotation)]


def rotation_about(axis: Vec, quarter_turns: int) -> int:
    """Rotation by quarter_turns * 90 degrees about an axis unit vector."""
    if axis not in AXIS_UNITS:
        raise ValueError(f"not an axis unit vector: {axis}")
    ux, uy, uz = axis
    # Rodrigues at 90 degrees with integer entries: R = K + u u^T.
    k = ((0, -uz, uy), (uz, 0, -ux), (-uy, ux, 0))
    quarter = tuple(
        tuple(k[i][j] + axis[i] * axis[j] for j in range(3)) for i in range(3)
    )
    index = _INDEX_OF[quarter]
    out = IDENTITY
    for _ in range(quarter_turns % 4):
        out = compose(index, out)
    return out


def rotations_mapping(u: Vec, v: Vec) -> tuple[int, ...]:
    """All rotation indices taking u to v, smallest angle first."""
    found = [r for r in range(24) if rotate_vec(r, u) == v]
    found.sort(key=lambda r: (-trace(r), r))
    return tuple(found)


def minimal_rotation_mapping(u: Vec, v: Vec) -> int:
    """The smallest-angle rotation taking u to v (deterministic on ties)."""
    candidates = rotations_mapping(u, v)
    if not candidates:
        raise ValueError(f"no axis-aligned rotation maps {u} to {v}")
    return candidates[0]


@dataclass(frozen=True)
class Pose:
    """A lattice rigid transform: rotation index plus LDU translation."""

    rotation: int = IDENTITY
    translation: Vec = (0, 0, 0)

    def __post_init__(self):
        if not 0 <= self.rotation < 24:
            raise ValueError(f"rotation index out of range: {self.rotation}")
        if any(c % TRANSLATION_GRID for c in self.translation):
            raise ValueError(
                f"translation off the {TRANSLATION_GRID} LDU grid: "
                f"{self.translation}"
            )

    def apply(self, point: Vec) -> Vec:
        x, y, z = rotate_vec(self.rotation, point)
        tx, ty, tz = self.translation
        return (x + tx, y + ty, z + tz)

    def compose(self, inner: "Pose") -> "Pose":
        """The pose "apply inner, then self"."""
        tx, ty, tz = rotate_vec(self.rotation, inner.translation)
        sx, sy, sz = self.translation
        return Pose(
            compose(self.rotation, inner.rotation),
            (tx + sx, ty + sy, tz + sz),
        )

    def inverse(self) -> "Pose":
        inv = inverse(self.rotation)
        tx, ty, tz = rotate_vec(inv, self.translation)
        return Pose(inv, (-tx, -ty, -tz))


def rotate_pose_about_point(pose: Pose, rotation: int, point: Vec) -> Pose:
    """Compose a world-frame rotation about a fixed point onto a pose."""
    rx, ry, rz = rotate_vec(rotation, pose.translation)
    px, py, pz = point
    qx, qy, qz = rotate_vec(rotation, point)
    return Pose(
        compose(rotation, pose.rotation),
        (rx + px - qx, ry + py - qy, rz + pz - qz),
    )


def translate_pose(pose: Pose, delta: Vec) -> Pose:
    tx, ty, tz = pose.translation
    return Pose(pose.rotation, (tx + delta[0], ty + delta[1], tz + delta[2]))


def cell_box(cell: Vec) -> Box:
    cx, cy, cz = cell
    return (
        (20 * cx - 10, 20 * cy - 10, 8 * cz),
        (20 * cx + 10, 20 * cy + 10, 8 * cz + 8),
    )


def merge_cells(cells) -> tuple[Box, ...]:
    """Greedy merge of occupancy cells into a few axis-aligned boxes.

    Merges runs along x, then rectangles along y, then slabs along z.
    Exact cover of the input cells; optimal for plain cuboid shapes.
    """
    remaining = sorted(cells)
    if not remaining:
        return ()
    # Runs along x at fixed (y, z).
    runs = {}
    for cx, cy, cz in remaining:
        runs.setdefault((cy, cz), []).append(cx)
    strips = []  # (x0, x1, y0, y1, z0, z1) in cell units, half open
    for (cy, cz), xs in sorted(runs.items()):
        xs.sort()
        start = prev = xs[0]
        for x in xs[1:]:
            if x == prev + 1:
                prev = x
                continue
            strips.append((start, prev + 1, cy, cy + 1, cz, cz + 1))
            start = prev = x
        strips.append((start, prev + 1, cy, cy + 1, cz, cz + 1))
    # Merge strips adjacent in y with identical x and z extents.
    strips.sort(key=lambda s: (s[0], s[1], s[4], s[5], s[2]))
    merged_y = []
    for s in strips:
        if merged_y:
            p = merged_y[-1]
            if (p[0], p[1], p[4], p[5]) == (s[0], s[1], s[4], s[5]) and p[3] == s[2]:
                merged_y[-1] = (p[0], p[1], p[2], s[3], p[4], p[5])
                continue
        merged_y.append(s)
    # Merge slabs adjacent in z with identical x and y extents.
    merged_y.sort(key=lambda s: (s[0], s[1], s[2], s[3], s[4]))
    merged = []
    for s in merged_y:
        if merged:
            p = merged[-1]
            if p[:4] == s[:4] and p[5] == s[4]:
                merged[-1] = (p[0], p[1], p[2], p[3], p[4], s[5])
                continue
        merged.append(s)
    return tuple(
        (
            (20 * x0 - 10, 20 * y0 - 10, 8 * z0),
            (20 * (x1 - 1) + 10, 20 * (y1 - 1) + 10, 8 * z1),
        )
        for x0, x1, y0, y1, z0, z1 in merged
    )


def transform_box(pose: Pose, box: Box) -> Box:
    a = pose.apply(box[0])
    b = pose.apply(box[1])
    return (
        (min(a[0], b[0]), min(a[1], b[1]), min(a[2], b[2])),
        (max(a[0], b[0]), max(a[1], b[1]), max(a[2], b[2])),
    )


def boxes_overlap(a: Box, b: Box) -> bool:
    """True when the half-open boxes share positive volume."""
    return (
        a[0][0] < b[1][0]
        and b[0][0] < a[1][0]
        and a[0][1] < b[1][1]
        and b[0][1] < a[1][1]
        and a[0][2] < b[1][2]
        and b[0][2] < a[1][2]
    )


def bounds_of(boxes) -> Box | None:
    boxes = list(boxes)
    if not boxes:
        return None
    lo = (
        min(b[0][0] for b in boxes),
        min(b[0][1] for b in boxes),
        min(b[0][2] for b in boxes),
    )
    hi = (
        max(b[1][0] for b in boxes),
        max(b[1][1] for b in boxes),
        max(b[1][2] for b in boxes),
    )
    return (lo, hi)
