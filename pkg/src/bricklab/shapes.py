"""Brick shape catalog: occupancy cells, connection points, and colors.

A shape is a set of occupancy cells in its local frame plus an ordered
list of snaps (connection points). Each snap has a position on the local
LDU lattice, an outward axis, and a gender; a stud mates with an
anti-stud when their world positions coincide and their axes are
anti-parallel. Catalogs are data driven and serialize to JSON, with a
built-in parametric catalog that covers plain bricks and plates, a
slope, a windshield wedge, a side-stud brick, wheels, a wheel carrier
with lateral pins, rotor blades, and a round cap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from bricklab.geometry import (
    AXIS_UNITS,
    PLATE_HEIGHT,
    Box,
    Vec,
    merge_cells,
)

STUD = "stud"
ANTI_STUD = "anti_stud"

CATALOG_VERSION = 1


@dataclass(frozen=True)
class SnapSpec:
    """One connection point in a shape's local frame."""

    snap_index: int
    position: Vec
    axis: Vec
    gender: str

    def __post_init__(self):
        if self.axis not in AXIS_UNITS:
            raise ValueError(f"snap axis must be axis aligned: {self.axis}")
        if self.gender not in (STUD, ANTI_STUD):
            raise ValueError(f"unknown snap gender: {self.gender}")


@dataclass(frozen=True)
class BrickShape:
    shape_id: int
    name: str
    cells: frozenset[Vec]
    snaps: tuple[SnapSpec, ...]
    boxes: tuple[Box, ...]  # merged local occupancy, derived from cells

    @staticmethod
    def build(shape_id: int, name: str, cells, snaps) -> "BrickShape":
        cells = frozenset(tuple(c) for c in cells)
        if not cells:
            raise ValueError(f"shape {name!r} has empty occupancy")
        specs = tuple(
            SnapSpec(i, tuple(pos), tuple(axis), gender)
            for i, (pos, axis, gender) in enumerate(snaps)
        )
        for spec in specs:
            if not _anchored(spec, cells):
                raise ValueError(
                    f"shape {name!r} snap {spec.snap_index} at "
                    f"{spec.position} is detached from its occupancy"
                )
        return BrickShape(shape_id, name, cells, specs, merge_cells(cells))


def _anchored(spec: SnapSpec, cells: frozenset[Vec]) -> bool:
    # The anchor cell of a snap must be inside or adjacent to occupancy.
    x, y, z = spec.position
    near_x = {x // 20, (x + 10) // 20, (x - 10) // 20}
    near_y = {y // 20, (y + 10) // 20, (y - 10) // 20}
    near_z = {z // 8, (z - 1) // 8, (z + 1) // 8}
    for cx in near_x:
        for cy in near_y:
            for cz in near_z:
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        for dz in (-1, 0, 1):
                            if (cx + dx, cy + dy, cz + dz) in cells:
                                return True
    return False


@dataclass(frozen=True)
class Color:
    color_id: int
    name: str
    rgb: tuple[int, int, int]


class Catalog:
    """Shape and color lookup tables."""

    def __init__(self, shapes, colors):
        self.shapes: dict[int, BrickShape] = {}
        self.by_name: dict[str, BrickShape] = {}
        for shape in shapes:
            if shape.shape_id in self.shapes:
                raise ValueError(f"duplicate shape id {shape.shape_id}")
            if shape.name in self.by_name:
                raise ValueError(f"duplicate shape name {shape.name!r}")
            self.shapes[shape.shape_id] = shape
            self.by_name[shape.name] = shape
        self.colors: dict[int, Color] = {}
        for color in colors:
            if color.color_id in self.colors:
                raise ValueError(f"duplicate color id {color.color_id}")
            self.colors[color.color_id] = color
        if not any(
            snap.axis[2] == 0 for s in self.shapes.values() for snap in s.snaps
        ):
            raise ValueError("catalog has no shape with a horizontal snap")

    def shape(self, shape_id: int) -> BrickShape:
        return self.shapes[shape_id]

    def shape_named(self, name: str) -> BrickShape:
        return self.by_name[name]

    def color(self, color_id: int) -> Color:
        return self.colors[color_id]

    def shape_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.shapes))

    def color_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.colors))

    def to_json(self) -> dict:
        return {
            "version": CATALOG_VERSION,
            "shapes": [
                {
                    "id": s.shape_id,
                    "name": s.name,
                    "occupancy": sorted(list(c) for c in s.cells),
                    "snaps": [
                        {
                            "pos": list(n.position),
                            "axis": list(n.axis),
                            "gender": n.gender,
                        }
                        for n in s.snaps
                    ],
                }
                for s in sorted(self.shapes.values(), key=lambda s: s.shape_id)
            ],
            "colors": [
                {"id": c.color_id, "name": c.name, "rgb": list(c.rgb)}
                for c in sorted(self.colors.values(), key=lambda c: c.color_id)
            ],
        }

    @staticmethod
    def from_json(data: dict) -> "Catalog":
        if data.get("version") != CATALOG_VERSION:
            raise ValueError(f"unsupported catalog version: {data.get('version')}")
        shapes = [
            BrickShape.build(
                s["id"],
                s["name"],
                [tuple(c) for c in s["occupancy"]],
                [(tuple(n["pos"]), tuple(n["axis"]), n["gender"]) for n in s["snaps"]],
            )
            for s in data["shapes"]
        ]
        colors = [Color(c["id"], c["name"], tuple(c["rgb"])) for c in data["colors"]]
        return Catalog(shapes, colors)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @staticmethod
    def load(path) -> "Catalog":
        return Catalog.from_json(json.loads(Path(path).read_text()))


def _rect(width: int, depth: int, plates: int):
    """Occupancy and snaps for a plain rectangular brick or plate."""
    cells = [
        (x, y, z) for x in range(width) for y in range(depth) for z in range(plates)
    ]
    snaps = []
    for x in range(width):
        for y in range(depth):
            snaps.append(((20 * x, 20 * y, 8 * plates), (0, 0, 1), STUD))
    for x in range(width):
        for y in range(depth):
            snaps.append(((20 * x, 20 * y, 0), (0, 0, -1), ANTI_STUD))
    return cells, snaps


def _slope2x2():
    # Tall back row at y = 0, low front row at y = 1.
    cells = [(x, 0, z) for x in range(2) for z in range(3)]
    cells += [(x, 1, 0) for x in range(2)]
    snaps = [((20 * x, 0, 24), (0, 0, 1), STUD) for x in range(2)]
    snaps += [((20 * x, 20 * y, 0), (0, 0, -1), ANTI_STUD) for x in range(2) for y in range(2)]
    return cells, snaps


def _windshield2x2():
    # Like the slope but two bricks tall at the back.
    cells = [(x, 0, z) for x in range(2) for z in range(6)]
    cells += [(x, 1, 0) for x in range(2)]
    snaps = [((20 * x, 0, 48), (0, 0, 1), STUD) for x in range(2)]
    snaps += [((20 * x, 20 * y, 0), (0, 0, -1), ANTI_STUD) for x in range(2) for y in range(2)]
    return cells, snaps


def _headlight1x1():
    # A 1x1 brick with an extra stud on its +x face.
    cells = [(0, 0, z) for z in range(3)]
    snaps = [
        ((0, 0, 24), (0, 0, 1), STUD),
        ((0, 0, 0), (0, 0, -1), ANTI_STUD),
        ((10, 0, 12), (1, 0, 0), STUD),
    ]
    return cells, snaps


def _wheel():
    # Blocky wheel, one stud pitch across, one brick tall. The hub socket
    # opens on the +y face; a hubcap stud sits on the -y face so the wheel
    # stays selectable after mounting.
    cells = [(0, 0, z) for z in range(3)]
    snaps = [
        ((0, 10, 12), (0, 1, 0), ANTI_STUD),
        ((0, -10, 12), (0, -1, 0), STUD),
    ]
    return cells, snaps


def _axle2x2():
    # A 2x2 brick carrying one wheel pin on each lateral face.
    cells, snaps = _rect(2, 2, 3)
    snaps.append(((10, -10, 12), (0, -1, 0), STUD))
    snaps.append(((10, 30, 12), (0, 1, 0), STUD))
    return cells, snaps


def _rotor1x5():
    # A long thin blade plate with a single hub underneath its center.
    cells = [(x, 0, 0) for x in range(-2, 3)]
    snaps = [
        ((0, 0, 8), (0, 0, 1), STUD),
        ((0, 0, 0), (0, 0, -1), ANTI_STUD),
    ]
    return cells, snaps


def _round1x1():
    cells = [(0, 0, 0)]
    snaps = [
        ((0, 0, 8), (0, 0, 1), STUD),
        ((0, 0, 0), (0, 0, -1), ANTI_STUD),
    ]
    return cells, snaps


_BUILTIN_SHAPES = (
    ("brick1x1", lambda: _rect(1, 1, 3)),
    ("brick1x2", lambda: _rect(1, 2, 3)),
    ("brick2x2", lambda: _rect(2, 2, 3)),
    ("brick2x4", lambda: _rect(2, 4, 3)),
    ("brick2x6", lambda: _rect(2, 6, 3)),
    ("plate1x1", lambda: _rect(1, 1, 1)),
    ("plate1x2", lambda: _rect(1, 2, 1)),
    ("plate2x2", lambda: _rect(2, 2, 1)),
    ("plate2x4", lambda: _rect(2, 4, 1)),
    ("plate2x6", lambda: _rect(2, 6, 1)),
    ("slope2x2", _slope2x2),
    ("windshield2x2", _windshield2x2),
    ("headlight1x1", _headlight1x1),
    ("wheel", _wheel),
    ("axle2x2", _axle2x2),
    ("rotor1x5", _rotor1x5),
    ("round1x1", _round1x1),
)

_BUILTIN_COLORS = (
    ("white", (242, 243, 242)),
    ("light_gray", (160, 165, 169)),
    ("dark_gray", (99, 95, 98)),
    ("black", (27, 42, 52)),
    ("red", (196, 40, 28)),
    ("dark_red", (123, 46, 47)),
    ("blue", (13, 105, 172)),
    ("dark_blue", (32, 58, 86)),
    ("yellow", (245, 205, 48)),
    ("orange", (218, 133, 65)),
    ("green", (40, 127, 71)),
    ("dark_green", (39, 70, 45)),
    ("tan", (215, 197, 154)),
    ("brown", (105, 64, 40)),
    ("purple", (123, 93, 175)),
    ("sand_blue", (116, 134, 157)),
)


def builtin_catalog() -> Catalog:
    """The default catalog: 17 parametric shapes and 16 colors."""
    shapes = [
        BrickShape.build(i + 1, name, *builder())
        for i, (name, builder) in enumerate(_BUILTIN_SHAPES)
    ]
    colors = [Color(i, name, rgb) for i, (name, rgb) in enumerate(_BUILTIN_COLORS)]
    return Catalog(shapes, colors)
