"""Posed brick instances, derived connectivity, collision, and file I/O.

An assembly is a mapping from instance id to a posed brick. Connection
edges are always derived from the geometry, never stored: two snaps form
an edge when their world positions coincide, their axes are
anti-parallel, and their genders differ. Collision works on the world
occupancy boxes of each brick; assemblies must keep all boxes pairwise
disjoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from bricklab.geometry import (
    Box,
    Pose,
    Vec,
    bounds_of,
    boxes_overlap,
    compose,
    minimal_rotation_mapping,
    rotate_vec,
    transform_box,
)
from bricklab.shapes import Catalog

ASSEMBLY_VERSION = 1


@dataclass(frozen=True)
class BrickInstance:
    instance_id: int
    shape_id: int
    color_id: int
    pose: Pose


@dataclass(frozen=True)
class Edge:
    """A mated snap pair, normalized so instance_a < instance_b."""

    instance_a: int
    snap_a: int
    instance_b: int
    snap_b: int

    @staticmethod
    def normalized(inst_a, snap_a, inst_b, snap_b) -> "Edge":
        if inst_a > inst_b:
            inst_a, snap_a, inst_b, snap_b = inst_b, snap_b, inst_a, snap_a
        return Edge(inst_a, snap_a, inst_b, snap_b)


@dataclass
class Assembly:
    bricks: dict[int, BrickInstance] = field(default_factory=dict)
    next_instance_id: int = 1

    def add(self, shape_id: int, color_id: int, pose: Pose) -> int:
        instance_id = self.next_instance_id
        self.bricks[instance_id] = BrickInstance(
            instance_id, shape_id, color_id, pose
        )
        self.next_instance_id += 1
        return instance_id

    def remove(self, instance_id: int) -> None:
        del self.bricks[instance_id]

    def repose(self, instance_id: int, pose: Pose) -> None:
        old = self.bricks[instance_id]
        self.bricks[instance_id] = BrickInstance(
            instance_id, old.shape_id, old.color_id, pose
        )

    def recolor(self, instance_id: int, color_id: int) -> None:
        old = self.bricks[instance_id]
        self.bricks[instance_id] = BrickInstance(
            instance_id, old.shape_id, color_id, old.pose
        )

    def copy(self) -> "Assembly":
        return Assembly(dict(self.bricks), self.next_instance_id)

    def __len__(self) -> int:
        return len(self.bricks)

    def instance_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.bricks))

    def state_key(self):
        """Hashable scene fingerprint (ignores the id counter)."""
        return tuple(
            (b.instance_id, b.shape_id, b.color_id, b.pose.rotation, b.pose.translation)
            for b in sorted(self.bricks.values(), key=lambda b: b.instance_id)
        )


def world_snap(catalog: Catalog, brick: BrickInstance, snap_index: int):
    """World position, axis, and gender of one snap of a posed brick."""
    shape = catalog.shape(brick.shape_id)
    if not 0 <= snap_index < len(shape.snaps):
        raise IndexError(
            f"snap {snap_index} out of range for shape {shape.name!r}"
        )
    spec = shape.snaps[snap_index]
    return (
        brick.pose.apply(spec.position),
        rotate_vec(brick.pose.rotation, spec.axis),
        spec.gender,
    )


def world_boxes(catalog: Catalog, brick: BrickInstance) -> tuple[Box, ...]:
    shape = catalog.shape(brick.shape_id)
    return tuple(transform_box(brick.pose, box) for box in shape.boxes)


def brick_bounds(catalog: Catalog, brick: BrickInstance) -> Box:
    return bounds_of(world_boxes(catalog, brick))


def assembly_bounds(catalog: Catalog, assembly: Assembly) -> Box | None:
    boxes = []
    for brick in assembly.bricks.values():
        boxes.extend(world_boxes(catalog, brick))
    return bounds_of(boxes)


def derive_edges(catalog: Catalog, assembly: Assembly) -> frozenset[Edge]:
    """All mated snap pairs, derived fresh from the geometry."""
    by_position: dict[Vec, list] = {}
    for instance_id in sorted(assembly.bricks):
        brick = assembly.bricks[instance_id]
        shape = catalog.shape(brick.shape_id)
        for spec in shape.snaps:
            pos = brick.pose.apply(spec.position)
            axis = rotate_vec(brick.pose.rotation, spec.axis)
            by_position.setdefault(pos, []).append(
                (instance_id, spec.snap_index, axis, spec.gender)
            )
    edges = set()
    for group in by_position.values():
        if len(group) < 2:
            continue
        for i, (inst_a, snap_a, axis_a, gender_a) in enumerate(group):
            for inst_b, snap_b, axis_b, gender_b in group[i + 1 :]:
                if inst_a == inst_b:
                    continue
                if gender_a == gender_b:
                    continue
                if (
                    axis_a[0] + axis_b[0]
                    or axis_a[1] + axis_b[1]
                    or axis_a[2] + axis_b[2]
                ):
                    continue
                edges.add(Edge.normalized(inst_a, snap_a, inst_b, snap_b))
    return frozenset(edges)


def check_collision(
    catalog: Catalog,
    assembly: Assembly,
    candidate: BrickInstance,
    exclude_id: int | None = None,
) -> bool:
    """True when the candidate's occupancy overlaps any other brick."""
    cand_boxes = world_boxes(catalog, candidate)
    cand_bounds = bounds_of(cand_boxes)
    for instance_id, other in assembly.bricks.items():
        if instance_id == exclude_id or instance_id == candidate.instance_id:
            continue
        other_bounds = brick_bounds(catalog, other)
        if not boxes_overlap(cand_bounds, other_bounds):
            continue
        for ob in world_boxes(catalog, other):
            for cb in cand_boxes:
                if boxes_overlap(cb, ob):
                    return True
    return False


def validate_assembly(catalog: Catalog, assembly: Assembly) -> None:
    """Raise ValueError on unknown ids or overlapping occupancy."""
    bricks = sorted(assembly.bricks.values(), key=lambda b: b.instance_id)
    for brick in bricks:
        if brick.shape_id not in catalog.shapes:
            raise ValueError(f"unknown shape id {brick.shape_id}")
        if brick.color_id not in catalog.colors:
            raise ValueError(f"unknown color id {brick.color_id}")
        if brick.instance_id < 1:
            raise ValueError(f"instance ids must be positive: {brick.instance_id}")
    cached = [(b.instance_id, world_boxes(catalog, b)) for b in bricks]
    for i, (id_a, boxes_a) in enumerate(cached):
        bounds_a = bounds_of(boxes_a)
        for id_b, boxes_b in cached[i + 1 :]:
            if not boxes_overlap(bounds_a, bounds_of(boxes_b)):
                continue
            for a in boxes_a:
                for b in boxes_b:
                    if boxes_overlap(a, b):
                        raise ValueError(
                            f"bricks {id_a} and {id_b} overlap"
                        )


def transform_assembly(assembly: Assembly, transform: Pose) -> Assembly:
    """Left-compose one rigid transform onto every brick pose."""
    out = Assembly({}, assembly.next_instance_id)
    for instance_id, brick in assembly.bricks.items():
        out.bricks[instance_id] = BrickInstance(
            instance_id,
            brick.shape_id,
            brick.color_id,
            transform.compose(brick.pose),
        )
    return out


def recolor_assembly(assembly: Assembly, old_color: int, new_color: int) -> Assembly:
    out = assembly.copy()
    for instance_id, brick in list(out.bricks.items()):
        if brick.color_id == old_color:
            out.recolor(instance_id, new_color)
    return out


def mate_pose(
    catalog: Catalog,
    moving: BrickInstance,
    moving_snap: int,
    dest_position: Vec,
    dest_axis: Vec,
) -> Pose:
    """Pose that mates one snap of a brick onto a destination snap.

    The brick keeps as much of its current orientation as possible: it is
    turned by the minimal rotation that makes the moving snap's axis
    anti-parallel to the destination axis, then translated so the two
    snap positions coincide.
    """
    shape = catalog.shape(moving.shape_id)
    spec = shape.snaps[moving_snap]
    world_axis = rotate_vec(moving.pose.rotation, spec.axis)
    target_axis = (-dest_axis[0], -dest_axis[1], -dest_axis[2])
    turn = minimal_rotation_mapping(world_axis, target_axis)
    rotation = compose(turn, moving.pose.rotation)
    sx, sy, sz = rotate_vec(rotation, spec.position)
    return Pose(
        rotation,
        (dest_position[0] - sx, dest_position[1] - sy, dest_position[2] - sz),
    )


def connected_components(catalog: Catalog, assembly: Assembly) -> list[set[int]]:
    ids = set(assembly.bricks)
    neighbors: dict[int, set[int]] = {i: set() for i in ids}
    for edge in derive_edges(catalog, assembly):
        neighbors[edge.instance_a].add(edge.instance_b)
        neighbors[edge.instance_b].add(edge.instance_a)
    components = []
    remaining = set(ids)
    while remaining:
        seed = min(remaining)
        stack = [seed]
        component = {seed}
        remaining.discard(seed)
        while stack:
            node = stack.pop()
            for other in neighbors[node]:
                if other in remaining:
                    remaining.discard(other)
                    component.add(other)
                    stack.append(other)
        components.append(component)
    return components


def is_connected(catalog: Catalog, assembly: Assembly) -> bool:
    if len(assembly) <= 1:
        return True
    return len(connected_components(catalog, assembly)) == 1


def assembly_to_json(catalog: Catalog, assembly: Assembly) -> dict:
    return {
        "version": ASSEMBLY_VERSION,
        "next_id": assembly.next_instance_id,
        "bricks": [
            {
                "id": b.instance_id,
                "shape": catalog.shape(b.shape_id).name,
                "color": b.color_id,
                "rot": b.pose.rotation,
                "pos": list(b.pose.translation),
            }
            for b in sorted(assembly.bricks.values(), key=lambda b: b.instance_id)
        ],
    }


def assembly_from_json(catalog: Catalog, data: dict) -> Assembly:
    if data.get("version") != ASSEMBLY_VERSION:
        raise ValueError(f"unsupported assembly version: {data.get('version')}")
    assembly = Assembly()
    max_id = 0
    for entry in data["bricks"]:
        shape = catalog.shape_named(entry["shape"])
        instance_id = int(entry["id"])
        if instance_id in assembly.bricks:
            raise ValueError(f"duplicate instance id {instance_id}")
        assembly.bricks[instance_id] = BrickInstance(
            instance_id,
            shape.shape_id,
            int(entry["color"]),
            Pose(int(entry["rot"]), tuple(int(c) for c in entry["pos"])),
        )
        max_id = max(max_id, instance_id)
    assembly.next_instance_id = max(int(data.get("next_id", 0)), max_id + 1)
    validate_assembly(catalog, assembly)
    return assembly


def save_assembly(catalog: Catalog, assembly: Assembly, path) -> None:
    Path(path).write_text(json.dumps(assembly_to_json(catalog, assembly)))


def load_assembly(catalog: Catalog, path) -> Assembly:
    return assembly_from_json(catalog, json.loads(Path(path).read_text()))
