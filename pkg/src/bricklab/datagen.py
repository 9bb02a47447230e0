"""Procedural dataset generators and dataset validation.

Two generators ship with the package. Random constructions grow a
connected structure by repeatedly mating a random new brick onto a free
snap of the structure, rejecting collisions, which yields compact blobs
that exercise lateral as well as vertical attachment. The vehicle
grammar samples a fixed table of independent categorical choices
(dimensions, cab, windshield, wheels, optional features, and a color per
component) and deterministically expands them into a car-like assembly
with four side-mounted wheels.

Every generated assembly is collision free, connected, framed by the
default camera with headroom for floating inserts, and reproducible
from its seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bricklab.assembly import (
    Assembly,
    BrickInstance,
    assembly_bounds,
    check_collision,
    derive_edges,
    is_connected,
    load_assembly,
    mate_pose,
    save_assembly,
    validate_assembly,
    world_snap,
)
from bricklab.geometry import Pose, rotation_about
from bricklab.render import default_camera, render, visible_snaps
from bricklab.shapes import ANTI_STUD, STUD, Catalog


class GenerationError(RuntimeError):
    pass


# -- random constructions ---------------------------------------------------


@dataclass(frozen=True)
class RandomConstructionConfig:
    brick_count: int
    seed: int
    shape_names: tuple[str, ...] | None = None
    color_ids: tuple[int, ...] | None = None
    max_attempts: int = 1000  # placement retries per brick
    max_restarts: int = 60
    frame_fit: bool = True

    def __post_init__(self):
        if self.brick_count < 1:
            raise ValueError("brick_count must be at least 1")


def _float_half_extent(catalog: Catalog, assembly: Assembly) -> float:
    """Largest lateral half extent a freshly inserted brick could have."""
    largest = 20.0
    for shape_id in {b.shape_id for b in assembly.bricks.values()}:
        shape = catalog.shape(shape_id)
        for lo, hi in shape.boxes:
            largest = max(largest, hi[0] - lo[0], hi[1] - lo[1])
    return largest / 2 + 10


def _frame_fits(catalog: Catalog, assembly: Assembly, margin: int = 6) -> bool:
    """Bounds plus floating-insert headroom must project inside the frame.

    The headroom probes cover a brick of the assembly's largest footprint
    hovering 48 LDU above the structure, which is where inserts appear
    during the rebuild phase.
    """
    camera = default_camera()
    right, up, _ = camera.basis()
    look = np.array(camera.look_at)
    bounds = assembly_bounds(catalog, assembly)
    if bounds is None:
        return True
    lo, hi = bounds
    probes = [
        (x, y, z)
        for x in (lo[0], hi[0])
        for y in (lo[1], hi[1])
        for z in (lo[2], hi[2])
    ]
    center = ((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2)
    half = _float_half_extent(catalog, assembly)
    top = hi[2] + 48 + 24
    for dx in (-half, half):
        for dy in (-half, half):
            probes.append((center[0] + dx, center[1] + dy, top))
    size = 128
    for p in probes:
        rel = np.array(p, dtype=float) - look
        px = rel @ right / camera.scale + size / 2
        py = size / 2 - rel @ up / camera.scale
        if not (margin <= px < size - margin and margin <= py < size - margin):
            return False
    return True


def _recenter(catalog: Catalog, assembly: Assembly) -> Assembly:
    bounds = assembly_bounds(catalog, assembly)
    lo, hi = bounds
    dx = -int(round((lo[0] + hi[0]) / 40.0)) * 20
    dy = -int(round((lo[1] + hi[1]) / 40.0)) * 20
    out = Assembly({}, assembly.next_instance_id)
    for iid, brick in assembly.bricks.items():
        tx, ty, tz = brick.pose.translation
        out.bricks[iid] = BrickInstance(
            iid,
            brick.shape_id,
            brick.color_id,
            Pose(brick.pose.rotation, (tx + dx, ty + dy, tz)),
        )
    return out


def generate_random_construction(
    catalog: Catalog, config: RandomConstructionConfig
) -> Assembly:
    """A connected, collision-free structure of exactly brick_count bricks."""
    rng = np.random.default_rng(config.seed)
    shape_ids = [
        catalog.shape_named(n).shape_id
        for n in (config.shape_names or sorted(catalog.by_name))
    ]
    color_ids = list(config.color_ids or catalog.color_ids())
    if not shape_ids or not color_ids:
        raise ValueError("shape and color subsets must be non-empty")

    for _ in range(config.max_restarts):
        assembly = Assembly()
        assembly.add(
            int(rng.choice(shape_ids)), int(rng.choice(color_ids)), Pose()
        )
        ok = True
        while len(assembly) < config.brick_count:
            if not _attach_random(catalog, assembly, shape_ids, color_ids, rng, config.max_attempts):
                ok = False
                break
        if not ok:
            continue
        assembly = _recenter(catalog, assembly)
        if config.frame_fit and not _frame_fits(catalog, assembly):
            continue
        validate_assembly(catalog, assembly)
        return assembly
    raise GenerationError(
        f"could not generate a {config.brick_count}-brick construction "
        f"from seed {config.seed}"
    )


def _attach_random(catalog, assembly, shape_ids, color_ids, rng, attempts) -> bool:
    mated = set()
    for e in derive_edges(catalog, assembly):
        mated.add((e.instance_a, e.snap_a))
        mated.add((e.instance_b, e.snap_b))
    free = []
    for iid in sorted(assembly.bricks):
        shape = catalog.shape(assembly.bricks[iid].shape_id)
        for spec in shape.snaps:
            if (iid, spec.snap_index) not in mated:
                free.append((iid, spec.snap_index))
    if not free:
        return False
    for _ in range(attempts):
        iid, snap_index = free[int(rng.integers(0, len(free)))]
        dest_pos, dest_axis, dest_gender = world_snap(
            catalog, assembly.bricks[iid], snap_index
        )
        shape_id = int(rng.choice(shape_ids))
        shape = catalog.shape(shape_id)
        wanted = ANTI_STUD if dest_gender == STUD else STUD
        options = [s.snap_index for s in shape.snaps if s.gender == wanted]
        if not options:
            continue
        snap = options[int(rng.integers(0, len(options)))]
        probe = BrickInstance(
            assembly.next_instance_id, shape_id, int(rng.choice(color_ids)), Pose()
        )
        pose = mate_pose(catalog, probe, snap, dest_pos, dest_axis)
        placed = BrickInstance(probe.instance_id, shape_id, probe.color_id, pose)
        if check_collision(catalog, assembly, placed):
            continue
        assembly.add(shape_id, placed.color_id, pose)
        return True
    return False


# -- vehicle grammar --------------------------------------------------------


@dataclass(frozen=True)
class ChoiceSpec:
    name: str
    kind: str  # "shape" or "color"
    options: tuple
    weights: tuple[float, ...] | None = None

    def probabilities(self) -> tuple[float, ...]:
        if self.weights is None:
            return tuple(1.0 / len(self.options) for _ in self.options)
        total = float(sum(self.weights))
        if total <= 0:
            raise ValueError(f"choice {self.name!r} has no weight")
        return tuple(w / total for w in self.weights)


def choice_entropy(probabilities) -> float:
    return -sum(p * math.log2(p) for p in probabilities if p > 0)


_WHEEL_COLORS = (3, 2, 7, 13)  # black, dark gray, dark blue, brown
_LIGHT_COLORS = (8, 0, 9, 4)  # yellow, white, orange, red
_TRIM_COLORS = (0, 1, 2, 3, 4, 6, 8, 9)


def default_vehicle_choices() -> tuple[ChoiceSpec, ...]:
    body = tuple(range(16))
    return (
        ChoiceSpec("length", "shape", (8, 10, 12)),
        ChoiceSpec("hood_len", "shape", (2, 4)),
        ChoiceSpec("cab_len", "shape", (2, 4)),
        ChoiceSpec("cab_height", "shape", (1, 2)),
        ChoiceSpec("windshield", "shape", ("windshield2x2", "slope2x2")),
        ChoiceSpec("roof", "shape", ("plate", "ornament")),
        ChoiceSpec("front_axle", "shape", (0, 1)),
        ChoiceSpec("rear_axle", "shape", (0, 1)),
        ChoiceSpec("wings", "shape", ("none", "rear", "mid")),
        ChoiceSpec("rotor", "shape", (False, True)),
        ChoiceSpec("headlights", "shape", (2, 4)),
        ChoiceSpec("bumper", "shape", (False, True)),
        ChoiceSpec("cargo", "shape", ("none", "box", "flat")),
        ChoiceSpec("trim", "shape", (0, 2)),
        ChoiceSpec("body_color", "color", body),
        ChoiceSpec("cab_color", "color", body),
        ChoiceSpec("hood_color", "color", body),
        ChoiceSpec("roof_color", "color", _TRIM_COLORS),
        ChoiceSpec("wing_color", "color", _TRIM_COLORS),
        ChoiceSpec("wheel_color", "color", _WHEEL_COLORS),
        ChoiceSpec("light_color", "color", _LIGHT_COLORS),
        ChoiceSpec("chassis_color", "color", (3, 2)),
    )


@dataclass(frozen=True)
class VehicleGrammarConfig:
    seed: int
    choices: tuple[ChoiceSpec, ...] = field(default_factory=default_vehicle_choices)
    size_band: tuple[int, int] = (19, 73)


def grammar_entropy(config: VehicleGrammarConfig) -> tuple[float, float]:
    """Shape-affecting and color-affecting bits, independent choice model."""
    shape_bits = sum(
        choice_entropy(c.probabilities()) for c in config.choices if c.kind == "shape"
    )
    color_bits = sum(
        choice_entropy(c.probabilities()) for c in config.choices if c.kind == "color"
    )
    return shape_bits, color_bits


def _sample_choices(config: VehicleGrammarConfig, rng) -> dict:
    sampled = {}
    for spec in config.choices:
        probabilities = spec.probabilities()
        index = int(rng.choice(len(spec.options), p=probabilities))
        sampled[spec.name] = spec.options[index]
    return sampled


class _Builder:
    """Places bricks at cell offsets and mates snap-attached parts."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.assembly = Assembly()

    def place(self, shape_name, color, cell, rotation=0):
        shape = self.catalog.shape_named(shape_name)
        pose = Pose(rotation, (20 * cell[0], 20 * cell[1], 8 * cell[2]))
        brick = BrickInstance(
            self.assembly.next_instance_id, shape.shape_id, color, pose
        )
        if check_collision(self.catalog, self.assembly, brick):
            raise GenerationError(
                f"grammar inconsistency: {shape_name} collides at {cell}"
            )
        return self.assembly.add(shape.shape_id, color, pose)

    def attach(self, shape_name, color, host_id, host_snap):
        shape = self.catalog.shape_named(shape_name)
        host = self.assembly.bricks[host_id]
        dest_pos, dest_axis, dest_gender = world_snap(self.catalog, host, host_snap)
        wanted = ANTI_STUD if dest_gender == STUD else STUD
        snap = next(s.snap_index for s in shape.snaps if s.gender == wanted)
        probe = BrickInstance(
            self.assembly.next_instance_id, shape.shape_id, color, Pose()
        )
        pose = mate_pose(self.catalog, probe, snap, dest_pos, dest_axis)
        brick = BrickInstance(probe.instance_id, shape.shape_id, color, pose)
        if check_collision(self.catalog, self.assembly, brick):
            raise GenerationError(
                f"grammar inconsistency: {shape_name} collides on snap {host_snap}"
            )
        return self.assembly.add(shape.shape_id, color, pose)


def _tile_lane(builder, x, y0, depth, layer, color, spans=(6, 4, 2)):
    """Fill a 2-cell-wide lane along y with 2xN plates."""
    y = y0
    remaining = depth
    while remaining > 0:
        for span in spans:
            if span <= remaining:
                builder.place(f"plate2x{span}", color, (x, y, layer))
                y += span
                remaining -= span
                break
        else:
            raise GenerationError(f"cannot tile lane of depth {depth}")


def generate_vehicle(catalog: Catalog, config: VehicleGrammarConfig) -> Assembly:
    """Expand one seeded draw of the grammar into a vehicle assembly."""
    rng = np.random.default_rng(config.seed)
    picked = _sample_choices(config, rng)
    builder = _Builder(catalog)
    yaw = rotation_about((0, 0, 1), 1)

    length = picked["length"]
    hood_len = picked["hood_len"]
    cab_len = picked["cab_len"]
    bed_len = length - cab_len - 2 - hood_len  # windshield spans two rows
    if bed_len < 2:
        bed_len = 2
        length = bed_len + cab_len + 2 + hood_len
    cab0 = bed_len
    ws_row = bed_len + cab_len
    hood0 = ws_row + 2

    body = picked["body_color"]

    # Wheel carriers at the bottom, pins facing outward after a yaw.
    carriers = []
    rear_row = 1 + picked["rear_axle"]
    front_row = length - 3 - picked["front_axle"]
    for row in (rear_row, front_row):
        carriers.append(
            builder.place("axle2x2", picked["chassis_color"], (2, row, 0), yaw)
        )

    # Wheels mate onto the carrier pins (snap indices 8 and 9).
    for carrier in carriers:
        for pin in (8, 9):
            builder.attach("wheel", picked["wheel_color"], carrier, pin)

    # A center spine ties the carriers and both deck lanes together. Its
    # tiling seams are staggered against the deck's so every plate ends up
    # bridged by the neighboring layer.
    _tile_lane(builder, 1, 0, length, 3, picked["chassis_color"], spans=(4, 6, 2))
    for lane_x in (0, 2):
        _tile_lane(builder, lane_x, 0, length, 4, body)

    # Cab walls and roof.
    cab_color = picked["cab_color"]
    for level in range(picked["cab_height"]):
        for lane_x in (0, 2):
            for row in range(cab0, cab0 + cab_len, 2):
                builder.place("brick2x2", cab_color, (lane_x, row, 5 + 3 * level))
    roof_layer = 5 + 3 * picked["cab_height"]
    for lane_x in (0, 2):
        _tile_lane(builder, lane_x, cab0, cab_len, roof_layer, picked["roof_color"])
    if picked["roof"] == "ornament" and not picked["rotor"]:
        builder.place("round1x1", picked["light_color"], (1, cab0, roof_layer + 1))
        builder.place("round1x1", picked["light_color"], (2, cab0, roof_layer + 1))

    # Windshield pair leaning toward the hood.
    for lane_x in (0, 2):
        builder.place(picked["windshield"], picked["hood_color"], (lane_x, ws_row, 5))

    # Hood plates ahead of the windshield's low row.
    hood_rows = length - hood0
    if hood_rows > 0:
        for lane_x in (0, 2):
            _tile_lane(builder, lane_x, hood0, hood_rows, 5, picked["hood_color"])

    # Headlight bricks on the hood front, side studs facing forward.
    light_cols = (0, 3) if picked["headlights"] == 2 else (0, 1, 2, 3)
    head_ids = []
    for col in light_cols:
        head_ids.append(
            builder.place("headlight1x1", body, (col, length - 1, 6), yaw)
        )
    for head in head_ids:
        builder.attach("round1x1", picked["light_color"], head, 2)

    # Optional features.
    if picked["bumper"]:
        builder.place("plate2x2", picked["chassis_color"], (2, length - 1, 2), yaw)
    wing_row = None
    if picked["wings"] != "none":
        wing_row = 0 if picked["wings"] == "rear" else max(0, bed_len - 2)
        for x0 in (1, 7):  # each spans six columns, overhanging the deck
            builder.place("plate2x6", picked["wing_color"], (x0, wing_row, 5), yaw)
    if picked["rotor"]:
        mast = builder.place("round1x1", picked["chassis_color"], (1, cab0, roof_layer + 1))
        builder.attach("rotor1x5", picked["wing_color"], mast, 0)
    if picked["cargo"] != "none":
        cargo_row = 2 if wing_row == 0 else 0
        clear_of_wings = wing_row is None or not (
            wing_row <= cargo_row + 1 and cargo_row <= wing_row + 1
        )
        if cargo_row + 2 <= bed_len and clear_of_wings:
            tall = picked["cargo"] == "box"
            for lane_x in (0, 2):
                builder.place(
                    "brick2x2" if tall else "plate2x2", body, (lane_x, cargo_row, 5)
                )
    for k in range(picked["trim"]):
        builder.place("round1x1", picked["light_color"], (1 + k, hood0, 6))

    assembly = _recenter(catalog, builder.assembly)
    validate_assembly(catalog, assembly)
    if not is_connected(catalog, assembly):
        raise GenerationError("grammar inconsistency: vehicle is not connected")
    low, high = config.size_band
    if not low <= len(assembly) <= high:
        raise GenerationError(
            f"vehicle size {len(assembly)} outside band {config.size_band}"
        )
    if not _frame_fits(catalog, assembly):
        raise GenerationError("vehicle does not fit the default frame")
    return assembly


# -- dataset files ----------------------------------------------------------

MANIFEST_VERSION = 1


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def write_manifest(path, kind: str, config: dict, entries) -> None:
    data = {
        "version": MANIFEST_VERSION,
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "entries": [{"path": p, "split": s} for p, s in entries],
    }
    Path(path).write_text(json.dumps(data, indent=1))


def load_manifest(path):
    data = json.loads(Path(path).read_text())
    if data.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version: {data.get('version')}")
    base = Path(path).parent
    return [(str(base / e["path"]), e["split"]) for e in data["entries"]], data


@dataclass
class DatasetReport:
    checked: int = 0
    malformed: list = field(default_factory=list)
    occupancy_violations: list = field(default_factory=list)
    connectivity_violations: list = field(default_factory=list)
    visibility_violations: list = field(default_factory=list)
    sizes: list = field(default_factory=list)

    @property
    def violation_count(self) -> int:
        return (
            len(self.malformed)
            + len(self.occupancy_violations)
            + len(self.connectivity_violations)
            + len(self.visibility_violations)
        )

    def size_mean(self) -> float:
        return float(np.mean(self.sizes)) if self.sizes else 0.0

    def size_histogram(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for n in self.sizes:
            counts[n] = counts.get(n, 0) + 1
        return dict(sorted(counts.items()))


def validate_dataset(catalog: Catalog, paths) -> DatasetReport:
    """Structural checks over assembly files; malformed files are listed."""
    report = DatasetReport()
    for path in paths:
        report.checked += 1
        try:
            assembly = load_assembly(catalog, path)
        except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
            report.malformed.append((str(path), str(exc)))
            continue
        report.sizes.append(len(assembly))
        try:
            validate_assembly(catalog, assembly)
        except ValueError as exc:
            report.occupancy_violations.append((str(path), str(exc)))
        if not is_connected(catalog, assembly):
            report.connectivity_violations.append((str(path), "not connected"))
        fb = render(catalog, assembly, default_camera())
        seen = {inst for inst, _ in visible_snaps(fb)}
        hidden = [iid for iid in assembly.bricks if iid not in seen]
        if hidden:
            report.visibility_violations.append(
                (str(path), f"bricks without visible snaps: {hidden}")
            )
    return report


def generate_dataset(
    catalog: Catalog,
    kind: str,
    count: int,
    seed: int,
    out_dir,
    brick_count: int | None = None,
    splits: tuple[float, float, float] = (1.0, 0.0, 0.0),
):
    """Write count assemblies plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    child_seeds = [int(s.generate_state(1)[0]) for s in root.spawn(count)]
    entries = []
    split_names = ("train", "val", "test")
    cut_train = int(round(splits[0] * count))
    cut_val = cut_train + int(round(splits[1] * count))
    for index, child in enumerate(child_seeds):
        if kind == "rc":
            if brick_count is None:
                raise ValueError("rc datasets need a brick count")
            assembly = generate_random_construction(
                catalog, RandomConstructionConfig(brick_count, child)
            )
            stem = f"rc{brick_count}_{index:05d}.json"
        elif kind == "vehicles":
            assembly = generate_vehicle(catalog, VehicleGrammarConfig(child))
            stem = f"vehicle_{index:05d}.json"
        else:
            raise ValueError(f"unknown dataset kind: {kind}")
        save_assembly(catalog, assembly, out / stem)
        split = split_names[0 if index < cut_train else 1 if index < cut_val else 2]
        entries.append((stem, split))
    config = {
        "kind": kind,
        "count": count,
        "seed": seed,
        "brick_count": brick_count,
        "splits": list(splits),
    }
    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, kind, config, entries)
    return manifest_path
