"""Scripted online expert for two-phase rebuild episodes.

Given full symbolic state the expert emits one supervising action per
step, or terminates the episode early when the scene has drifted more
than one brick away from the top instruction snapshot or when a snap it
needs is not selectable on screen.

During the break phase it removes one brick at a time, pushing a fresh
instruction snapshot after every removal, and switches phase once the
scene is empty. During the make phase it rebuilds toward the top
snapshot, popping it once matched, and finishes when the scene equals
the task target. All comparisons are exact up to a single lattice rigid
transform, so the rebuilt structure may sit anywhere in the world.

Repairs cover one deviation at a time: extra bricks are removed, missing
bricks are inserted, misplaced bricks are translated, rotated, mated
onto the structure, or taken out and rebuilt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from bricklab.assembly import (
    Assembly,
    BrickInstance,
    assembly_bounds,
    brick_bounds,
    check_collision,
    connected_components,
    derive_edges,
    mate_pose,
    recolor_assembly,
    world_snap,
)
from bricklab.env import (
    Action,
    Assemble,
    BreakMakeEnv,
    Disassemble,
    Done,
    Phase,
    Pick,
    PopInstruction,
    PushInstruction,
    Rotate,
    SwitchPhase,
    TaskSpec,
    Translate,
    action_mode,
    action_to_json,
    trajectory_header,
    trajectory_step,
    DIRECTIONS,
    ROTATE_ANGLES,
    TRANSLATE_STEPS,
)
from bricklab.geometry import (
    BRICK_HEIGHT,
    STUD_PITCH,
    Pose,
    rotate_pose_about_point,
    rotate_vec,
    rotation_about,
)
from bricklab.metrics import Scores, match, match_statistics, score
from bricklab.render import FrameBuffers, snap_pixels, visible_snaps
from bricklab.shapes import Catalog


@dataclass
class ExpertAction:
    """A concrete supervising action, or an early termination marker."""

    action: Optional[Action] = None
    terminate: bool = False
    reason: str = ""


def _terminate(reason: str) -> ExpertAction:
    return ExpertAction(action=None, terminate=True, reason=reason)


def _choice(rng: np.random.Generator, items):
    items = sorted(items)
    if len(items) == 1:
        return items[0]
    return items[int(rng.integers(0, len(items)))]


def _snap_click(fb: FrameBuffers, instance_id: int, snap_index: int, rng):
    pixels = snap_pixels(fb, instance_id, snap_index)
    if not len(pixels):
        return None
    row, col = pixels[int(rng.integers(0, len(pixels)))]
    return (int(row), int(col))


def _visible_of(visible, instance_id):
    return sorted(idx for inst, idx in visible if inst == instance_id)


def expert_act(
    catalog: Catalog,
    scene: Assembly,
    target: Assembly,
    stack_snapshots: list[Assembly],
    phase: Phase,
    fb: FrameBuffers,
    rng: np.random.Generator,
    recolor: Optional[tuple[int, int]] = None,
) -> ExpertAction:
    """One supervising action for the current state."""
    effective_target = (
        recolor_assembly(target, *recolor) if recolor else target
    )

    if phase is Phase.BREAK and not stack_snapshots:
        # Capture the intact model before touching anything.
        return ExpertAction(PushInstruction())

    if phase is Phase.MAKE and not stack_snapshots:
        if _equivalent_counts(catalog, scene, effective_target):
            return ExpertAction(Done())
        return _terminate("stack_exhausted")

    reference = stack_snapshots[-1]
    if phase is Phase.MAKE and recolor:
        # The stack was recorded in the original colors; the rebuild
        # happens in the substituted ones.
        reference = recolor_assembly(reference, *recolor)

    result = match(scene, reference)
    stats = match_statistics(result, catalog, scene, reference)
    misplaced = stats.misplaced

    if len(stats.missing) > 1:
        return _terminate("missing_many")
    if len(misplaced) > 1:
        return _terminate("misplaced_many")
    if misplaced and len(scene) != len(reference):
        return _terminate("misplaced_with_count_mismatch")

    visible = visible_snaps(fb)

    if phase is Phase.BREAK:
        removed = len(reference) - len(scene)
        if removed > 1 or removed < 0:
            return _terminate("break_out_of_sync")
        if removed == 1:
            return ExpertAction(PushInstruction())
        if len(scene) == 0:
            return ExpertAction(SwitchPhase())
    else:
        if len(scene) == len(effective_target) and _equivalent_counts(
            catalog, scene, effective_target
        ):
            return ExpertAction(Done())
        if len(scene) == len(reference) and len(result.pose_correct) == len(scene):
            return ExpertAction(PopInstruction())

    if stats.extra:
        return _remove_one(stats.extra, fb, visible, rng, "remove_extra")

    if stats.missing:
        brick = reference.bricks[_choice(rng, stats.missing)]
        return ExpertAction(Pick(brick.shape_id, brick.color_id))

    if misplaced:
        eid = next(iter(misplaced))
        desired = result.transform.inverse().compose(
            reference.bricks[result.mapping[eid]].pose
        )
        if eid in stats.misplaced_connected:
            return _fix_connected(
                catalog, scene, eid, desired, fb, visible, rng
            )
        return _fix_loose(
            catalog,
            scene,
            reference,
            result,
            eid,
            desired,
            fb,
            visible,
            rng,
        )

    if phase is Phase.BREAK and scene.bricks:
        return _break_removal(catalog, scene, fb, visible, rng)

    return _terminate("no_action")


def _equivalent_counts(catalog, a, b) -> bool:
    if len(a) != len(b):
        return False
    if len(a) == 0:
        return True
    return len(match(a, b).pose_correct) == len(a)


def _remove_one(candidates, fb, visible, rng, context):
    clickable = [
        eid for eid in candidates if _visible_of(visible, eid)
    ]
    if not clickable:
        return _terminate(f"snap_not_visible:{context}")
    eid = _choice(rng, clickable)
    snap = _choice(rng, _visible_of(visible, eid))
    click = _snap_click(fb, eid, snap, rng)
    return ExpertAction(Disassemble(click))


def _collision_free(catalog, scene, eid, pose) -> bool:
    brick = scene.bricks[eid]
    candidate = BrickInstance(eid, brick.shape_id, brick.color_id, pose)
    return not check_collision(catalog, scene, candidate, exclude_id=eid)


def _single_translate(current: Pose, desired: Pose):
    """Direction and magnitude indices if one translate action fixes the pose."""
    if current.rotation != desired.rotation:
        return None
    delta = tuple(d - c for c, d in zip(current.translation, desired.translation))
    nonzero = [k for k in range(3) if delta[k]]
    if len(nonzero) != 1:
        return None
    axis = nonzero[0]
    unit = BRICK_HEIGHT if axis == 2 else STUD_PITCH
    steps, remainder = divmod(abs(delta[axis]), unit)
    if remainder or steps not in TRANSLATE_STEPS:
        return None
    direction = tuple(
        (1 if delta[axis] > 0 else -1) if k == axis else 0 for k in range(3)
    )
    return DIRECTIONS.index(direction), TRANSLATE_STEPS.index(steps)


def _rotation_fixes(catalog, scene, eid, desired, visible):
    """Visible snap and angle pairs whose single rotation lands exactly."""
    brick = scene.bricks[eid]
    fixes = []
    for snap in _visible_of(visible, eid):
        position, axis, _ = world_snap(catalog, brick, snap)
        for angle in ROTATE_ANGLES:
            turn = rotation_about(axis, angle // 90)
            landed = rotate_pose_about_point(brick.pose, turn, position)
            if landed == desired and _collision_free(catalog, scene, eid, landed):
                fixes.append((snap, angle))
    return fixes


def _fix_connected(catalog, scene, eid, desired, fb, visible, rng):
    own_visible = _visible_of(visible, eid)
    translate = _single_translate(scene.bricks[eid].pose, desired)
    if translate and own_visible and _collision_free(catalog, scene, eid, desired):
        snap = _choice(rng, own_visible)
        click = _snap_click(fb, eid, snap, rng)
        return ExpertAction(Translate(click, translate[0], translate[1]))
    fixes = _rotation_fixes(catalog, scene, eid, desired, visible)
    if fixes:
        snap, angle = _choice(rng, fixes)
        click = _snap_click(fb, eid, snap, rng)
        return ExpertAction(Rotate(click, angle))
    return _remove_one({eid}, fb, visible, rng, "remove_misplaced")


def _assemble_candidates(catalog, scene, reference, result, eid, desired):
    """Mating snap pairs that would land the brick exactly at its slot."""
    tid = result.mapping[eid]
    inverse_map = {t: e for e, t in result.mapping.items()}
    pairs = []
    for edge in sorted(
        derive_edges(catalog, reference),
        key=lambda e: (e.instance_a, e.snap_a, e.instance_b, e.snap_b),
    ):
        if tid == edge.instance_a:
            own_snap, other, other_snap = edge.snap_a, edge.instance_b, edge.snap_b
        elif tid == edge.instance_b:
            own_snap, other, other_snap = edge.snap_b, edge.instance_a, edge.snap_a
        else:
            continue
        sid = inverse_map.get(other)
        if sid is None or sid not in result.pose_correct:
            continue
        pairs.append((own_snap, sid, other_snap))
    return pairs


def _fix_loose(catalog, scene, reference, result, eid, desired, fb, visible, rng):
    brick = scene.bricks[eid]
    candidates = _assemble_candidates(catalog, scene, reference, result, eid, desired)

    def landing(pose, own_snap, sid, other_snap):
        dest_pos, dest_axis, _ = world_snap(catalog, scene.bricks[sid], other_snap)
        probe = BrickInstance(eid, brick.shape_id, brick.color_id, pose)
        return mate_pose(catalog, probe, own_snap, dest_pos, dest_axis)

    ready = []
    for own_snap, sid, other_snap in candidates:
        if landing(brick.pose, own_snap, sid, other_snap) != desired:
            continue
        if not _collision_free(catalog, scene, eid, desired):
            continue
        if (eid, own_snap) in visible and (sid, other_snap) in visible:
            ready.append((own_snap, sid, other_snap))
    if ready:
        own_snap, sid, other_snap = _choice(rng, ready)
        click = _snap_click(fb, eid, own_snap, rng)
        release = _snap_click(fb, sid, other_snap, rng)
        return ExpertAction(Assemble(click, release))

    # Orientation first: one visible rotation that makes a mate land exactly.
    pre_turns = []
    for snap in _visible_of(visible, eid):
        position, axis, _ = world_snap(catalog, brick, snap)
        for angle in ROTATE_ANGLES:
            turn = rotation_about(axis, angle // 90)
            turned = rotate_pose_about_point(brick.pose, turn, position)
            if not _collision_free(catalog, scene, eid, turned):
                continue
            for own_snap, sid, other_snap in candidates:
                if landing(turned, own_snap, sid, other_snap) == desired:
                    pre_turns.append((snap, angle))
                    break
    if pre_turns:
        snap, angle = _choice(rng, pre_turns)
        click = _snap_click(fb, eid, snap, rng)
        return ExpertAction(Rotate(click, angle))

    if not candidates:
        return _remove_one({eid}, fb, visible, rng, "remove_unmatable")
    return _terminate("snap_not_visible:assemble")


def _break_removal(catalog, scene, fb, visible, rng):
    """Default break action: take out one selectable, non-separating brick.

    Keeping the remainder connected guarantees the reverse order can be
    rebuilt with mate actions alone. Tilted bricks and outer bricks go
    first so that the rebuild later re-anchors on an upright, central
    brick and stays level and in frame.
    """
    centroid = _scene_centroid(catalog, scene)
    components = len(connected_components(catalog, scene))
    candidates = []
    for eid in sorted(scene.bricks):
        own = _visible_of(visible, eid)
        if not own:
            continue
        if len(scene) > 1:
            rest = scene.copy()
            rest.remove(eid)
            rest_components = len(connected_components(catalog, rest))
            if rest_components > max(components, 1):
                continue
        brick = scene.bricks[eid]
        tilted = int(rotate_vec(brick.pose.rotation, (0, 0, 1)) != (0, 0, 1))
        lo, hi = brick_bounds(catalog, brick)
        offset = tuple((a + b) / 2 - c for a, b, c in zip(lo, hi, centroid))
        distance_band = int(math.hypot(*offset) // 20)
        candidates.append(((tilted, distance_band, len(own)), eid))
    if not candidates:
        return _terminate("snap_not_visible:break_removal")
    best = max(key for key, _ in candidates)
    pool = [eid for key, eid in candidates if key == best]
    eid = _choice(rng, pool)
    snap = _choice(rng, _visible_of(visible, eid))
    click = _snap_click(fb, eid, snap, rng)
    return ExpertAction(Disassemble(click))


def _scene_centroid(catalog, scene):
    lo, hi = assembly_bounds(catalog, scene)
    return tuple((a + b) / 2 for a, b in zip(lo, hi))


def expert_act_env(env: BreakMakeEnv, rng: np.random.Generator) -> ExpertAction:
    assert env.task is not None
    return expert_act(
        env.catalog,
        env.scene,
        env.task.target,
        [entry.snapshot for entry in env.stack],
        env.phase,
        env.framebuffers,
        rng,
        recolor=env.task.recolor,
    )


@dataclass
class RolloutResult:
    records: list[dict]
    scores: Scores
    finished: bool  # episode ended with an explicit done action
    terminated_early: bool
    reason: str
    steps: int
    max_stack_depth: int


def expert_rollout(
    catalog: Catalog,
    task: TaskSpec,
    seed: int,
    env: BreakMakeEnv | None = None,
    jitter: bool = False,
) -> RolloutResult:
    """Run the expert in a closed loop on one task."""
    if env is None:
        env = BreakMakeEnv(catalog, jitter=jitter)
    env_seed, expert_seed = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(expert_seed)
    env.reset(task, env_seed)
    records = [trajectory_header(catalog, task, seed, env.jitter)]
    finished = False
    terminated = False
    reason = ""
    max_depth = 0
    while not env.done:
        decision = expert_act_env(env, rng)
        if decision.terminate:
            terminated = True
            reason = decision.reason
            records.append({"type": "terminate_early", "reason": reason})
            break
        phase = env.phase
        step_index = env.steps
        result = env.step(decision.action)
        max_depth = max(max_depth, len(env.stack))
        records.append(
            trajectory_step(
                step_index,
                phase,
                decision.action,
                result.action_success,
                expert_action=action_to_json(decision.action),
                resolved=result.info.get("resolved"),
            )
        )
        if isinstance(decision.action, Done) and result.action_success:
            finished = True
    final_scores = score(catalog, env.scene, env.effective_target())
    return RolloutResult(
        records=records,
        scores=final_scores,
        finished=finished,
        terminated_early=terminated,
        reason=reason,
        steps=env.steps,
        max_stack_depth=max_depth,
    )
