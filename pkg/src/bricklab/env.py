"""Two-phase rebuild episodes with a cursor action space and a stack memory.

An episode starts in the break phase with the target assembly on screen.
The agent may take it apart, pushing image snapshots onto an instruction
stack as it goes. A phase switch clears the scene, and in the make phase
the agent rebuilds from the empty scene while popping instruction images
it no longer needs. Scoring happens outside against the final scene.

Cursor clicks resolve through the snap buffer of the most recent render.
Every mutating action is collision gated; a failed action is an exact
no-op on the scene, the stack, and the phase, and only advances the step
counter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from bricklab.assembly import (
    Assembly,
    BrickInstance,
    assembly_bounds,
    assembly_from_json,
    assembly_to_json,
    brick_bounds,
    check_collision,
    derive_edges,
    mate_pose,
    recolor_assembly,
    validate_assembly,
    world_snap,
)
from bricklab.geometry import (
    BRICK_HEIGHT,
    STUD_PITCH,
    Pose,
    rotate_pose_about_point,
    rotation_about,
    translate_pose,
)
from bricklab.render import (
    Camera,
    FrameBuffers,
    default_camera,
    empty_frame,
    render,
    sample_camera,
)
from bricklab.shapes import Catalog


class Phase(Enum):
    BREAK = "break"
    MAKE = "make"


ROTATE_ANGLES = (90, 180, 270)
DIRECTIONS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
TRANSLATE_STEPS = (1, 2, 4)
PICK_CLEARANCE = 48  # LDU of air under a freshly inserted brick


@dataclass(frozen=True)
class Rotate:
    click: tuple[int, int]
    angle: int  # degrees, one of ROTATE_ANGLES


@dataclass(frozen=True)
class Translate:
    click: tuple[int, int]
    direction: int  # index into DIRECTIONS
    magnitude_index: int  # index into TRANSLATE_STEPS


@dataclass(frozen=True)
class Pick:
    shape_id: int
    color_id: int


@dataclass(frozen=True)
class Assemble:
    click: tuple[int, int]
    release: tuple[int, int]


@dataclass(frozen=True)
class Disassemble:
    click: tuple[int, int]


@dataclass(frozen=True)
class PushInstruction:
    pass


@dataclass(frozen=True)
class PopInstruction:
    pass


@dataclass(frozen=True)
class SwitchPhase:
    pass


@dataclass(frozen=True)
class Done:
    pass


Action = Union[
    Rotate,
    Translate,
    Pick,
    Assemble,
    Disassemble,
    PushInstruction,
    PopInstruction,
    SwitchPhase,
    Done,
]

MODES = (
    "rotate",
    "translate",
    "pick",
    "assemble",
    "disassemble",
    "push",
    "pop",
    "switch",
    "done",
)
_MODE_OF = {
    Rotate: "rotate",
    Translate: "translate",
    Pick: "pick",
    Assemble: "assemble",
    Disassemble: "disassemble",
    PushInstruction: "push",
    PopInstruction: "pop",
    SwitchPhase: "switch",
    Done: "done",
}
CURSOR_MODES = ("rotate", "translate", "assemble", "disassemble")


def action_mode(action: Action) -> str:
    return _MODE_OF[type(action)]


def action_to_json(action: Action) -> dict:
    mode = action_mode(action)
    data: dict = {"mode": mode}
    if isinstance(action, Rotate):
        data["click"] = list(action.click)
        data["angle"] = action.angle
    elif isinstance(action, Translate):
        data["click"] = list(action.click)
        data["direction"] = action.direction
        data["magnitude"] = action.magnitude_index
    elif isinstance(action, Pick):
        data["shape"] = action.shape_id
        data["color"] = action.color_id
    elif isinstance(action, Assemble):
        data["click"] = list(action.click)
        data["release"] = list(action.release)
    elif isinstance(action, Disassemble):
        data["click"] = list(action.click)
    return data


def action_from_json(data: dict) -> Action:
    mode = data["mode"]
    if mode == "rotate":
        return Rotate(tuple(data["click"]), int(data["angle"]))
    if mode == "translate":
        return Translate(tuple(data["click"]), int(data["direction"]), int(data["magnitude"]))
    if mode == "pick":
        return Pick(int(data["shape"]), int(data["color"]))
    if mode == "assemble":
        return Assemble(tuple(data["click"]), tuple(data["release"]))
    if mode == "disassemble":
        return Disassemble(tuple(data["click"]))
    if mode == "push":
        return PushInstruction()
    if mode == "pop":
        return PopInstruction()
    if mode == "switch":
        return SwitchPhase()
    if mode == "done":
        return Done()
    raise ValueError(f"unknown action mode: {mode}")


def default_max_steps(target_size: int) -> int:
    return 8 * target_size + 16


@dataclass
class TaskSpec:
    target: Assembly
    recolor: Optional[tuple[int, int]] = None  # (old color, new color)
    max_steps: Optional[int] = None

    def budget(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return default_max_steps(len(self.target))


@dataclass
class StackEntry:
    image: np.ndarray  # (H, W, 3) uint8 copy taken at push time
    snapshot: Assembly


@dataclass
class Observation:
    current_image: np.ndarray
    instruction_image: np.ndarray
    phase: Phase
    task_tokens: Optional[tuple[int, int]] = None


@dataclass
class StepResult:
    observation: Observation
    action_success: bool
    episode_done: bool
    info: dict = field(default_factory=dict)


class BreakMakeEnv:
    """Single-owner episode state machine. One instance per worker."""

    def __init__(
        self,
        catalog: Catalog,
        camera: Camera | None = None,
        size: int = 128,
        jitter: bool = False,
    ):
        self.catalog = catalog
        self.size = size
        self.jitter = jitter
        self.base_camera = camera or default_camera(jitter=jitter)
        self._background = empty_frame(size).color
        self._rng: np.random.Generator | None = None
        self.task: TaskSpec | None = None
        self.scene = Assembly()
        self.stack: list[StackEntry] = []
        self.phase = Phase.BREAK
        self.steps = 0
        self.done = False
        self._fb: FrameBuffers | None = None
        self._edges = None

    # -- episode control ---------------------------------------------------

    def reset(self, task: TaskSpec, seed: int) -> Observation:
        validate_assembly(self.catalog, task.target)
        if task.recolor is not None:
            old, new = task.recolor
            if old not in self.catalog.colors or new not in self.catalog.colors:
                raise ValueError("recolor refers to unknown colors")
            if not any(b.color_id == old for b in task.target.bricks.values()):
                raise ValueError("recolor old color does not occur in the target")
        self.task = task
        self._rng = np.random.default_rng(seed)
        self.scene = task.target.copy()
        self.stack = []
        self.phase = Phase.BREAK
        self.steps = 0
        self.done = False
        self._render()
        return self.observation()

    def effective_target(self) -> Assembly:
        assert self.task is not None
        if self.task.recolor is None:
            return self.task.target
        old, new = self.task.recolor
        return recolor_assembly(self.task.target, old, new)

    def final_assembly(self) -> Assembly:
        if not self.done:
            raise RuntimeError("episode still running")
        return self.scene.copy()

    # -- observation -------------------------------------------------------

    @property
    def framebuffers(self) -> FrameBuffers:
        assert self._fb is not None, "reset() first"
        return self._fb

    @property
    def edges(self):
        if self._edges is None:
            self._edges = derive_edges(self.catalog, self.scene)
        return self._edges

    def observation(self) -> Observation:
        instruction = self.stack[-1].image if self.stack else self._background
        tokens = self.task.recolor if self.task else None
        return Observation(
            current_image=self._fb.color.copy(),
            instruction_image=instruction.copy(),
            phase=self.phase,
            task_tokens=tokens,
        )

    def _render(self) -> None:
        self._edges = None
        camera = self.base_camera
        if self.jitter:
            camera = sample_camera(self.base_camera, self._rng)
        self._fb = render(
            self.catalog, self.scene, camera, size=self.size, edges=self.edges
        )

    # -- stepping ----------------------------------------------------------

    def step(self, action: Action) -> StepResult:
        if self.done:
            raise RuntimeError("episode is over; reset() to continue")
        success, info, mutated = self._apply(action)
        self.steps += 1
        if self.steps >= self.task.budget() and not self.done:
            self.done = True
            info["budget_exhausted"] = True
        if mutated or self.jitter:
            self._render()  # jitter resamples the camera every frame
        return StepResult(
            observation=self.observation(),
            action_success=success,
            episode_done=self.done,
            info=info,
        )

    def _resolve(self, click):
        i, j = click
        if not (0 <= i < self.size and 0 <= j < self.size):
            return None
        instance = int(self._fb.snap_instance[i, j])
        if instance == 0:
            return None
        return instance, int(self._fb.snap_index[i, j])

    def _apply(self, action: Action):
        if isinstance(action, Disassemble):
            hit = self._resolve(action.click)
            if hit is None:
                return False, {"reason": "no_snap"}, False
            instance_id, snap_index = hit
            self.scene.remove(instance_id)
            return True, {"resolved": hit}, True

        if isinstance(action, Rotate):
            if action.angle not in ROTATE_ANGLES:
                return False, {"reason": "bad_angle"}, False
            hit = self._resolve(action.click)
            if hit is None:
                return False, {"reason": "no_snap"}, False
            instance_id, snap_index = hit
            brick = self.scene.bricks[instance_id]
            position, axis, _ = world_snap(self.catalog, brick, snap_index)
            turn = rotation_about(axis, action.angle // 90)
            pose = rotate_pose_about_point(brick.pose, turn, position)
            return self._commit_pose(instance_id, pose, {"resolved": hit})

        if isinstance(action, Translate):
            if not 0 <= action.direction < len(DIRECTIONS):
                return False, {"reason": "bad_direction"}, False
            if not 0 <= action.magnitude_index < len(TRANSLATE_STEPS):
                return False, {"reason": "bad_magnitude"}, False
            hit = self._resolve(action.click)
            if hit is None:
                return False, {"reason": "no_snap"}, False
            instance_id, _ = hit
            direction = DIRECTIONS[action.direction]
            unit = BRICK_HEIGHT if direction[2] else STUD_PITCH
            distance = TRANSLATE_STEPS[action.magnitude_index] * unit
            delta = tuple(c * distance for c in direction)
            brick = self.scene.bricks[instance_id]
            pose = translate_pose(brick.pose, delta)
            return self._commit_pose(instance_id, pose, {"resolved": hit})

        if isinstance(action, Pick):
            if action.shape_id not in self.catalog.shapes:
                return False, {"reason": "bad_shape"}, False
            if action.color_id not in self.catalog.colors:
                return False, {"reason": "bad_color"}, False
            pose = self._pick_pose(action.shape_id)
            candidate = BrickInstance(
                self.scene.next_instance_id, action.shape_id, action.color_id, pose
            )
            if check_collision(self.catalog, self.scene, candidate):
                return False, {"reason": "collision"}, False
            new_id = self.scene.add(action.shape_id, action.color_id, pose)
            return True, {"inserted": new_id}, True

        if isinstance(action, Assemble):
            source = self._resolve(action.click)
            if source is None:
                return False, {"reason": "no_snap"}, False
            dest = self._resolve(action.release)
            if dest is None:
                return False, {"reason": "no_release_snap"}, False
            if source[0] == dest[0]:
                return False, {"reason": "self_attach"}, False
            _, _, source_gender = world_snap(
                self.catalog, self.scene.bricks[source[0]], source[1]
            )
            dest_pos, dest_axis, dest_gender = world_snap(
                self.catalog, self.scene.bricks[dest[0]], dest[1]
            )
            if source_gender == dest_gender:
                return False, {"reason": "same_gender"}, False
            moving = self.scene.bricks[source[0]]
            pose = mate_pose(self.catalog, moving, source[1], dest_pos, dest_axis)
            return self._commit_pose(
                source[0], pose, {"resolved": source, "released": dest}
            )

        if isinstance(action, PushInstruction):
            self.stack.append(
                StackEntry(self._fb.color.copy(), self.scene.copy())
            )
            return True, {"stack_depth": len(self.stack)}, False

        if isinstance(action, PopInstruction):
            if not self.stack:
                return False, {"reason": "empty_stack"}, False
            self.stack.pop()
            return True, {"stack_depth": len(self.stack)}, False

        if isinstance(action, SwitchPhase):
            if self.phase is not Phase.BREAK:
                return False, {"reason": "wrong_phase"}, False
            self.scene = Assembly()
            self.phase = Phase.MAKE
            return True, {}, True

        if isinstance(action, Done):
            if self.phase is not Phase.MAKE:
                return False, {"reason": "wrong_phase"}, False
            self.done = True
            return True, {}, False

        raise TypeError(f"unknown action: {action!r}")

    def _commit_pose(self, instance_id: int, pose: Pose, info: dict):
        brick = self.scene.bricks[instance_id]
        candidate = BrickInstance(instance_id, brick.shape_id, brick.color_id, pose)
        if check_collision(self.catalog, self.scene, candidate, exclude_id=instance_id):
            info = dict(info)
            info["reason"] = "collision"
            return False, info, False
        self.scene.repose(instance_id, pose)
        return True, info, True

    def _pick_pose(self, shape_id: int) -> Pose:
        probe = BrickInstance(0, shape_id, 0, Pose())
        lo, hi = brick_bounds(self.catalog, probe)
        bounds = assembly_bounds(self.catalog, self.scene)
        if bounds is None:
            # Empty scene: the new brick sits at the origin.
            center = (0, 0)
            floor = 0
        else:
            center = (
                (bounds[0][0] + bounds[1][0]) / 2,
                (bounds[0][1] + bounds[1][1]) / 2,
            )
            floor = bounds[1][2] + PICK_CLEARANCE
        def snap20(value):
            return int(round(value / 20.0)) * 20
        tx = snap20(center[0] - (lo[0] + hi[0]) / 2)
        ty = snap20(center[1] - (lo[1] + hi[1]) / 2)
        tz = int(floor - lo[2])
        if tz % 2:
            tz += 1
        return Pose(translation=(tx, ty, tz))


# -- trajectory logs -------------------------------------------------------

LOG_VERSION = 1


def trajectory_header(catalog: Catalog, task: TaskSpec, seed: int, jitter: bool) -> dict:
    return {
        "type": "header",
        "version": LOG_VERSION,
        "target": assembly_to_json(catalog, task.target),
        "recolor": list(task.recolor) if task.recolor else None,
        "max_steps": task.budget(),
        "seed": seed,
        "jitter": jitter,
    }


def trajectory_step(
    step: int,
    phase: Phase,
    action: Action,
    success: bool,
    expert_action=None,
    resolved=None,
) -> dict:
    record = {
        "type": "step",
        "step": step,
        "phase": phase.value,
        "action": action_to_json(action),
        "success": success,
        "expert_action": expert_action,
        "resolved_snap": list(resolved) if resolved else None,
    }
    return record


def write_trajectory(path, records) -> None:
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")


def read_trajectory(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def task_from_header(catalog: Catalog, header: dict) -> TaskSpec:
    target = assembly_from_json(catalog, header["target"])
    recolor = tuple(header["recolor"]) if header.get("recolor") else None
    return TaskSpec(target=target, recolor=recolor, max_steps=header.get("max_steps"))


def load_episode_config(catalog: Catalog, path) -> tuple[TaskSpec, int, bool]:
    """Episode config file: task path plus run settings."""
    from bricklab.assembly import load_assembly

    data = json.loads(open(path).read())
    target = load_assembly(catalog, data["task"])
    recolor = tuple(data["recolor"]) if data.get("recolor") else None
    task = TaskSpec(target=target, recolor=recolor, max_steps=data.get("max_steps"))
    return task, int(data.get("seed", 0)), bool(data.get("jitter", False))
