"""Online imitation training: expert-mixed rollouts and replay learning.

Each epoch first generates a fixed number of environment steps across a
pool of round-robin workers. Step j of an epoch is driven by the
expert's action when j over the epoch length is below the expert
mixture alpha, and by the learning policy otherwise; either way the
expert's action is stored as the supervision target. Fresh transitions
enter a fixed-capacity first-in-first-out replay buffer, after which the
policy takes a fixed number of gradient steps on batches sampled
uniformly with replacement. Episodes where the expert gives up are
truncated and replaced by a fresh task.

Runs are deterministic for a fixed seed and worker count, and full-state
checkpoints (policy, buffer, generator states, live episodes) allow a
run to resume mid-stream and reproduce the continuation exactly.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from bricklab.assembly import Assembly, assembly_from_json, assembly_to_json
from bricklab.datagen import (
    RandomConstructionConfig,
    VehicleGrammarConfig,
    generate_random_construction,
    generate_vehicle,
    load_manifest,
)
from bricklab.assembly import load_assembly
from bricklab.env import (
    Action,
    BreakMakeEnv,
    Done,
    Observation,
    Phase,
    StackEntry,
    TaskSpec,
)
from bricklab.expert import expert_act_env
from bricklab.metrics import Scores, mean_scores, score
from bricklab.policy import expert_target_from_action
from bricklab.render import snap_pixels
from bricklab.shapes import Catalog


@dataclass
class Transition:
    """One supervised step: what was seen and what the expert advised."""

    observation: Observation
    expert_target: dict
    click_pixels: Optional[np.ndarray]  # (N, 2) rows, cols
    release_pixels: Optional[np.ndarray]
    acted_by: str  # "expert" or "agent"
    episode_id: int
    step_index: int
    # Feature caches; transitions are resampled many times per epoch.
    phi_cache: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    psi_cache: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def _mask(self, pixels):
        if pixels is None or not len(pixels):
            return None
        size = self.observation.current_image.shape[0]
        mask = np.zeros((size, size), dtype=bool)
        mask[pixels[:, 0], pixels[:, 1]] = True
        return mask

    def click_mask(self):
        return self._mask(self.click_pixels)

    def release_mask(self):
        return self._mask(self.release_pixels)


class ReplayBuffer:
    """Fixed capacity, strictly oldest-first eviction."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque[Transition] = deque()

    def push(self, transition: Transition) -> None:
        if len(self._items) >= self.capacity:
            self._items.popleft()
        self._items.append(transition)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Transition:
        return self._items[index]

    def as_list(self) -> list[Transition]:
        return list(self._items)


def sample_batch(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator):
    """Uniform sample with replacement over current buffer contents."""
    if len(buffer) == 0:
        raise ValueError("cannot sample from an empty buffer")
    picks = rng.integers(0, len(buffer), size=batch_size)
    return [buffer[int(i)] for i in picks]


@dataclass
class TrainConfig:
    total_steps: int
    steps_per_epoch: int = 512
    train_steps_per_epoch: int = 1024
    capacity: int = 2048
    alpha: float = 0.75
    batch_size: int = 32
    workers: int = 8
    seed: int = 0
    jitter: bool = False
    eval_every: int = 0  # epochs between evaluations; 0 disables
    eval_episodes: int = 100
    checkpoint_every: int = 0  # epochs; 0 disables

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        for name in (
            "total_steps",
            "steps_per_epoch",
            "train_steps_per_epoch",
            "capacity",
            "batch_size",
            "workers",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_json(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "steps_per_epoch": self.steps_per_epoch,
            "train_steps_per_epoch": self.train_steps_per_epoch,
            "capacity": self.capacity,
            "alpha": self.alpha,
            "batch_size": self.batch_size,
            "workers": self.workers,
            "seed": self.seed,
            "jitter": self.jitter,
            "eval_every": self.eval_every,
            "eval_episodes": self.eval_episodes,
            "checkpoint_every": self.checkpoint_every,
        }

    @staticmethod
    def from_json(data: dict) -> "TrainConfig":
        known = {f for f in TrainConfig.__dataclass_fields__}
        return TrainConfig(**{k: v for k, v in data.items() if k in known})


def expert_driven_steps(steps_per_epoch: int, alpha: float) -> int:
    """How many leading steps of an epoch the expert executes."""
    return sum(1 for j in range(steps_per_epoch) if j / steps_per_epoch < alpha)


# -- task sources -----------------------------------------------------------


class GeneratorTaskSource:
    """Endless stream of freshly generated tasks."""

    def __init__(self, catalog: Catalog, kind: str, seed: int, brick_count=None):
        self.catalog = catalog
        self.kind = kind
        self.brick_count = brick_count
        self._rng = np.random.default_rng(seed)

    def next_task(self) -> TaskSpec:
        child = int(self._rng.integers(0, 2**63 - 1))
        if self.kind == "rc":
            assembly = generate_random_construction(
                self.catalog, RandomConstructionConfig(self.brick_count, child)
            )
        elif self.kind == "vehicles":
            assembly = generate_vehicle(self.catalog, VehicleGrammarConfig(child))
        else:
            raise ValueError(f"unknown task kind: {self.kind}")
        return TaskSpec(assembly)

    def state(self) -> dict:
        return {"rng": self._rng.bit_generator.state}

    def restore(self, state: dict) -> None:
        self._rng.bit_generator.state = state["rng"]


class ManifestTaskSource:
    """Tasks from dataset files; raises when exhausted unless looping."""

    def __init__(self, catalog: Catalog, manifest_path, split=None, loop=False):
        entries, _ = load_manifest(manifest_path)
        if split is not None:
            entries = [(p, s) for p, s in entries if s == split]
        if not entries:
            raise ValueError(f"manifest has no entries for split {split!r}")
        self.catalog = catalog
        self.paths = [p for p, _ in entries]
        self.loop = loop
        self.index = 0

    def next_task(self) -> TaskSpec:
        if self.index >= len(self.paths):
            if not self.loop:
                raise RuntimeError("task source exhausted")
            self.index = 0
        path = self.paths[self.index]
        self.index += 1
        return TaskSpec(load_assembly(self.catalog, path))

    def state(self) -> dict:
        return {"index": self.index}

    def restore(self, state: dict) -> None:
        self.index = int(state["index"])


# -- transitions from live environments --------------------------------------


def _cursor_pixels(env: BreakMakeEnv, click) -> Optional[np.ndarray]:
    if click is None:
        return None
    i, j = click
    fb = env.framebuffers
    instance = int(fb.snap_instance[i, j])
    if instance == 0:
        return None
    return snap_pixels(fb, instance, int(fb.snap_index[i, j]))


def make_transition(
    env: BreakMakeEnv,
    expert_action: Action,
    acted_by: str,
    episode_id: int,
) -> Transition:
    click = getattr(expert_action, "click", None)
    release = getattr(expert_action, "release", None)
    return Transition(
        observation=env.observation(),
        expert_target=expert_target_from_action(expert_action),
        click_pixels=_cursor_pixels(env, click),
        release_pixels=_cursor_pixels(env, release),
        acted_by=acted_by,
        episode_id=episode_id,
        step_index=env.steps,
    )


# -- reports ------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    env_steps: int
    losses: dict
    eval_scores: Optional[Scores] = None


@dataclass
class TrainingReport:
    config: TrainConfig
    epochs: list[EpochStats] = field(default_factory=list)
    final_scores: Optional[Scores] = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                (
                    "epoch",
                    "env_steps",
                    "loss_mode",
                    "loss_param",
                    "loss_click",
                    "loss_release",
                    "eval_f1_b",
                    "eval_f1_e",
                    "eval_f1_a",
                    "eval_aed",
                )
            )
            for row in self.epochs:
                cells = [
                    row.epoch,
                    row.env_steps,
                    row.losses.get("mode", ""),
                    row.losses.get("param", ""),
                    row.losses.get("click", ""),
                    row.losses.get("release", ""),
                ]
                if row.eval_scores is not None:
                    cells += list(row.eval_scores.as_tuple())
                else:
                    cells += ["", "", "", ""]
                writer.writerow(cells)
            if self.final_scores is not None:
                writer.writerow(
                    ["final", "", "", "", "", ""] + list(self.final_scores.as_tuple())
                )

    def signature(self) -> tuple:
        """Hashable content for reproducibility checks."""
        return tuple(
            (
                row.epoch,
                row.env_steps,
                tuple(sorted(row.losses.items())),
                row.eval_scores.as_tuple() if row.eval_scores else None,
            )
            for row in self.epochs
        )


# -- the loop -----------------------------------------------------------------


class _Runner:
    def __init__(self, catalog, config, task_source, policy):
        self.catalog = catalog
        self.config = config
        self.tasks = task_source
        self.policy = policy
        root = np.random.SeedSequence(config.seed)
        keys = root.spawn(4 + 2 * config.workers)
        self.sample_rng = np.random.default_rng(keys[0])
        self.eval_rng = np.random.default_rng(keys[1])
        self.episode_seed_rng = np.random.default_rng(keys[2])
        self.expert_rngs = [
            np.random.default_rng(keys[4 + 2 * w]) for w in range(config.workers)
        ]
        self.policy_rngs = [
            np.random.default_rng(keys[5 + 2 * w]) for w in range(config.workers)
        ]
        self.envs = [
            BreakMakeEnv(catalog, jitter=config.jitter)
            for _ in range(config.workers)
        ]
        self.episode_ids = [0] * config.workers
        self.episode_counter = 0
        self.buffer = ReplayBuffer(config.capacity)
        self.env_steps = 0
        self.epoch = 0
        for w in range(config.workers):
            self._fresh_episode(w)

    def _fresh_episode(self, w: int) -> None:
        task = self.tasks.next_task()
        seed = int(self.episode_seed_rng.integers(0, 2**63 - 1))
        self.envs[w].reset(task, seed)
        self.episode_counter += 1
        self.episode_ids[w] = self.episode_counter

    def rollout_epoch(self) -> None:
        cfg = self.config
        for j in range(cfg.steps_per_epoch):
            w = j % cfg.workers
            env = self.envs[w]
            # Find a supervisable state, truncating hopeless episodes.
            while True:
                decision = expert_act_env(env, self.expert_rngs[w])
                if not decision.terminate:
                    break
                self._fresh_episode(w)
            expert_action = decision.action
            if j / cfg.steps_per_epoch < cfg.alpha:
                acting, tag = expert_action, "expert"
            else:
                acting, _ = self.policy.act(env, "stochastic", self.policy_rngs[w])
                tag = "agent"
                if acting is None:
                    acting, tag = expert_action, "expert"
            self.buffer.push(
                make_transition(env, expert_action, tag, self.episode_ids[w])
            )
            result = env.step(acting)
            self.env_steps += 1
            if result.episode_done:
                self._fresh_episode(w)

    def train_epoch(self) -> dict:
        cfg = self.config
        totals: dict[str, float] = {}
        counts: dict[str, int] = {}
        for _ in range(cfg.train_steps_per_epoch):
            batch = sample_batch(self.buffer, cfg.batch_size, self.sample_rng)
            report = self.policy.update(batch)
            for name, value in report.items():
                totals[name] = totals.get(name, 0.0) + value
                counts[name] = counts.get(name, 0) + 1
        return {name: totals[name] / counts[name] for name in totals}

    # -- checkpointing -------------------------------------------------------

    def save_checkpoint(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if self.policy.trainable:
            self.policy.save(directory / "policy.json")
        arrays: dict[str, np.ndarray] = {}
        transitions = self.buffer.as_list()
        meta_transitions = []
        for k, t in enumerate(transitions):
            arrays[f"cur_{k}"] = t.observation.current_image
            arrays[f"ins_{k}"] = t.observation.instruction_image
            if t.click_pixels is not None:
                arrays[f"click_{k}"] = t.click_pixels
            if t.release_pixels is not None:
                arrays[f"release_{k}"] = t.release_pixels
            meta_transitions.append(
                {
                    "phase": t.observation.phase.value,
                    "tokens": list(t.observation.task_tokens)
                    if t.observation.task_tokens
                    else None,
                    "target": t.expert_target,
                    "acted_by": t.acted_by,
                    "episode_id": t.episode_id,
                    "step_index": t.step_index,
                }
            )
        env_meta = []
        for w, env in enumerate(self.envs):
            stack_meta = []
            for k, entry in enumerate(env.stack):
                arrays[f"stack_{w}_{k}"] = entry.image
                stack_meta.append(assembly_to_json(self.catalog, entry.snapshot))
            env_meta.append(
                {
                    "task": {
                        "target": assembly_to_json(self.catalog, env.task.target),
                        "recolor": list(env.task.recolor) if env.task.recolor else None,
                        "max_steps": env.task.max_steps,
                    },
                    "scene": assembly_to_json(self.catalog, env.scene),
                    "phase": env.phase.value,
                    "steps": env.steps,
                    "done": env.done,
                    "stack": stack_meta,
                    "rng": env._rng.bit_generator.state,
                    "episode_id": self.episode_ids[w],
                }
            )
        meta = {
            "version": 1,
            "epoch": self.epoch,
            "env_steps": self.env_steps,
            "episode_counter": self.episode_counter,
            "config": self.config.to_json(),
            "transitions": meta_transitions,
            "envs": env_meta,
            "rngs": {
                "sample": self.sample_rng.bit_generator.state,
                "eval": self.eval_rng.bit_generator.state,
                "episode_seed": self.episode_seed_rng.bit_generator.state,
                "expert": [g.bit_generator.state for g in self.expert_rngs],
                "policy": [g.bit_generator.state for g in self.policy_rngs],
            },
            "task_source": self.tasks.state(),
        }
        np.savez_compressed(directory / "state.npz", **arrays)
        (directory / "state.json").write_text(json.dumps(meta))

    def load_checkpoint(self, directory) -> None:
        directory = Path(directory)
        meta = json.loads((directory / "state.json").read_text())
        arrays = np.load(directory / "state.npz")
        if self.policy.trainable and (directory / "policy.json").exists():
            from bricklab.policy import ReferencePolicy

            loaded = ReferencePolicy.load(directory / "policy.json")
            self.policy.params = loaded.params
            self.policy.config = loaded.config
        self.epoch = meta["epoch"]
        self.env_steps = meta["env_steps"]
        self.episode_counter = meta["episode_counter"]
        self.buffer = ReplayBuffer(self.config.capacity)
        for k, t in enumerate(meta["transitions"]):
            obs = Observation(
                current_image=arrays[f"cur_{k}"],
                instruction_image=arrays[f"ins_{k}"],
                phase=Phase(t["phase"]),
                task_tokens=tuple(t["tokens"]) if t["tokens"] else None,
            )
            self.buffer.push(
                Transition(
                    observation=obs,
                    expert_target=t["target"],
                    click_pixels=arrays[f"click_{k}"] if f"click_{k}" in arrays else None,
                    release_pixels=arrays[f"release_{k}"]
                    if f"release_{k}" in arrays
                    else None,
                    acted_by=t["acted_by"],
                    episode_id=t["episode_id"],
                    step_index=t["step_index"],
                )
            )
        for w, env_meta in enumerate(meta["envs"]):
            env = self.envs[w]
            task = TaskSpec(
                target=assembly_from_json(self.catalog, env_meta["task"]["target"]),
                recolor=tuple(env_meta["task"]["recolor"])
                if env_meta["task"]["recolor"]
                else None,
                max_steps=env_meta["task"]["max_steps"],
            )
            env.reset(task, 0)
            env._rng.bit_generator.state = env_meta["rng"]
            env.scene = assembly_from_json(self.catalog, env_meta["scene"])
            env.phase = Phase(env_meta["phase"])
            env.steps = env_meta["steps"]
            env.done = env_meta["done"]
            env.stack = [
                StackEntry(arrays[f"stack_{w}_{k}"], assembly_from_json(self.catalog, snap))
                for k, snap in enumerate(env_meta["stack"])
            ]
            env._render()
            self.episode_ids[w] = env_meta["episode_id"]
        rngs = meta["rngs"]
        self.sample_rng.bit_generator.state = rngs["sample"]
        self.eval_rng.bit_generator.state = rngs["eval"]
        self.episode_seed_rng.bit_generator.state = rngs["episode_seed"]
        for g, state in zip(self.expert_rngs, rngs["expert"]):
            g.bit_generator.state = state
        for g, state in zip(self.policy_rngs, rngs["policy"]):
            g.bit_generator.state = state
        self.tasks.restore(meta["task_source"])


def run_training(
    catalog: Catalog,
    config: TrainConfig,
    task_source,
    policy,
    eval_tasks: Optional[list[TaskSpec]] = None,
    out_dir=None,
    resume_from=None,
) -> TrainingReport:
    """Run the online loop until the environment step budget is spent."""
    runner = _Runner(catalog, config, task_source, policy)
    if resume_from is not None:
        runner.load_checkpoint(resume_from)
    report = TrainingReport(config=config)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    while runner.env_steps < config.total_steps:
        runner.rollout_epoch()
        losses = runner.train_epoch() if policy.trainable else {}
        runner.epoch += 1
        eval_scores = None
        if (
            config.eval_every
            and eval_tasks
            and runner.epoch % config.eval_every == 0
        ):
            eval_scores, _ = evaluate(
                catalog,
                policy,
                eval_tasks,
                episodes=config.eval_episodes,
                seed=int(runner.eval_rng.integers(0, 2**63 - 1)),
                jitter=config.jitter,
            )
        report.epochs.append(
            EpochStats(runner.epoch, runner.env_steps, losses, eval_scores)
        )
        if out is not None and config.checkpoint_every:
            if runner.epoch % config.checkpoint_every == 0:
                runner.save_checkpoint(out / f"checkpoint_{runner.epoch:04d}")
    if eval_tasks:
        report.final_scores, _ = evaluate(
            catalog,
            policy,
            eval_tasks,
            episodes=config.eval_episodes,
            seed=int(runner.eval_rng.integers(0, 2**63 - 1)),
            jitter=config.jitter,
        )
    if out is not None:
        report.to_csv(out / "report.csv")
        if policy.trainable:
            policy.save(out / "policy.json")
    return report


# -- evaluation ----------------------------------------------------------------


def evaluate(
    catalog: Catalog,
    policy,
    tasks: list[TaskSpec],
    episodes: int,
    seed: int = 0,
    mode: str = "argmax",
    instructions: str = "self",
    jitter: bool = False,
):
    """Mean reconstruction scores over full policy-driven episodes.

    With instructions="expert" the scripted expert runs the break phase
    (building the instruction stack) and the policy only rebuilds.
    """
    if instructions not in ("self", "expert"):
        raise ValueError(f"unknown instruction mode: {instructions}")
    env = BreakMakeEnv(catalog, jitter=jitter)
    rows = []
    for episode in range(episodes):
        task = tasks[episode % len(tasks)]
        keys = np.random.SeedSequence((seed, episode)).spawn(3)
        expert_rng = np.random.default_rng(keys[0])
        policy_rng = np.random.default_rng(keys[1])
        env.reset(task, keys[2])
        if instructions == "expert":
            while not env.done and env.phase is Phase.BREAK:
                decision = expert_act_env(env, expert_rng)
                if decision.terminate:
                    break
                env.step(decision.action)
        while not env.done:
            action, _ = policy.act(env, mode, policy_rng)
            if action is None:
                break
            env.step(action)
        rows.append(score(catalog, env.scene, env.effective_target()))
    return mean_scores(rows), rows


def collect_expert_states(
    catalog: Catalog,
    tasks: list[TaskSpec],
    seed: int = 0,
    jitter: bool = False,
    limit: Optional[int] = None,
):
    """Observation and expert-target pairs along expert rollouts."""
    env = BreakMakeEnv(catalog, jitter=jitter)
    states = []
    for episode, task in enumerate(tasks):
        keys = np.random.SeedSequence((seed, episode)).spawn(2)
        expert_rng = np.random.default_rng(keys[0])
        env.reset(task, keys[1])
        while not env.done:
            decision = expert_act_env(env, expert_rng)
            if decision.terminate:
                break
            states.append(
                (env.observation(), expert_target_from_action(decision.action))
            )
            env.step(decision.action)
            if limit is not None and len(states) >= limit:
                return states
    return states


def mode_agreement(policy, states) -> float:
    """Fraction of states where the argmax mode matches the expert's."""
    if not states:
        return 0.0
    hits = 0
    for obs, target in states:
        if policy.predict_mode(obs) == target["mode"]:
            hits += 1
    return hits / len(states)
