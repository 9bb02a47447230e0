"""Factored action selection: mode, then parameters, then cursor maps.

Every policy exposes the same contract: given the environment it returns
a concrete action plus an ActionDistribution that records the mode
logits, the parameter logits of the sampled mode, and the cursor score
maps that were computed conditioned on that sampled mode. Three
implementations ship here:

  ExpertPolicy     emits the scripted expert's action (no parameters)
  NoisyExpert      the expert with an epsilon chance of a uniformly
                   random in-phase action, useful for generating
                   recovery states
  ReferencePolicy  a small learnable baseline: one linear-logistic head
                   per action component over fixed image features, with
                   per-mode linear cursor maps over per-pixel features

The reference learner exists to exercise the losses and the online
training loop end to end, not to reach strong scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from bricklab.env import (
    Action,
    Assemble,
    BreakMakeEnv,
    CURSOR_MODES,
    Disassemble,
    Done,
    MODES,
    Phase,
    Pick,
    PopInstruction,
    PushInstruction,
    Rotate,
    SwitchPhase,
    Translate,
    ROTATE_ANGLES,
    TRANSLATE_STEPS,
    action_mode,
)
from bricklab.expert import ExpertAction, expert_act_env
from bricklab.losses import (
    bce_loss,
    mse_constant_loss,
    pixel_softmax,
    sample_pixel,
    summed_ce_loss,
    target_constant,
)
from bricklab.render import BACKGROUND
from bricklab.shapes import Catalog

CURSOR_LOSSES = ("summed_ce", "bce", "mse")
_DIRMAG = 18  # six directions times three magnitudes


@dataclass
class ActionDistribution:
    mode_logits: np.ndarray  # (9,)
    param_logits: dict[str, np.ndarray]
    click_map: Optional[np.ndarray]
    release_map: Optional[np.ndarray]
    conditioning: dict  # sampled mode and parameters the maps depend on


class ExpertPolicy:
    """Wraps the scripted expert behind the policy contract."""

    trainable = False

    def act(self, env: BreakMakeEnv, mode: str, rng: np.random.Generator):
        decision = expert_act_env(env, rng)
        if decision.terminate:
            return None, None
        return decision.action, None

    def update(self, batch, rng=None):
        return {}


class NoisyExpert:
    """Expert with an epsilon chance of a uniformly random in-phase action."""

    trainable = False

    def __init__(self, catalog: Catalog, epsilon: float):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        self.catalog = catalog
        self.epsilon = epsilon

    def act(self, env: BreakMakeEnv, mode: str, rng: np.random.Generator):
        noisy = rng.random() < self.epsilon
        decision = expert_act_env(env, rng)
        if not noisy:
            if decision.terminate:
                return None, None
            return decision.action, None
        return self.random_action(env, rng), None

    def random_action(self, env: BreakMakeEnv, rng: np.random.Generator):
        if env.phase is Phase.BREAK:
            modes = ("rotate", "translate", "pick", "assemble", "disassemble", "push", "pop", "switch")
        else:
            modes = ("rotate", "translate", "pick", "assemble", "disassemble", "push", "pop", "done")
        picked = modes[int(rng.integers(0, len(modes)))]
        size = env.size

        def pixel():
            return (int(rng.integers(0, size)), int(rng.integers(0, size)))

        if picked == "rotate":
            return Rotate(pixel(), ROTATE_ANGLES[int(rng.integers(0, 3))])
        if picked == "translate":
            return Translate(pixel(), int(rng.integers(0, 6)), int(rng.integers(0, 3)))
        if picked == "pick":
            shapes = self.catalog.shape_ids()
            colors = self.catalog.color_ids()
            return Pick(
                int(shapes[int(rng.integers(0, len(shapes)))]),
                int(colors[int(rng.integers(0, len(colors)))]),
            )
        if picked == "assemble":
            return Assemble(pixel(), pixel())
        if picked == "disassemble":
            return Disassemble(pixel())
        if picked == "push":
            return PushInstruction()
        if picked == "pop":
            return PopInstruction()
        if picked == "switch":
            return SwitchPhase()
        return Done()

    def update(self, batch, rng=None):
        return {}


# -- reference policy -------------------------------------------------------

_CELLS = 8  # downsample grid per image axis
_EQ_THRESHOLD = 0.02


def observation_features(obs) -> np.ndarray:
    """Fixed feature vector: cell means, image comparisons, phase, tokens."""
    cur = obs.current_image.astype(np.float64) / 255.0
    ins = obs.instruction_image.astype(np.float64) / 255.0
    size = cur.shape[0]
    step = size // _CELLS
    cur_cells = cur.reshape(_CELLS, step, _CELLS, step, 3).mean(axis=(1, 3))
    ins_cells = ins.reshape(_CELLS, step, _CELLS, step, 3).mean(axis=(1, 3))
    diff_cells = np.abs(cur_cells - ins_cells).mean(axis=2)
    background = np.array(BACKGROUND, dtype=np.float64) / 255.0
    nonbg_cur = float((np.abs(cur - background).sum(axis=2) > 0.05).mean())
    nonbg_ins = float((np.abs(ins - background).sum(axis=2) > 0.05).mean())
    equal_frac = float((diff_cells < _EQ_THRESHOLD).mean())
    mean_diff = float(diff_cells.mean())
    phase_bit = 1.0 if obs.phase is Phase.MAKE else 0.0
    empty_cur = 1.0 if nonbg_cur < 0.002 else 0.0
    scalars = np.array(
        [
            mean_diff,
            equal_frac,
            nonbg_cur,
            nonbg_ins,
            nonbg_cur - nonbg_ins,
            phase_bit,
            empty_cur,
            phase_bit * equal_frac,
            (1.0 - phase_bit) * equal_frac,
            phase_bit * empty_cur,
            1.0,  # bias
        ]
    )
    tokens = np.zeros(32)
    if obs.task_tokens is not None:
        old, new = obs.task_tokens
        if 0 <= old < 16:
            tokens[old] = 1.0
        if 0 <= new < 16:
            tokens[16 + new] = 1.0
    return np.concatenate(
        [
            cur_cells.reshape(-1),
            ins_cells.reshape(-1),
            diff_cells.reshape(-1),
            scalars,
            tokens,
        ]
    )


def pixel_features(obs) -> np.ndarray:
    """(H, W, F) per-pixel features for the cursor heads."""
    cur = obs.current_image.astype(np.float64) / 255.0
    ins = obs.instruction_image.astype(np.float64) / 255.0
    background = np.array(BACKGROUND, dtype=np.float64) / 255.0
    nonbg_cur = (np.abs(cur - background).sum(axis=2) > 0.05).astype(np.float64)
    nonbg_ins = (np.abs(ins - background).sum(axis=2) > 0.05).astype(np.float64)
    gray = cur.mean(axis=2)
    grad = np.zeros_like(gray)
    grad[1:, :] += np.abs(gray[1:, :] - gray[:-1, :])
    grad[:, 1:] += np.abs(gray[:, 1:] - gray[:, :-1])
    diff = np.abs(cur - ins).mean(axis=2)
    ones = np.ones_like(gray)
    return np.stack(
        [
            cur[..., 0],
            cur[..., 1],
            cur[..., 2],
            nonbg_cur,
            grad,
            ins[..., 0],
            ins[..., 1],
            ins[..., 2],
            diff,
            nonbg_ins,
            ones,
        ],
        axis=2,
    )


N_PIXEL_FEATURES = 11
FEATURE_SIZE = 3 * _CELLS * _CELLS * 2 + _CELLS * _CELLS + 11 + 32

CHECKPOINT_VERSION = 1


@dataclass
class ReferencePolicyConfig:
    shape_ids: tuple[int, ...]
    color_ids: tuple[int, ...]
    learning_rate: float = 0.05
    cursor_loss: str = "summed_ce"
    cursor_lr_scale: float | None = None  # default depends on the loss
    seed: int = 0

    def __post_init__(self):
        if self.cursor_loss not in CURSOR_LOSSES:
            raise ValueError(f"unknown cursor loss: {self.cursor_loss}")
        if self.cursor_lr_scale is None:
            # The averaged per-pixel losses produce much smaller gradients
            # than the summed softmax loss, so they train with a larger
            # step, mirroring how their learning rate is usually raised.
            self.cursor_lr_scale = 1.0 if self.cursor_loss == "summed_ce" else 10.0


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


class ReferencePolicy:
    """Linear-logistic heads over fixed features; trained by plain SGD."""

    trainable = True

    def __init__(self, config: ReferencePolicyConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        n_shapes = len(config.shape_ids)
        n_colors = len(config.color_ids)

        def init(rows, cols):
            return rng.normal(0.0, 0.01, size=(rows, cols))

        self.params: dict[str, np.ndarray] = {
            "mode": init(len(MODES), FEATURE_SIZE),
            "angle": init(len(ROTATE_ANGLES), FEATURE_SIZE),
            "dirmag": init(_DIRMAG, FEATURE_SIZE),
            "shape": init(n_shapes, FEATURE_SIZE),
            "color": init(n_colors, FEATURE_SIZE),
            "click": init(len(MODES), N_PIXEL_FEATURES),
            "release": init(len(MODES), N_PIXEL_FEATURES),
        }
        self._constant = target_constant(128, 128, 0.999)

    # -- acting -------------------------------------------------------------

    def act(self, env: BreakMakeEnv, mode: str, rng: np.random.Generator):
        obs = env.observation()
        phi = observation_features(obs)
        mode_logits = self.params["mode"] @ phi

        def pick_index(logits):
            if mode == "argmax":
                return int(np.argmax(logits))
            return int(rng.choice(len(logits), p=_softmax(logits)))

        mode_index = pick_index(mode_logits)
        mode_name = MODES[mode_index]
        param_logits: dict[str, np.ndarray] = {}
        conditioning = {"mode": mode_name, "params": {}}

        action: Action
        click_map = release_map = None
        if mode_name in CURSOR_MODES:
            psi = pixel_features(obs)
            click_map = psi @ self.params["click"][mode_index]
        if mode_name == "rotate":
            logits = self.params["angle"] @ phi
            param_logits["angle"] = logits
            angle_index = pick_index(logits)
            conditioning["params"]["angle"] = ROTATE_ANGLES[angle_index]
            click = sample_pixel(click_map, mode, rng)
            action = Rotate(click, ROTATE_ANGLES[angle_index])
        elif mode_name == "translate":
            logits = self.params["dirmag"] @ phi
            param_logits["dirmag"] = logits
            dirmag = pick_index(logits)
            conditioning["params"]["dirmag"] = dirmag
            click = sample_pixel(click_map, mode, rng)
            action = Translate(click, dirmag // 3, dirmag % 3)
        elif mode_name == "pick":
            shape_logits = self.params["shape"] @ phi
            color_logits = self.params["color"] @ phi
            param_logits["shape"] = shape_logits
            param_logits["color"] = color_logits
            shape_id = self.config.shape_ids[pick_index(shape_logits)]
            color_id = self.config.color_ids[pick_index(color_logits)]
            conditioning["params"]["shape"] = shape_id
            conditioning["params"]["color"] = color_id
            action = Pick(shape_id, color_id)
        elif mode_name == "assemble":
            release_map = psi @ self.params["release"][mode_index]
            click = sample_pixel(click_map, mode, rng)
            release = sample_pixel(release_map, mode, rng)
            action = Assemble(click, release)
        elif mode_name == "disassemble":
            click = sample_pixel(click_map, mode, rng)
            action = Disassemble(click)
        elif mode_name == "push":
            action = PushInstruction()
        elif mode_name == "pop":
            action = PopInstruction()
        elif mode_name == "switch":
            action = SwitchPhase()
        else:
            action = Done()

        distribution = ActionDistribution(
            mode_logits=mode_logits,
            param_logits=param_logits,
            click_map=click_map,
            release_map=release_map,
            conditioning=conditioning,
        )
        return action, distribution

    def predict_mode(self, obs) -> str:
        phi = observation_features(obs)
        return MODES[int(np.argmax(self.params["mode"] @ phi))]

    # -- learning -----------------------------------------------------------

    def _cursor_loss(self, logits, mask):
        if self.config.cursor_loss == "summed_ce":
            return summed_ce_loss(logits, mask)
        if self.config.cursor_loss == "bce":
            return bce_loss(logits, mask)
        return mse_constant_loss(logits, mask, self._constant)

    def loss_and_grads(self, batch):
        """Mean per-head losses and gradients for a batch of transitions."""
        grads = {name: np.zeros_like(value) for name, value in self.params.items()}
        sums = {"mode": 0.0, "param": 0.0, "click": 0.0, "release": 0.0}
        counts = {"mode": 0, "param": 0, "click": 0, "release": 0}

        def ce_into(name, logits, target_index, phi, weight_name):
            p = _softmax(logits)
            loss = -float(np.log(max(p[target_index], 1e-300)))
            g = p.copy()
            g[target_index] -= 1.0
            grads[weight_name] += np.outer(g, phi)
            return loss

        for transition in batch:
            obs = transition.observation
            phi = observation_features(obs)
            target = transition.expert_target
            mode_index = MODES.index(target["mode"])
            sums["mode"] += ce_into(
                "mode", self.params["mode"] @ phi, mode_index, phi, "mode"
            )
            counts["mode"] += 1

            if target["mode"] == "rotate":
                sums["param"] += ce_into(
                    "angle",
                    self.params["angle"] @ phi,
                    ROTATE_ANGLES.index(target["angle"]),
                    phi,
                    "angle",
                )
                counts["param"] += 1
            elif target["mode"] == "translate":
                sums["param"] += ce_into(
                    "dirmag",
                    self.params["dirmag"] @ phi,
                    target["dirmag"],
                    phi,
                    "dirmag",
                )
                counts["param"] += 1
            elif target["mode"] == "pick":
                sums["param"] += ce_into(
                    "shape",
                    self.params["shape"] @ phi,
                    self.config.shape_ids.index(target["shape"]),
                    phi,
                    "shape",
                )
                sums["param"] += ce_into(
                    "color",
                    self.params["color"] @ phi,
                    self.config.color_ids.index(target["color"]),
                    phi,
                    "color",
                )
                counts["param"] += 2

            click_mask = transition.click_mask()
            release_mask = transition.release_mask()
            if click_mask is not None or release_mask is not None:
                psi = pixel_features(obs)
                for head, mask in (("click", click_mask), ("release", release_mask)):
                    if mask is None or not mask.any():
                        continue
                    weights = self.params[head][mode_index]
                    logits = psi @ weights
                    loss, grad_map = self._cursor_loss(logits, mask)
                    grads[head][mode_index] += np.einsum(
                        "ij,ijk->k", grad_map, psi
                    )
                    sums[head] += loss
                    counts[head] += 1

        n = max(len(batch), 1)
        for name in grads:
            grads[name] /= n
        report = {
            name: (sums[name] / counts[name]) if counts[name] else 0.0
            for name in sums
        }
        return report, grads

    def update(self, batch, rng=None):
        """One SGD step on a batch; returns the per-head loss report."""
        if not batch:
            raise ValueError("empty batch")
        report, grads = self.loss_and_grads(batch)
        lr = self.config.learning_rate
        cursor_lr = lr * self.config.cursor_lr_scale
        for name, grad in grads.items():
            step = cursor_lr if name in ("click", "release") else lr
            self.params[name] -= step * grad
        return report

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        data = {
            "version": CHECKPOINT_VERSION,
            "kind": "reference_policy",
            "config": {
                "shape_ids": list(self.config.shape_ids),
                "color_ids": list(self.config.color_ids),
                "learning_rate": self.config.learning_rate,
                "cursor_loss": self.config.cursor_loss,
                "cursor_lr_scale": self.config.cursor_lr_scale,
                "seed": self.config.seed,
            },
            "arrays": {
                name: value.tolist() for name, value in self.params.items()
            },
        }
        Path(path).write_text(json.dumps(data))

    @staticmethod
    def load(path) -> "ReferencePolicy":
        data = json.loads(Path(path).read_text())
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {data.get('version')}")
        cfg = data["config"]
        policy = ReferencePolicy(
            ReferencePolicyConfig(
                shape_ids=tuple(cfg["shape_ids"]),
                color_ids=tuple(cfg["color_ids"]),
                learning_rate=cfg["learning_rate"],
                cursor_loss=cfg["cursor_loss"],
                cursor_lr_scale=cfg["cursor_lr_scale"],
                seed=cfg["seed"],
            )
        )
        for name, value in data["arrays"].items():
            policy.params[name] = np.array(value, dtype=np.float64)
        return policy


def expert_target_from_action(action: Action) -> dict:
    """Supervision record for one expert action."""
    mode = action_mode(action)
    target: dict = {"mode": mode}
    if isinstance(action, Rotate):
        target["angle"] = action.angle
    elif isinstance(action, Translate):
        target["dirmag"] = action.direction * 3 + action.magnitude_index
    elif isinstance(action, Pick):
        target["shape"] = action.shape_id
        target["color"] = action.color_id
    return target
