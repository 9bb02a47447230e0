"""Command line entry point.

Subcommands: gen (datasets), rollout (expert or policy episodes), train
(the online loop), score (metrics between two assembly files), and
render (frames from an assembly or a trajectory log). All randomness
flows from explicit seeds. Exit codes: 0 success, 1 validation or data
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from bricklab.assembly import load_assembly
from bricklab.datagen import (
    GenerationError,
    generate_dataset,
    load_manifest,
    validate_dataset,
)
from bricklab.env import (
    BreakMakeEnv,
    Done,
    Phase,
    TaskSpec,
    action_from_json,
    action_to_json,
    load_episode_config,
    task_from_header,
    trajectory_header,
    trajectory_step,
    write_trajectory,
)
from bricklab.expert import expert_act_env
from bricklab.metrics import SCORE_FIELDS, mean_scores, score, write_scores_csv
from bricklab.policy import ExpertPolicy, NoisyExpert, ReferencePolicy
from bricklab.render import default_camera, render, write_pgm16, write_png
from bricklab.shapes import Catalog, builtin_catalog
from bricklab.training import (
    GeneratorTaskSource,
    ManifestTaskSource,
    TrainConfig,
    evaluate,
    run_training,
)


class CliError(Exception):
    pass


def _load_catalog(path) -> Catalog:
    if path is None:
        return builtin_catalog()
    return Catalog.load(path)


def _make_policy(catalog: Catalog, spec: str):
    if spec == "expert":
        return ExpertPolicy()
    if spec.startswith("noisy:"):
        return NoisyExpert(catalog, float(spec.split(":", 1)[1]))
    path = Path(spec)
    if not path.exists():
        raise CliError(f"policy checkpoint not found: {spec}")
    return ReferencePolicy.load(path)


def cmd_gen(args) -> int:
    catalog = _load_catalog(args.catalog)
    if args.kind == "rc" and args.n is None:
        raise CliError("rc datasets need --n")
    try:
        manifest = generate_dataset(
            catalog,
            args.kind,
            args.count,
            args.seed,
            args.out,
            brick_count=args.n,
            splits=tuple(args.splits),
        )
    except GenerationError as exc:
        raise CliError(str(exc))
    paths = [p for p, _ in load_manifest(manifest)[0]]
    report = validate_dataset(catalog, paths)
    print(f"wrote {len(paths)} assemblies to {args.out}")
    print(f"validation violations: {report.violation_count}")
    print(f"size mean: {report.size_mean():.1f}")
    if report.violation_count:
        return 1
    return 0


def _run_policy_episode(env, task, policy, seed, instructions, catalog):
    keys = np.random.SeedSequence(seed).spawn(3)
    expert_rng = np.random.default_rng(keys[0])
    policy_rng = np.random.default_rng(keys[1])
    env.reset(task, keys[2])
    records = [trajectory_header(catalog, task, seed, env.jitter)]
    if instructions == "expert":
        while not env.done and env.phase is Phase.BREAK:
            decision = expert_act_env(env, expert_rng)
            if decision.terminate:
                records.append({"type": "terminate_early", "reason": decision.reason})
                break
            step_index, phase = env.steps, env.phase
            result = env.step(decision.action)
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
    while not env.done:
        action, _ = policy.act(env, "argmax", policy_rng)
        if action is None:
            records.append({"type": "terminate_early", "reason": "policy_expert_stuck"})
            break
        step_index, phase = env.steps, env.phase
        result = env.step(action)
        records.append(
            trajectory_step(
                step_index,
                phase,
                action,
                result.action_success,
                expert_action=None,
                resolved=result.info.get("resolved"),
            )
        )
    return records, score(catalog, env.scene, env.effective_target())


def cmd_rollout(args) -> int:
    catalog = _load_catalog(args.catalog)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.episode_config:
        tasks = [load_episode_config(catalog, args.episode_config)[0]]
    elif args.manifest:
        entries, _ = load_manifest(args.manifest)
        if args.split:
            entries = [(p, s) for p, s in entries if s == args.split]
        tasks = [TaskSpec(load_assembly(catalog, p)) for p, _ in entries]
    else:
        raise CliError("rollout needs --manifest or --episode-config")
    if args.recolor:
        old, new = (int(c) for c in args.recolor.split(","))
        tasks = [TaskSpec(t.target, recolor=(old, new)) for t in tasks]
    if args.limit:
        tasks = tasks[: args.limit]

    rows = []
    env = BreakMakeEnv(catalog, jitter=args.jitter)
    for index, task in enumerate(tasks):
        seed = int(np.random.SeedSequence((args.seed, index)).generate_state(1)[0])
        if args.policy == "expert" and args.instructions == "self":
            from bricklab.expert import expert_rollout

            result = expert_rollout(catalog, task, seed, env=env)
            records, scores = result.records, result.scores
        else:
            policy = _make_policy(catalog, args.policy)
            records, scores = _run_policy_episode(
                env, task, policy, seed, args.instructions, catalog
            )
        write_trajectory(out / f"episode_{index:05d}.jsonl", records)
        rows.append((f"episode_{index:05d}", scores))
    write_scores_csv(out / "scores.csv", rows)
    means = mean_scores([s for _, s in rows])
    print(
        " ".join(
            f"{name}={value:g}"
            for name, value in zip(SCORE_FIELDS, means.as_tuple())
        )
    )
    return 0


def cmd_train(args) -> int:
    catalog = _load_catalog(args.catalog)
    config_data = json.loads(Path(args.config).read_text())
    dataset = config_data.pop("dataset", None)
    eval_spec = config_data.pop("eval_dataset", None)
    policy_spec = config_data.pop("policy", {})
    if args.alpha is not None:
        config_data["alpha"] = args.alpha
    config = TrainConfig.from_json(config_data)
    if dataset is None:
        raise CliError("training config needs a dataset section")
    if "manifest" in dataset:
        source = ManifestTaskSource(
            catalog,
            dataset["manifest"],
            split=dataset.get("split"),
            loop=bool(dataset.get("loop", False)),
        )
    else:
        source = GeneratorTaskSource(
            catalog,
            dataset["kind"],
            seed=int(dataset.get("seed", config.seed)),
            brick_count=dataset.get("n"),
        )
    eval_tasks = None
    if eval_spec:
        entries, _ = load_manifest(eval_spec["manifest"])
        if eval_spec.get("split"):
            entries = [(p, s) for p, s in entries if s == eval_spec["split"]]
        eval_tasks = [TaskSpec(load_assembly(catalog, p)) for p, _ in entries]

    from bricklab.policy import ReferencePolicyConfig

    policy = ReferencePolicy(
        ReferencePolicyConfig(
            shape_ids=catalog.shape_ids(),
            color_ids=catalog.color_ids(),
            learning_rate=float(policy_spec.get("learning_rate", 0.05)),
            cursor_loss=policy_spec.get("cursor_loss", "summed_ce"),
            seed=int(policy_spec.get("seed", config.seed)),
        )
    )
    if args.resume and (Path(args.resume) / "policy.json").exists():
        pass  # parameters restored by the runner from the checkpoint
    report = run_training(
        catalog,
        config,
        source,
        policy,
        eval_tasks=eval_tasks,
        out_dir=args.out,
        resume_from=args.resume,
    )
    last = report.epochs[-1] if report.epochs else None
    if last is not None:
        print(f"epochs={last.epoch} env_steps={last.env_steps}")
    if report.final_scores is not None:
        print(
            " ".join(
                f"{name}={value:g}"
                for name, value in zip(SCORE_FIELDS, report.final_scores.as_tuple())
            )
        )
    return 0


def cmd_score(args) -> int:
    catalog = _load_catalog(args.catalog)
    if args.batch:
        pairs = []
        with open(args.batch) as f:
            for line in csv.reader(f):
                if len(line) >= 2:
                    pairs.append((line[0], line[1]))
        rows = []
        for estimated_path, target_path in pairs:
            estimated = load_assembly(catalog, estimated_path)
            target = load_assembly(catalog, target_path)
            rows.append(
                (Path(estimated_path).name, score(catalog, estimated, target))
            )
        write_scores_csv(args.out or "scores.csv", rows)
        print(f"scored {len(rows)} pairs")
        return 0
    estimated = load_assembly(catalog, args.estimated)
    target = load_assembly(catalog, args.target)
    result = score(catalog, estimated, target)
    print(
        " ".join(
            f"{name}={value:g}"
            for name, value in zip(SCORE_FIELDS, result.as_tuple())
        )
    )
    return 0


def cmd_render(args) -> int:
    catalog = _load_catalog(args.catalog)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(args.input)
    camera = default_camera()

    def dump(frame, stem):
        write_png(out / f"{stem}.png", frame.color)
        if args.buffers:
            write_pgm16(out / f"{stem}_instance.pgm", frame.instance)
            write_pgm16(out / f"{stem}_snap_instance.pgm", frame.snap_instance)
            write_pgm16(
                out / f"{stem}_snap_index.pgm",
                np.where(frame.snap_instance > 0, frame.snap_index + 1, 0),
            )

    if path.suffix == ".jsonl":
        records = [json.loads(line) for line in path.read_text().splitlines() if line]
        header = records[0]
        if header.get("type") != "header":
            raise CliError("trajectory log missing its header record")
        task = task_from_header(catalog, header)
        env = BreakMakeEnv(catalog, jitter=bool(header.get("jitter")))
        env.reset(task, header.get("seed", 0))
        dump(env.framebuffers, "frame_00000")
        count = 1
        for record in records[1:]:
            if record.get("type") != "step":
                continue
            env.step(action_from_json(record["action"]))
            dump(env.framebuffers, f"frame_{count:05d}")
            count += 1
        print(f"wrote {count} frames to {out}")
    else:
        assembly = load_assembly(catalog, path)
        frame = render(catalog, assembly, camera)
        dump(frame, path.stem)
        print(f"wrote 1 frame to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bricklab",
        description="Lattice brick assembly environment toolkit",
    )
    parser.add_argument("--catalog", help="catalog JSON (defaults to the builtin)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset")
    gen.add_argument("--kind", choices=("rc", "vehicles"), required=True)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--n", type=int, help="bricks per assembly (rc only)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument(
        "--splits",
        type=float,
        nargs=3,
        default=(1.0, 0.0, 0.0),
        metavar=("TRAIN", "VAL", "TEST"),
    )
    gen.set_defaults(func=cmd_gen)

    rollout = sub.add_parser("rollout", help="run episodes and score them")
    rollout.add_argument("--manifest")
    rollout.add_argument("--episode-config")
    rollout.add_argument("--split")
    rollout.add_argument("--policy", default="expert", help="expert, noisy:EPS, or a checkpoint path")
    rollout.add_argument("--instructions", choices=("self", "expert"), default="self")
    rollout.add_argument("--seed", type=int, default=0)
    rollout.add_argument("--limit", type=int)
    rollout.add_argument("--jitter", action="store_true")
    rollout.add_argument("--recolor", help="OLD,NEW color ids for the recolor task")
    rollout.add_argument("--out", required=True)
    rollout.set_defaults(func=cmd_rollout)

    train = sub.add_parser("train", help="run the online training loop")
    train.add_argument("--config", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--alpha", type=float, help="override the expert mixture")
    train.add_argument("--resume", help="checkpoint directory to resume from")
    train.set_defaults(func=cmd_train)

    score_cmd = sub.add_parser("score", help="score assemblies against targets")
    score_cmd.add_argument("estimated", nargs="?")
    score_cmd.add_argument("target", nargs="?")
    score_cmd.add_argument("--batch", help="CSV of estimated,target paths")
    score_cmd.add_argument("--out", help="output CSV for batch mode")
    score_cmd.set_defaults(func=cmd_score)

    render_cmd = sub.add_parser("render", help="render an assembly or trajectory")
    render_cmd.add_argument("input")
    render_cmd.add_argument("--out", required=True)
    render_cmd.add_argument("--buffers", action="store_true")
    render_cmd.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "score" and not args.batch:
        if not (args.estimated and args.target):
            parser.error("score needs two files or --batch")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
