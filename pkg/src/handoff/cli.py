"""Command line interface.

    handoff run --task "pick the pepper ..." --seed 7 --mode hybrid --out out/
    handoff collect --plan default --seed 1234 --out demos/
    handoff export demos/ --vla --diffusion --out exports/
    handoff validate demos/
    handoff eval end_to_end --seed 2024 --out results/
    handoff serve --port 8765
    handoff bridge --port 8000 --out episodes/
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import SceneConfig, load_scene_config
from .core import parse_instruction
from .evalharness import EXPERIMENTS, ExperimentConfig, run_experiment
from .orchestrator import MachineMode, PhaseMachine, run_episode
from .policies import make_policy_set
from .sim import PickPlaceEnv

__all__ = ["main"]


def _scene_from_args(args) -> SceneConfig:
    if getattr(args, "scene", None):
        return load_scene_config(args.scene)
    return SceneConfig()


def _cmd_run(args) -> int:
    scene = _scene_from_args(args)
    try:
        instruction = parse_instruction(args.task)
    except ValueError as exc:
        print(f"cannot parse task: {exc}", file=sys.stderr)
        return 2
    baseline = args.mode == "baseline"
    env = PickPlaceEnv(scene)
    if args.remote:
        from .transport import PolicyClient, RemotePolicy
        host, _, port = args.remote.partition(":")
        client = PolicyClient(host, int(port), deadline_ms=args.deadline_ms)
        local = make_policy_set(instruction, scene, args.seed, baseline=baseline)
        policies = {pid: RemotePolicy(client, pid) for pid in local}
    else:
        policies = make_policy_set(instruction, scene, args.seed, baseline=baseline)
    machine = PhaseMachine(
        mode=MachineMode.VLA_ONLY_BASELINE if baseline else MachineMode.HYBRID)
    result = run_episode(env, policies, machine, instruction, args.seed)
    if args.out:
        result.write(args.out)
        print(f"wrote {Path(args.out) / 'trace.jsonl'}")
    print(f"phase={result.final_phase.value} score={result.score.value} "
          f"reason={result.score.reason.value} ticks={len(result.trace)}")
    return 0 if result.failure_reason is None else 1


def _cmd_collect(args) -> int:
    from .data import CollectionPlan, generate_demos
    plan = CollectionPlan.default() if args.plan == "default" else CollectionPlan.tiny()
    manifest = generate_demos(plan, seed=args.seed, out_dir=args.out,
                              scene=_scene_from_args(args))
    print(f"wrote {len(manifest['episodes'])} episodes to {args.out}")
    print(f"content_hash={manifest['content_hash']}")
    return 0


def _cmd_export(args) -> int:
    from .data import export_diffusion, export_vla
    out = args.out or str(Path(args.dataset) / "exports")
    include_images = not args.no_images
    if not (args.vla or args.diffusion):
        print("nothing to export: pass --vla and/or --diffusion", file=sys.stderr)
        return 2
    if args.vla:
        n = export_vla(args.dataset, out, include_images=include_images)
        print(f"vla set: {n} samples -> {Path(out) / 'vla'}")
    if args.diffusion:
        counts = export_diffusion(args.dataset, out, include_images=include_images)
        for obj, n in sorted(counts.items()):
            print(f"diffusion set [{obj}]: {n} samples -> {Path(out) / 'diffusion' / obj}")
    return 0


def _cmd_validate(args) -> int:
    from .data import validate_dataset
    report = validate_dataset(args.dataset, verify_hashes=not args.no_hashes)
    print(report.summary())
    return 0 if report.ok else 1


def _cmd_eval(args) -> int:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    overrides = {"experiment": args.experiment}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.episodes is not None:
        overrides["episodes_per_cell"] = args.episodes
    if args.trials is not None:
        overrides["trials_per_cell"] = args.trials
    if args.paper_mode:
        overrides["paper_mode"] = True
    from dataclasses import replace
    cfg = replace(cfg, **overrides)
    result = run_experiment(args.experiment, cfg, _scene_from_args(args))
    if args.out:
        out = result.write(args.out)
        print(f"wrote {out / 'results.csv'}")
    for key in sorted(result.summary):
        print(f"{key}: {result.summary[key]}")
    return 0


def _cmd_serve(args) -> int:
    import time
    from .transport import PolicyServer, policy_set_handler
    scene = _scene_from_args(args)
    server = PolicyServer(policy_set_handler(scene, baseline=args.baseline),
                          host=args.host, port=args.port).start()
    print(f"policy server on {server.host}:{server.port} (ctrl-c to stop)")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        server.stop()
    return 0


def _cmd_bridge(args) -> int:
    import uvicorn
    from .bridge import create_bridge_app
    app = create_bridge_app(scene=_scene_from_args(args), out_dir=args.out,
                            tick_hz=args.tick_hz)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handoff", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one pick-and-place episode")
    p.add_argument("--task", required=True, help='e.g. "pick the pepper and place it on the yellow plate"')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("hybrid", "baseline"), default="hybrid")
    p.add_argument("--out", help="directory for trace.jsonl and meta.json")
    p.add_argument("--scene", help="scene config INI")
    p.add_argument("--remote", help="host:port of a policy server to drive the episode")
    p.add_argument("--deadline-ms", type=float, default=180.0)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("collect", help="generate the demonstration dataset")
    p.add_argument("--plan", choices=("default", "tiny"), default="default")
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--out", required=True)
    p.add_argument("--scene")
    p.set_defaults(func=_cmd_collect)

    p = sub.add_parser("export", help="write the training sets from a dataset")
    p.add_argument("dataset")
    p.add_argument("--vla", action="store_true")
    p.add_argument("--diffusion", action="store_true")
    p.add_argument("--out")
    p.add_argument("--no-images", action="store_true")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("validate", help="check a dataset against every invariant")
    p.add_argument("dataset")
    p.add_argument("--no-hashes", action="store_true")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("eval", help="run an evaluation experiment")
    p.add_argument("experiment", choices=[e.replace("_", "-") for e in EXPERIMENTS] + list(EXPERIMENTS))
    p.add_argument("--config", help="experiment config INI")
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int, help="episodes per cell override")
    p.add_argument("--trials", type=int, help="trials per cell override")
    p.add_argument("--paper-mode", action="store_true", help="5 repeats per cell")
    p.add_argument("--out")
    p.add_argument("--scene")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="host the reference policies over the wire protocol")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--scene")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("bridge", help="teleoperation / live-view bridge for the browser console")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--out", default="teleop_episodes")
    p.add_argument("--tick-hz", type=float, default=5.0)
    p.add_argument("--scene")
    p.set_defaults(func=_cmd_bridge)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
