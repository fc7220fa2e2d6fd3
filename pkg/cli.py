"""
Command-line entry point: environment generation, costmaps, datasets,
training, single plans, evaluation, variant comparison and path plots.
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import replace

from costmap import CostMap, build_heightmap, build_maps, load_grid_map, save_grid_map
from datagen import (
    build_reachability_graph,
    export_dataset,
    generate_pairs,
    import_dataset,
    robot_frame_goal,
    sample_viewpoints,
)
from envworld import GENERATORS, RobotPose, SensorConfig, blind_semantic_scan, env_digest, load_env, raycast, save_env
from evaluation import RolloutConfig, blind_samples, compare_variants, evaluate
from format_utils import format_percent, format_point, format_signed_percent
from losses import world_trajectory
from planner import PlannerConfig, gate, init_params, load_checkpoint, plan, save_checkpoint
from plots import write_path_svg, write_pgm
from semantics import SemanticsError, default_table, load_table
from trajectory import dump_trajectory, load_trajectory
from training import TrainConfig, train, worker_count

logger = logging.getLogger("impplan")

DOMAIN_ERRORS = (SemanticsError, ValueError, KeyError, RuntimeError, OSError)


def _numbers(count):
    def parse(text):
        try:
            values = [float(v) for v in text.split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated numbers, got {text!r}")
        if len(values) != count or not all(math.isfinite(v) for v in values):
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated finite numbers, got {text!r}")
        return tuple(values)

    return parse


def _seeds(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integer seeds, got {text!r}")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _add_sensor_flags(parser):
    parser.add_argument("--fov", type=float, default=math.pi / 2, help="sensor field of view in radians")
    parser.add_argument("--max-range", type=float, default=10.0, help="sensor range in meters")


def build_parser():
    parser = argparse.ArgumentParser(prog="impplan", description="Semantic-aware imperative path planning toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    parser.add_argument("--table", help="custom cost table JSON")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-env", help="generate a procedural environment")
    p.add_argument("--kind", choices=sorted(GENERATORS), default="urban")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=float)
    p.add_argument("--length", type=float, help="corridor length")
    p.add_argument("--width", type=float, help="corridor width")
    p.add_argument("--pattern", help="corridor terrain: a class name, 'patches' or 'stairs'")
    p.add_argument("--rooms", type=_positive_int, help="number of rooms")

    p = sub.add_parser("build-costmap", help="build a costmap or heightmap of an environment")
    p.add_argument("--env", required=True)
    p.add_argument("--mode", choices=["semantic", "geometric", "height"], default="semantic")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", help="also write a PGM image")

    p = sub.add_parser("gen-data", help="render start/goal training pairs")
    p.add_argument("--env", required=True)
    p.add_argument("--n", type=_positive_int, default=2000)
    p.add_argument("--fov-ratio", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--viewpoints", type=_positive_int, default=200)
    p.add_argument("--n-rays", type=_positive_int, default=64)
    p.add_argument("--h-r", type=float, default=0.5)
    _add_sensor_flags(p)

    p = sub.add_parser("train", help="train a planner on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="history CSV")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--variant", choices=["semantic", "geometric"])
    p.add_argument("--db", nargs="?", const="", help="record the run (optional database URL)")

    p = sub.add_parser("plan", help="run a planner once and print its keypoints")
    p.add_argument("--model", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--pose", type=_numbers(3), required=True, metavar="X,Y,YAW")
    p.add_argument("--goal", type=_numbers(2), required=True, metavar="GX,GY")
    p.add_argument("--variant", choices=["semantic", "geometric"], default="semantic")
    p.add_argument("--h-r", type=float, default=0.5)
    p.add_argument("--dump", help="write the world-frame trajectory as text")
    _add_sensor_flags(p)

    p = sub.add_parser("eval", help="closed-loop evaluation over random pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="report JSON")
    p.add_argument("--plot", help="SVG of executed paths")
    p.add_argument("--variant", choices=["semantic", "geometric"], default="semantic")
    p.add_argument("--noise-depth", type=float, default=0.0, help="range noise std in meters")
    p.add_argument("--noise-labels", type=float, default=0.0, help="label flip probability")
    p.add_argument("--db", nargs="?", const="", help="record the run (optional database URL)")
    _add_sensor_flags(p)

    p = sub.add_parser("compare", help="train and evaluate semantic vs geometric-only planners")
    p.add_argument("--data", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--seeds", type=_seeds, default=[0, 1, 2])
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--point-baseline", action="store_true")
    p.add_argument("--out", help="comparison table CSV")
    p.add_argument("--db", nargs="?", const="", help="record the runs (optional database URL)")

    p = sub.add_parser("plot-path", help="draw trajectory dumps over a cost field")
    p.add_argument("paths", nargs="+", help="trajectory text dumps")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--env", help="environment; its semantic costmap is drawn")
    source.add_argument("--map", help="IPCM1 map file")
    p.add_argument("--out", required=True)
    return parser


def configure_logging(verbose=0):
    """Root logger level from --verbose, else IMPPLAN_LOG_LEVEL (default WARNING)."""
    if verbose:
        level = logging.DEBUG if verbose > 1 else logging.INFO
    else:
        name = os.environ.get("IMPPLAN_LOG_LEVEL", "WARNING").upper()
        level = getattr(logging, name, None)
        if not isinstance(level, int):
            level = logging.WARNING
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger().setLevel(level)


def _table(args):
    return load_table(args.table) if args.table else default_table()


def _env(args):
    return load_env(args.env, _table(args))


def _results_store(url):
    # imported on demand; the store binds its engine at import time
    import db_utils

    db_utils.initialize_database(url or None)
    return db_utils


def cmd_gen_env(args):
    options = {}
    if args.resolution is not None:
        options["resolution"] = args.resolution
    if args.kind == "corridor":
        for flag, key in (("length", "length"), ("width", "width"), ("pattern", "pattern")):
            if getattr(args, flag) is not None:
                options[key] = getattr(args, flag)
    if args.kind == "rooms" and args.rooms is not None:
        options["n_rooms"] = args.rooms
    env = GENERATORS[args.kind](args.seed, table=_table(args), **options)
    save_env(env, args.out)
    rows, cols = env.shape
    print(f"{env.name}: {env.width:g} x {env.height:g} m, {rows}x{cols} cells -> {args.out}")


def cmd_build_costmap(args):
    env = _env(args)
    if args.mode == "height":
        grid_map = build_heightmap(env)
    else:
        maps = build_maps(env)
        grid_map = maps.semantic if args.mode == "semantic" else maps.geometric
    save_grid_map(grid_map, args.out)
    if args.plot:
        write_pgm(grid_map, args.plot)
    values = grid_map.values
    print(f"{args.mode} map {values.shape[0]}x{values.shape[1]}, range [{values.min():.4f}, {values.max():.4f}] -> {args.out}")


def cmd_gen_data(args):
    if not 0.0 <= args.fov_ratio <= 1.0:
        raise ValueError(f"--fov-ratio must be in [0, 1], got {args.fov_ratio}")
    env = _env(args)
    sensor = SensorConfig(args.fov, args.n_rays, args.max_range)
    maps = build_maps(env)
    workers = worker_count()
    points = sample_viewpoints(env, maps.semantic, args.viewpoints)
    graph = build_reachability_graph(points, maps.semantic, workers=workers)
    samples = generate_pairs(
        graph, env, env.table, sensor, args.n, args.fov_ratio, args.seed, maps.height, args.h_r, workers
    )
    export_dataset(samples, args.out, sensor, env_digest(env), args.h_r)
    print(f"{len(samples)} samples from {graph.n_vertices} viewpoints -> {args.out}")


def _train_config(args):
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["max_epochs"] = args.epochs
    if getattr(args, "variant", None) is not None:
        overrides["variant"] = args.variant
    return replace(cfg, **overrides)


def cmd_train(args):
    env = _env(args)
    samples, header = import_dataset(args.data)
    if header.get("env_hash") and header["env_hash"] != env_digest(env):
        logger.warning("Dataset %s was generated from a different environment than %s", args.data, args.env)
    cfg = _train_config(args)
    if cfg.h_r != header.get("h_r", cfg.h_r):
        logger.warning("Dataset goals use h_r=%s, training uses h_r=%s", header["h_r"], cfg.h_r)
    if cfg.variant == "geometric":
        samples = blind_samples(samples, env.table)
    maps = build_maps(env)
    params0 = init_params(cfg.seed, PlannerConfig(n_rays=samples[0].depth.n_rays), h_r=cfg.h_r)
    params, history = train(samples, maps, params0, cfg)
    save_checkpoint(params, args.out)
    if args.log:
        history.to_csv(args.log)
    best = history.validation[history.best_epoch]
    print(f"stopped at epoch {history.stop_epoch} ({history.stop_reason}); best epoch {history.best_epoch}, val total {best.total:.6f}")
    print(f"model -> {args.out}")
    if args.db is not None:
        run = _results_store(args.db).record_training_run(history, cfg, name=args.out, env_hash=env_digest(env))
        print(f"recorded run {run.id}")


def cmd_plan(args):
    env = _env(args)
    params = load_checkpoint(args.model)
    maps = build_maps(env)
    pose = RobotPose(*args.pose)
    if not (env.contains(pose.x, pose.y) and env.contains(*args.goal)):
        raise ValueError("pose and goal must lie inside the environment")
    depth, semantic = raycast(env, env.table, pose, args.fov, params.config.n_rays, args.max_range)
    if args.variant == "geometric":
        semantic = blind_semantic_scan(semantic, env.table)
    goal = robot_frame_goal(pose, args.goal, maps.height, args.h_r)
    output = plan(depth, semantic, goal, params)
    decision = gate(output)
    for i, kp in enumerate(output.keypoints):
        print(f"keypoint {i}: {format_point(kp)}")
    print(f"mu: {output.mu:.6f}")
    print(f"gate: {decision.value}")
    if args.dump:
        traj = world_trajectory(output.keypoints, pose, maps.height, args.h_r)
        dump_trajectory(traj, args.dump)
        print(f"trajectory -> {args.dump}")


def cmd_eval(args):
    env = _env(args)
    params = load_checkpoint(args.model)
    maps = build_maps(env)
    cfg = RolloutConfig(
        variant=args.variant,
        depth_noise_std=args.noise_depth,
        label_flip_prob=args.noise_labels,
        fov=args.fov,
        n_rays=params.config.n_rays,
        max_range=args.max_range,
    )
    report = evaluate(params, env, maps, args.n, cfg, args.seed)
    for line in report.summary_lines():
        print(line)
    if args.report:
        report.to_json(args.report)
        print(f"report -> {args.report}")
    if args.plot:
        write_path_svg(maps.semantic, [r.path for r in report.results], args.plot, goals=[r.goal for r in report.results])
        print(f"paths -> {args.plot}")
    if args.db is not None:
        store = _results_store(args.db)
        run = store.record_evaluation(report, cfg, name=args.model, seed=args.seed, env_hash=env_digest(env))
        print(f"recorded run {run.id}")


def cmd_compare(args):
    env = _env(args)
    samples, _ = import_dataset(args.data)
    cfg = _train_config(args)
    rollout_cfg = RolloutConfig(n_rays=samples[0].depth.n_rays, fov=samples[0].depth.fov, max_range=samples[0].depth.max_range)
    comparison = compare_variants(
        samples, env, args.seeds, cfg, rollout_cfg, args.n, include_point_baseline=args.point_baseline
    )
    table = comparison.table
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"semantic vs geometric sem_loss change: {format_signed_percent(comparison.relative_change)}")
    print(f"semantic goal reached: {format_percent(float(table.loc[table.variant == 'semantic', 'goal_reached'].iloc[0]))}")
    if args.out:
        table.to_csv(args.out, index=False, float_format="%.10g")
        print(f"table -> {args.out}")
    if args.db is not None:
        store = _results_store(args.db)
        for name, reports in comparison.reports.items():
            for seed, report in zip(args.seeds, reports):
                run = store.record_evaluation(report, rollout_cfg, name=args.data, seed=seed, env_hash=env_digest(env), variant=name)
                print(f"recorded run {run.id}")


def cmd_plot_path(args):
    if args.map:
        cost_map = load_grid_map(args.map, CostMap)
    else:
        cost_map = build_maps(_env(args)).semantic
    paths = [load_trajectory(p).waypoints for p in args.paths]
    write_path_svg(cost_map, paths, args.out)
    print(f"{len(paths)} path(s) -> {args.out}")


COMMANDS = {
    "gen-env": cmd_gen_env,
    "build-costmap": cmd_build_costmap,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "plan": cmd_plan,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "plot-path": cmd_plot_path,
}


def run(argv=None):
    """
    Parse arguments and dispatch one subcommand

    Args:
        argv (list): Arguments without the program name; sys.argv[1:] when None

    Returns:
        int: 0 on success, 1 on domain or I/O errors, 2 on usage errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    configure_logging(args.verbose)
    try:
        COMMANDS[args.command](args)
    except DOMAIN_ERRORS as e:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"impplan {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
