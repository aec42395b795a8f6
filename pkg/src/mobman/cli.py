"""Command-line surface: generate, plan, retime, pc, train, eval, bench.

Report-producing subcommands (train, bench) write delimited CSV output and a
matplotlib figure next to it. Exit codes: 0 success, 2 usage (click), 3 bad
configuration, 4 malformed input file, 5 infeasible / non-converged.
"""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import click
import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from mobman import datasets as dio
from mobman import envs, flow, planner, pointcloud as pc, retime as rt
from mobman.robot import load_robot
from mobman.se3 import Pose

EXIT_CONFIG = 3
EXIT_FORMAT = 4
EXIT_INFEASIBLE = 5


@click.group()
def main():
    """Demonstration synthesis and imitation learning for mobile manipulators."""


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@main.command()
@click.option("--task", type=click.Choice(envs.TASKS), required=True)
@click.option("--episodes", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--workers", type=int, default=1, show_default=True,
              help="Episode-level parallelism; output is identical to serial.")
def generate(task, episodes, seed, out, workers):
    """Generate validated demonstrations: reset, plan, retime, play back, filter."""
    if episodes <= 0:
        _fail(EXIT_CONFIG, "--episodes must be positive")
    spec = envs.task_spec(task, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    demos = _generate_demos(spec, episodes, workers)
    kept = 0
    for demo in demos:
        if demo.success:
            dio.write_demo(demo, out / f"ep{demo.episode:06d}")
            kept += 1
    click.echo(f"kept {kept}/{episodes} demonstrations in {out}")


def _generate_demos(spec, episodes, workers=1):
    if workers <= 1:
        return [envs.generate_episode(spec, ep) for ep in range(episodes)]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(envs.generate_episode, spec, ep) for ep in range(episodes)]
        return [f.result() for f in futures]


@main.command()
@click.option("--robot", "robot_path", type=click.Path(exists=True, path_type=Path),
              help="Robot description file; defaults to the built-in toy model.")
@click.option("--start", type=str, default=None, help="Comma-separated start configuration.")
@click.option("--goal-xyz", nargs=3, type=float, required=True)
@click.option("--goal-rpy", nargs=3, type=float, default=(0.0, 0.0, 0.0), show_default=True)
@click.option("--waypoints", "-t", "t_count", type=int, default=20, show_default=True)
@click.option("--mode", type=click.Choice(planner.PLAN_MODES), default="whole-body", show_default=True)
@click.option("--w-pos", type=float, default=100.0, show_default=True)
@click.option("--w-rot", type=float, default=10.0, show_default=True)
@click.option("--w-smooth", type=float, default=0.1, show_default=True)
@click.option("--w-yaw", type=float, default=1.0, show_default=True)
@click.option("--w-col", type=float, default=200.0, show_default=True)
@click.option("--d-safe", type=float, default=0.05, show_default=True)
@click.option("--obstacle", "obstacles", nargs=4, type=float, multiple=True,
              help="Keep-out sphere: x y z radius (repeatable).")
@click.option("--out", type=click.Path(path_type=Path), required=True,
              help="Output trajectory array (.mbrt)")
def plan(robot_path, start, goal_xyz, goal_rpy, t_count, mode, w_pos, w_rot,
         w_smooth, w_yaw, w_col, d_safe, obstacles, out):
    """Whole-body (or base-only / arm-only) trajectory optimization to a goal pose."""
    try:
        model = load_robot(robot_path) if robot_path else envs.toy_robot()
    except Exception as exc:  # noqa: BLE001 - report as bad input
        _fail(EXIT_FORMAT, f"cannot load robot: {exc}")
    x_init = np.zeros(model.dof)
    if start is not None:
        try:
            x_init = np.array([float(v) for v in start.split(",")])
        except ValueError:
            _fail(EXIT_CONFIG, "--start must be comma-separated numbers")
    from mobman.robot import _origin_from_dict

    goal = _origin_from_dict({"xyz": list(goal_xyz), "rpy": list(goal_rpy)})
    weights = planner.CostWeights(w_pos, w_rot, w_smooth, w_yaw, w_col, d_safe)
    try:
        request = planner.PlanRequest(
            model=model, x_init=x_init, goal=goal, T=t_count, weights=weights,
            obstacles=tuple((np.array(o[:3]), o[3]) for o in obstacles), mode=mode)
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    result = planner.plan(request)
    dio.write_array(result.waypoints, out)
    click.echo(f"converged: {result.converged}  cost: {result.final_cost:.6g}  "
               f"iters: {result.iters}  wrote {out}")
    if not result.converged:
        sys.exit(EXIT_INFEASIBLE)


@main.command(name="retime")
@click.option("--traj", type=click.Path(exists=True, path_type=Path), required=True,
              help="Waypoint array (.mbrt, T x dof)")
@click.option("--v-max", type=str, required=True, help="Comma-separated per-joint limits.")
@click.option("--a-max", type=str, required=True, help="Comma-separated per-joint limits.")
@click.option("--dt", type=float, default=0.1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Sampled (time, q..., qd...) array output (.mbrt)")
def retime_cmd(traj, v_max, a_max, dt, out):
    """Time-optimal retiming of a geometric trajectory under joint limits."""
    try:
        waypoints = dio.read_array(traj).astype(np.float64)
    except dio.ArrayFormatError as exc:
        _fail(EXIT_FORMAT, str(exc))
    try:
        vm = np.array([float(v) for v in v_max.split(",")])
        am = np.array([float(v) for v in a_max.split(",")])
    except ValueError:
        _fail(EXIT_CONFIG, "limits must be comma-separated numbers")
    try:
        path = rt.path_from_waypoints(waypoints)
        timed = rt.retime(path, vm, am)
    except rt.InfeasiblePathError as exc:
        _fail(EXIT_INFEASIBLE, f"{exc} (grid index {exc.index})")
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    times, qs, qds = rt.sample_timed(timed, dt)
    if out is not None:
        dio.write_array(np.concatenate([times[:, None], qs, qds], axis=1), out)
    click.echo(f"total time: {timed.times[-1]:.4f} s over {len(times)} samples")


@main.command(name="pc")
@click.option("--input", "input_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--output", type=click.Path(path_type=Path), required=True)
@click.option("--voxel", type=float, default=None, help="Voxel size in meters.")
@click.option("--sor-k", type=int, default=None, help="Outlier-removal neighbor count.")
@click.option("--sor-std", type=float, default=1.0, show_default=True)
@click.option("--crop", nargs=6, type=float, default=None,
              help="Workspace box: xmin ymin zmin xmax ymax zmax")
def pc_cmd(input_path, output, voxel, sor_k, sor_std, crop):
    """Preprocess a binary point cloud: crop, voxel downsample, outlier removal."""
    try:
        cloud = pc.read_cloud(input_path)
    except pc.CloudFormatError as exc:
        _fail(EXIT_FORMAT, str(exc))
    if crop is not None:
        cloud = pc.crop_foreground(cloud, crop[:3], crop[3:])
    if voxel is not None:
        cloud = pc.voxel_downsample(cloud, voxel)
    if sor_k is not None:
        cloud = pc.remove_statistical_outliers(cloud, sor_k, sor_std)
        if cloud.sor_warning:
            click.echo("warning: k >= point count, outlier removal skipped", err=True)
    pc.write_cloud(cloud, output)
    click.echo(f"wrote {len(cloud)} points to {output}")


def _train_config(steps, batch, peak_lr, min_lr, warmup, seed):
    return flow.TrainConfig(
        batch_size=batch, total_steps=steps, peak_lr=peak_lr, min_lr=min_lr,
        warmup_steps=min(warmup, steps), seed=seed)


def _write_loss_report(history, out_dir: Path):
    csv_path = out_dir / "loss.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "learning_rate"])
        for step, loss, lr in history:
            writer.writerow([step, f"{loss:.8g}", f"{lr:.8g}"])
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [h[0] for h in history]
    ax.plot(steps, [h[1] for h in history], lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("flow-matching loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(out_dir / "loss.png", dpi=120)
    plt.close(fig)
    return csv_path


@main.command()
@click.option("--data", type=click.Path(exists=True, path_type=Path), required=True,
              help="Simulated demonstration dataset directory.")
@click.option("--real", type=click.Path(exists=True, path_type=Path), default=None,
              help="Real demonstration dataset for co-training.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--horizon", type=int, default=8, show_default=True)
@click.option("--steps", type=int, default=2000, show_default=True)
@click.option("--batch", type=int, default=64, show_default=True)
@click.option("--peak-lr", type=float, default=2e-3, show_default=True)
@click.option("--min-lr", type=float, default=1e-5, show_default=True)
@click.option("--warmup", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def train(data, real, out, horizon, steps, batch, peak_lr, min_lr, warmup, seed):
    """Train the flow-matching policy; writes a checkpoint, loss CSV, and figure."""
    sim = dio.load_dataset(data)
    sim, _ = dio.filter_and_assemble(sim)
    real_demos = []
    if real is not None:
        real_demos, _ = dio.filter_and_assemble(dio.load_dataset(real))
    if not sim and not real_demos:
        _fail(EXIT_CONFIG, "no successful demonstrations to train on")
    ref = (sim or real_demos)[0]
    net = flow.FlowNet(ref.observations.shape[1], horizon, ref.actions.shape[1], seed=seed)
    cfg = _train_config(steps, batch, peak_lr, min_lr, warmup, seed)
    result = flow.co_train(net, sim, real_demos, cfg)
    out.mkdir(parents=True, exist_ok=True)
    flow.save_checkpoint(result, cfg, out)
    csv_path = _write_loss_report(result.history, out)
    click.echo(f"final loss {result.history[-1][1]:.4f}; checkpoint in {out}, report {csv_path}")


@main.command(name="eval")
@click.option("--ckpt", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--task", type=click.Choice(envs.TASKS), required=True)
@click.option("--episodes", type=int, default=30, show_default=True)
@click.option("--horizon", type=int, default=80, show_default=True)
@click.option("--seed", type=int, default=1000, show_default=True,
              help="Scene seed for evaluation episodes.")
def eval_cmd(ckpt, task, episodes, horizon, seed):
    """Closed-loop kinematic rollout evaluation of a trained policy."""
    try:
        net, norm, fields = flow.load_checkpoint(ckpt)
    except (OSError, KeyError, dio.ArrayFormatError) as exc:
        _fail(EXIT_FORMAT, f"cannot load checkpoint: {exc}")
    policy = flow.ChunkPolicy(net, norm, infer_steps=int(fields.get("infer_steps", 10)))
    spec = envs.task_spec(task, seed=seed)
    rate = flow.kinematic_rollout_eval(
        policy, lambda ep: envs.KinematicEnv(spec, ep), episodes, horizon, seed=seed)
    click.echo(f"success rate: {rate:.3f} over {episodes} rollouts")


@main.command()
@click.option("--config", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def bench(config, out):
    """Demo-count sweep: generate, train, and evaluate per (task, count, seed)."""
    import yaml

    try:
        cfg = yaml.safe_load(Path(config).read_text())
        tasks = list(cfg.get("tasks", ["drawer"]))
        demo_counts = [int(c) for c in cfg.get("demo_counts", [50, 100, 200])]
        rollouts = int(cfg.get("rollouts", 30))
        seeds = [int(s) for s in cfg.get("seeds", [0])]
        train_steps = int(cfg.get("train_steps", 2000))
        horizon = int(cfg.get("rollout_horizon", 80))
        chunk_h = int(cfg.get("chunk_horizon", 8))
        peak_lr = float(cfg.get("peak_lr", 2e-3))
    except (yaml.YAMLError, ValueError, AttributeError, TypeError) as exc:
        _fail(EXIT_CONFIG, f"malformed benchmark config: {exc}")
    if min(demo_counts) <= 0 or rollouts <= 0:
        _fail(EXIT_CONFIG, "demo counts and rollouts must be positive")
    for task in tasks:
        if task not in envs.TASKS:
            _fail(EXIT_CONFIG, f"unknown task {task!r}")

    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for task in tasks:
        for seed in seeds:
            spec = envs.task_spec(task, seed=seed)
            # Episodes are independently keyed, so the first k of the largest
            # run are identical to a k-episode run; generate once and slice.
            demos = _generate_demos(spec, max(demo_counts))
            for count in demo_counts:
                train_set = [d for d in demos[:count] if d.success]
                if not train_set:
                    rows.append((task, count, rollouts, 0, 0.0, seed))
                    continue
                ref = train_set[0]
                net = flow.FlowNet(ref.observations.shape[1], chunk_h, ref.actions.shape[1], seed=seed)
                tcfg = _train_config(train_steps, 64, peak_lr, 1e-5, 200, seed)
                result = flow.co_train(net, train_set, [], tcfg)
                policy = flow.ChunkPolicy(result.net, result.normalization, infer_steps=10)
                eval_spec = envs.task_spec(task, seed=seed + 90001)
                rate = flow.kinematic_rollout_eval(
                    policy, lambda ep: envs.KinematicEnv(eval_spec, ep), rollouts, horizon, seed=seed)
                rows.append((task, count, rollouts, int(round(rate * rollouts)), rate, seed))
                click.echo(f"{task} demos={count} seed={seed}: rate {rate:.3f} "
                           f"({len(train_set)}/{count} successful demos)")

    csv_path = out / "bench.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["task", "demos", "rollouts", "successes", "rate", "seed"])
        for row in rows:
            writer.writerow([row[0], row[1], row[2], row[3], f"{row[4]:.4f}", row[5]])

    fig, ax = plt.subplots(figsize=(6, 4))
    for task in tasks:
        means = []
        for count in demo_counts:
            rates = [r[4] for r in rows if r[0] == task and r[1] == count]
            means.append(np.mean(rates) if rates else 0.0)
        ax.plot(demo_counts, means, marker="o", label=task)
    ax.set_xlabel("demonstrations")
    ax.set_ylabel("mean success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "bench.png", dpi=120)
    plt.close(fig)
    click.echo(f"wrote {csv_path} and {out / 'bench.png'}")


if __name__ == "__main__":
    main()
