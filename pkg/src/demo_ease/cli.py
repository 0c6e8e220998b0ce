"""Command-line entry point: ``demo``, ``train`` and ``eval`` stages."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import agent, config, demo, metrics, replay
from .env import obs_dim
from .errors import CheckpointError, FileFormatError

DEMO_FILE = "demos.dez"
DEMO_STATS = "demo_stats.json"
SNAPSHOT = "config.toml"
TRAIN_LOG = "train_log.csv"
METRICS = "metrics.json"
LATEST = "latest.dezc"
FINAL = "final.dezc"
REPORT = "report"
# keeps demonstration draws independent of the training streams
_DEMO_STREAM = 7


class MissingDemoFile(FileNotFoundError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--preset", help=f"one of: {', '.join(sorted(config.PRESETS))}")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--task", choices=["p2p", "p2p-o"])
    common.add_argument("--n-demos", type=int)
    common.add_argument("--lambda-bc", type=float)
    common.add_argument("--repeats", type=int, default=1, help="run seeds seed..seed+k-1 on worker threads")

    p = argparse.ArgumentParser(prog="demo-ease", description="Demonstration-accelerated DDPG for arm reaching.")
    sub = p.add_subparsers(dest="command", required=True)
    d = sub.add_parser("demo", parents=[common], help="record PID demonstrations")
    d.add_argument("--out", help=f"demo buffer file (default <out-dir>/{DEMO_FILE})")
    t = sub.add_parser("train", parents=[common], help="train an agent")
    t.add_argument("--demo", help=f"demo buffer file (default <out-dir>/{DEMO_FILE})")
    t.add_argument("--keep-every", type=int, default=0, help="also keep a numbered checkpoint every k epochs")
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", help=f"agent checkpoint (default <out-dir>/{FINAL})")
    e.add_argument("--n-trials", type=int)
    e.add_argument("--out", help=f"report path prefix (default <out-dir>/{REPORT})")
    return p


def _overrides(args) -> dict:
    return {
        "seed": args.seed,
        "task": args.task,
        "paths.out_dir": args.out_dir,
        "train.n_demos": args.n_demos,
        "train.lambda_bc": args.lambda_bc,
        "eval.n_trials": getattr(args, "n_trials", None),
        "paths.demo": getattr(args, "demo", None),
        "paths.checkpoint": getattr(args, "checkpoint", None),
    }


def _demo_path(cfg: config.RunConfig, out_dir: Path) -> Path:
    return Path(cfg.paths.demo) if cfg.paths.demo else out_dir / DEMO_FILE


def record_demo_buffer(cfg: config.RunConfig):
    """Demonstration buffer for ``cfg`` and its recording statistics."""
    params = cfg.env_params()
    n = cfg.train.n_demos
    buf = replay.ReplayBuffer(obs_dim(cfg.task), 4, demo.demo_capacity(n, params.n_tau, params.workspace.M),
                              evict=False)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, _DEMO_STREAM])))
    stats = demo.record_demos(cfg.task, n, None, buf, rng, params, cfg.pid, cfg.demo.discard_failed)
    return buf, stats


def run_demo(cfg: config.RunConfig, out: Optional[str] = None) -> dict:
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(out) if out else _demo_path(cfg, out_dir)
    buf, stats = record_demo_buffer(cfg)
    n = cfg.train.n_demos
    buf.save(path)
    summary = {"task": cfg.task.value, "seed": cfg.seed, "n_demos": n, "file": str(path), **stats.as_dict()}
    (out_dir / DEMO_STATS).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    config.write_snapshot(cfg, out_dir / SNAPSHOT)
    return summary


def training_buffers(cfg: config.RunConfig, buffer_d=None):
    """Ordinary buffer seeded with every demonstration, plus ``buffer_d``."""
    buffer_o = replay.ReplayBuffer(obs_dim(cfg.task), 4, cfg.train.buffer_o)
    if buffer_d is not None:
        buffer_o.extend_records(buffer_d.records())
    return buffer_o, buffer_d


def load_demos(cfg: config.RunConfig, path: Path):
    if cfg.train.n_demos == 0:
        return training_buffers(cfg)
    if not path.exists():
        raise MissingDemoFile(f"n_demos = {cfg.train.n_demos} but demo file {path} does not exist; "
                              f"run the demo stage first")
    buffer_d = replay.load(path, evict=False)
    if buffer_d.obs_dim != obs_dim(cfg.task):
        raise FileFormatError(f"{path}: observation size {buffer_d.obs_dim} does not match task "
                              f"{cfg.task.value} ({obs_dim(cfg.task)})")
    return training_buffers(cfg, buffer_d)


def run_train(cfg: config.RunConfig, keep_every: int = 0) -> dict:
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    buffer_o, buffer_d = load_demos(cfg, _demo_path(cfg, out_dir))
    config.write_snapshot(cfg, out_dir / SNAPSHOT)
    train_cfg = cfg.train_config()
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    def sink(params, state):
        meta = agent.checkpoint_meta(train_cfg, state, cfg.task)
        agent.save_agent(ckpt_dir / LATEST, params, meta)
        if keep_every and state.epoch % keep_every == 0:
            agent.save_agent(ckpt_dir / f"epoch_{state.epoch:04d}.dezc", params, meta)

    with open(out_dir / TRAIN_LOG, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(agent.LOG_COLUMNS)
        params, logs = agent.train(train_cfg, cfg.task, buffer_o, buffer_d, cfg.env_params(),
                                   checkpoint_sink=sink, log_sink=lambda log: writer.writerow(log.row()))
    agent.save_agent(out_dir / FINAL, params, agent.checkpoint_meta(
        train_cfg, agent.TrainingState(train_cfg.n_ep, len(logs), sum(l.steps for l in logs)), cfg.task))
    try:
        curve = dataclasses.asdict(metrics.training_metrics([l.ret for l in logs]))
    except metrics.CurveTooShort:
        curve = dict.fromkeys(f.name for f in dataclasses.fields(metrics.TrainingMetrics))
    result = {"episodes": len(logs), "successes": sum(l.cause == "reached" for l in logs), **curve}
    (out_dir / METRICS).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result


def run_eval(cfg: config.RunConfig, out: Optional[str] = None) -> dict:
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else out_dir / FINAL
    report = metrics.evaluate_checkpoint(ckpt, cfg.task, cfg.eval.n_trials, cfg.seed, cfg.env_params())
    prefix = Path(out) if out else out_dir / REPORT
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.json").write_text(report.to_json() + "\n")
    report.write_csv(f"{prefix}.csv")
    config.write_snapshot(cfg, out_dir / "eval_config.toml")
    return {"p_scs": report.p_scs, "t_eff": report.t_eff, "r_test": report.r_test, "e95": report.e95}


def _run_one(args, cfg: config.RunConfig) -> dict:
    if args.command == "demo":
        return run_demo(cfg, args.out)
    if args.command == "train":
        return run_train(cfg, args.keep_every)
    return run_eval(cfg, args.out)


def main(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.repeats < 1:
            raise config.ConfigError("--repeats must be >= 1")
        base = config.load(args.config, args.preset, _overrides(args))
        if args.repeats == 1:
            runs = [base]
        else:
            # each repeat gets its own seed and output directory
            runs = [dataclasses.replace(base, seed=base.seed + i,
                                        paths=dataclasses.replace(base.paths, out_dir=str(
                                            Path(base.paths.out_dir) / f"seed_{base.seed + i}")))
                    for i in range(args.repeats)]
        with ThreadPoolExecutor(max_workers=len(runs)) as pool:
            results = list(pool.map(lambda c: _run_one(args, c), runs))
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MissingDemoFile, CheckpointError, FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for cfg, result in zip(runs, results):
        print(json.dumps({"seed": cfg.seed, "out_dir": cfg.paths.out_dir, **result}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
