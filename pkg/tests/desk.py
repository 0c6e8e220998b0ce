"""Reduced-scale P2P training shared by the learning-trend checks."""
from __future__ import annotations

import numpy as np

from demo_ease import agent, cli, config, metrics

SEEDS = (0, 1, 2, 3, 4)
N_DEMOS = 40


def desk_config(seed: int, n_demos: int, lambda_bc: float) -> config.RunConfig:
    return config.load(preset="p2p-desk",
                       overrides={"seed": seed, "train.n_demos": n_demos, "train.lambda_bc": lambda_bc})


def desk_returns(seed: int, n_demos: int, lambda_bc: float) -> np.ndarray:
    cfg = desk_config(seed, n_demos, lambda_bc)
    buffer_d = cli.record_demo_buffer(cfg)[0] if n_demos else None
    buffer_o, buffer_d = cli.training_buffers(cfg, buffer_d)
    _, logs = agent.train(cfg.train_config(), cfg.task, buffer_o, buffer_d, cfg.env_params())
    return np.array([log.ret for log in logs])


def seed_metrics(n_demos: int, lambda_bc: float, seeds=SEEDS) -> list[metrics.TrainingMetrics]:
    return [metrics.training_metrics(desk_returns(s, n_demos, lambda_bc)) for s in seeds]
