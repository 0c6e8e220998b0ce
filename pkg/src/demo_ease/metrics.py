"""Learning-curve statistics and test-rollout reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .agent import load_agent
from .env import Cause, EnvParams, ReachEnv, TaskKind, obs_dim, sample_episode, stage_for
from .errors import CheckpointError

SMOOTHING_WINDOW = 50


class CurveTooShort(ValueError):
    pass


@dataclass
class TrainingMetrics:
    R10: float
    R90: float
    IR: float
    T50: Optional[int]


def moving_average(x, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average what exists."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def training_metrics(returns, window: int = SMOOTHING_WINDOW) -> TrainingMetrics:
    """Initial/ultimate mean return over the first/last ceil(10%) episodes,
    their difference, and the first (1-based) episode whose smoothed return
    exceeds half the ultimate mean (None if it never does)."""
    r = np.asarray(returns, dtype=float)
    if len(r) < 10:
        raise CurveTooShort(f"need at least 10 episodes, got {len(r)}")
    k = math.ceil(0.1 * len(r))
    r10 = float(np.mean(r[:k]))
    r90 = float(np.mean(r[-k:]))
    above = np.nonzero(moving_average(r, window) > 0.5 * r90)[0]
    t50 = int(above[0]) + 1 if len(above) else None
    return TrainingMetrics(r10, r90, r90 - r10, t50)


@dataclass
class TrialRecord:
    trial: int
    cause: str
    success: bool
    steps: int
    ret: float
    effort: float  # sum of ||tau_hat|| over executed steps
    final_error: float
    e95: float
    errors: list = field(default_factory=list, repr=False)


@dataclass
class TestReport:
    n_trials: int
    n_success: int
    p_scs: float
    t_eff: float
    t_eff_per_step: float
    r_test: Optional[float]
    e95: Optional[float]
    e95_ntau: Optional[float]
    trials: list

    def to_json(self) -> str:
        d = asdict(self)
        d["trials"] = [{k: v for k, v in t.items() if k != "errors"} for t in d["trials"]]
        return json.dumps(d, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "cause", "success", "steps", "return", "effort", "final_error", "e95"])
            for t in self.trials:
                w.writerow([t.trial, t.cause, int(t.success), t.steps, repr(t.ret), repr(t.effort),
                            repr(t.final_error), repr(t.e95)])


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, trial])))


def run_trial(policy: Callable, task: TaskKind, trial: int, seed: int, params: EnvParams) -> TrialRecord:
    task = TaskKind.parse(task)
    config = sample_episode(stage_for(task, "test"), task, trial_rng(seed, trial), params)
    env = ReachEnv(task, params)
    obs = env.reset(config).to_vector()
    ret = 0.0
    effort = 0.0
    errors = []
    while True:
        out = env.step(policy(obs))
        ret += out.reward
        effort += float(np.linalg.norm(out.tau_hat))
        errors.append(float(np.linalg.norm(out.obs_next.err)))
        obs = out.obs_next.to_vector()
        if out.zeta:
            break
    window = max(1, math.ceil(0.05 * len(errors)))
    return TrialRecord(trial, out.cause.value, out.cause is Cause.Reached, len(errors), ret, effort,
                       errors[-1], float(np.mean(errors[-window:])), errors)


def summarize(trials: list, n_tau: int) -> TestReport:
    """Aggregate trial records; independent of trial order."""
    n = len(trials)
    wins = [t for t in trials if t.success]
    total_effort = math.fsum(t.effort for t in trials)
    total_steps = sum(t.steps for t in trials)
    start = math.ceil(0.95 * n_tau)
    tail = [e for t in wins for i, e in enumerate(t.errors, start=1) if i >= start]
    return TestReport(
        n_trials=n,
        n_success=len(wins),
        p_scs=len(wins) / n if n else 0.0,
        t_eff=total_effort / (n * n_tau) if n else 0.0,
        t_eff_per_step=total_effort / total_steps if total_steps else 0.0,
        r_test=math.fsum(t.ret for t in wins) / len(wins) if wins else None,
        e95=math.fsum(t.e95 for t in wins) / len(wins) if wins else None,
        e95_ntau=math.fsum(tail) / len(tail) if tail else None,
        trials=sorted(trials, key=lambda t: t.trial),
    )


def evaluate(policy: Callable, task: TaskKind, n_trials: int = 500, seed: int = 0,
             params: EnvParams = EnvParams()) -> TestReport:
    """Noiseless test rollouts; trial ``i`` draws its episode from a stream
    seeded by ``(seed, i)`` so results do not depend on evaluation order."""
    trials = [run_trial(policy, task, i, seed, params) for i in range(n_trials)]
    return summarize(trials, params.n_tau)


def actor_policy(actor) -> Callable:
    return actor.forward


def evaluate_checkpoint(path, task: TaskKind, n_trials: int = 500, seed: int = 0,
                        params: EnvParams = EnvParams()) -> TestReport:
    """Load an agent checkpoint and evaluate its noiseless actor."""
    agent, _ = load_agent(path)
    if agent.obs_dim != obs_dim(TaskKind.parse(task)):
        raise CheckpointError(f"{path}: actor expects {agent.obs_dim} inputs, task {task} gives "
                              f"{obs_dim(TaskKind.parse(task))}")
    return evaluate(actor_policy(agent.actor), task, n_trials, seed, params)
