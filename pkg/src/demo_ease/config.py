"""Run configuration: defaults, presets, a TOML file and flag overrides,
resolved in that order into one validated ``RunConfig``."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli
import tomli_w

from .agent import TrainConfig
from .demo import PidGains
from .env import EnvParams, RewardParams, TaskKind, Workspace
from .robot import RobotModel


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CollisionConfig:
    half_size: float = 0.02
    margin: float = 0.01
    partition_slack: float = 0.02


@dataclass(frozen=True)
class DemoOptions:
    # drop demonstrations that end in collision, timeout or leaving the partition
    discard_failed: bool = False


@dataclass(frozen=True)
class PathsConfig:
    demo: str = ""
    out_dir: str = "runs"
    checkpoint: str = ""


@dataclass(frozen=True)
class EvalConfig:
    n_trials: int = 500

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")


@dataclass
class RunConfig:
    task: TaskKind = TaskKind.P2P
    seed: int = 0
    robot: RobotModel = field(default_factory=RobotModel)
    workspace: Workspace = field(default_factory=Workspace)
    reward: RewardParams = field(default_factory=RewardParams)
    collision: CollisionConfig = field(default_factory=CollisionConfig)
    pid: PidGains = field(default_factory=PidGains)
    demo: DemoOptions = field(default_factory=DemoOptions)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def env_params(self) -> EnvParams:
        c = self.collision
        return EnvParams(self.robot, self.workspace, self.reward, self.train.n_tau,
                         c.half_size, c.margin, c.partition_slack)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)


SECTIONS = {
    "robot": RobotModel,
    "workspace": Workspace,
    "reward": RewardParams,
    "collision": CollisionConfig,
    "pid": PidGains,
    "demo": DemoOptions,
    "train": TrainConfig,
    "paths": PathsConfig,
    "eval": EvalConfig,
}
TOP_LEVEL = ("task", "seed")
# the run seed drives training; a separate train.seed would be ambiguous
_HIDDEN = {"train": ("seed",)}


def _section_keys(section: str) -> list[str]:
    return [f.name for f in dataclasses.fields(SECTIONS[section]) if f.name not in _HIDDEN.get(section, ())]


_P2P_FULL = {"task": "p2p", "train.n_tau": 400, "train.n_ep": 250, "train.n_up": 20}
_P2PO_FULL = {"task": "p2p-o", "train.n_tau": 500, "train.n_ep": 500, "train.n_up": 25}


def _grid(base: dict, prefix: str, lambdas, lambda_demos: int, demo_counts) -> dict:
    out = {f"{prefix}-full": dict(base)}
    for lam in lambdas:
        out[f"{prefix}-lambda{lam:g}"] = {**base, "train.lambda_bc": lam, "train.n_demos": lambda_demos}
    for n in demo_counts:
        out[f"{prefix}-demos{n}"] = {**base, "train.lambda_bc": 1.0, "train.n_demos": n}
    out[f"{prefix}-ddpg"] = {**base, "train.lambda_bc": 0.0, "train.n_demos": 0}
    return out


PRESETS = {
    **_grid(_P2P_FULL, "p2p", (0.1, 0.6, 1.8), 100, (0, 80, 160)),
    **_grid(_P2PO_FULL, "p2po", (0.5, 1.0, 2.0), 250, (100, 200, 400)),
    # reduced P2P that trains in about a minute per seed on one core
    "p2p-desk": {
        "task": "p2p", "train.n_tau": 100, "train.n_ep": 40, "train.n_up": 20, "train.n_demos": 40,
        "train.lambda_bc": 1.0, "train.gamma": 0.95, "train.start_steps": 1000, "train.update_after": 1000,
        "train.actor_hidden": [64, 64], "train.critic_hidden": [64, 64],
    },
}


def _flatten(doc: dict, where: str) -> dict:
    flat = {}
    for key, value in doc.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: [{key}] must be a table")
            allowed = _section_keys(key)
            for sub, v in value.items():
                if sub not in allowed:
                    raise ConfigError(f"{where}: unknown key {key}.{sub}")
                flat[f"{key}.{sub}"] = v
        elif key in TOP_LEVEL:
            flat[key] = value
        else:
            raise ConfigError(f"{where}: unknown key {key}")
    return flat


def _check_key(key: str, where: str) -> None:
    if key in TOP_LEVEL:
        return
    section, _, sub = key.partition(".")
    if section not in SECTIONS or sub not in _section_keys(section):
        raise ConfigError(f"{where}: unknown key {key}")


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def build(values: dict) -> RunConfig:
    """Construct a RunConfig from dotted keys; errors name the offending section."""
    for key in values:
        _check_key(key, "config")
    kwargs = {}
    for section, cls in SECTIONS.items():
        sub = {k.partition(".")[2]: _tuplify(v) for k, v in values.items() if k.startswith(section + ".")}
        try:
            kwargs[section] = cls(**sub)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from exc
    try:
        task = TaskKind.parse(values.get("task", TaskKind.P2P.value))
    except ValueError as exc:
        raise ConfigError(f"task: {exc}") from exc
    seed = values.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    return RunConfig(task=task, seed=seed, **kwargs)


def load(path: Optional[str] = None, preset: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then ``preset``, then the TOML file at ``path``, then
    ``overrides`` (dotted keys such as ``train.lambda_bc``)."""
    values: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
        values.update(PRESETS[preset])
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomli.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        values.update(_flatten(doc, str(path)))
    for key, value in (overrides or {}).items():
        _check_key(key, "override")
        if value is not None:
            values[key] = value
    return build(values)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def to_dict(cfg: RunConfig) -> dict:
    doc = {"task": cfg.task.value, "seed": cfg.seed}
    for section in SECTIONS:
        obj = getattr(cfg, section)
        doc[section] = {k: _plain(getattr(obj, k)) for k in _section_keys(section)}
    return doc


def write_snapshot(cfg: RunConfig, path) -> None:
    """Resolved configuration as TOML; loading it gives back ``cfg``."""
    Path(path).write_bytes(tomli_w.dumps(to_dict(cfg)).encode("utf-8"))
