"""DDPG for arm reaching, accelerated by PID demonstrations copied across
symmetric workspace quadrants and a Q-filtered behaviour-cloning loss."""
from .agent import TrainConfig, load_agent, make_agent, save_agent, train
from .config import ConfigError, RunConfig
from .demo import PidGains, record_demos
from .env import Cause, EnvParams, ReachEnv, TaskKind
from .errors import BadMagic, CheckpointError, FileFormatError, TruncatedFile, VersionMismatch
from .metrics import evaluate, evaluate_checkpoint, training_metrics
from .replay import ReplayBuffer, Transition
from .robot import JointState, RobotModel

__version__ = "0.1.0"

__all__ = [
    "BadMagic", "Cause", "CheckpointError", "ConfigError", "EnvParams", "FileFormatError", "JointState",
    "PidGains", "ReachEnv", "ReplayBuffer", "RobotModel", "RunConfig", "TaskKind", "TrainConfig", "Transition",
    "TruncatedFile", "VersionMismatch", "evaluate", "evaluate_checkpoint", "load_agent", "make_agent",
    "record_demos", "save_agent", "train", "training_metrics",
]
