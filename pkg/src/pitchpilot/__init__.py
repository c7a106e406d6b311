"""Pitch-autopilot training workbench.

A policy-gradient agent (product-of-ratios surrogate with a quadratic
trust-region penalty, ADAM-optimized) learns normal-acceleration
tracking on a surrogate airframe, with scheduled, prioritized and
hindsight experience replay, a command-amplitude curriculum, robustness
retraining against latency/estimation/parametric perturbations, and
success-rate sweeps.
"""

from .config import ConfigError, CurriculumConfig, WorkbenchConfig, config_digest, load_config
from .dynamics import (
    ActuatorConfig,
    ActuatorFaultError,
    AeroConfig,
    NonNominalSpec,
    PlantDivergedError,
    PlantState,
)
from .episode import (
    EnvConfig,
    Normalizer,
    PerformanceReport,
    PerformanceThresholds,
    RewardConfig,
    Trajectory,
    evaluate_metrics,
    run_episode,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .replay import ReplayBuffer, ReplayConfig, SerGate, her_relabel
from .signals import CommandSignal, ReferenceModelConfig, generate_command, shape
from .trpo import GaussianPolicy, TrpoConfig, TrpoState
from .training import (
    SweepResult,
    TrainRun,
    TrainingAbortedError,
    intermediate_test,
    robustify,
    sweep,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ActuatorConfig", "ActuatorFaultError", "AeroConfig", "Checkpoint",
    "CommandSignal", "ConfigError", "CurriculumConfig", "EnvConfig",
    "GaussianPolicy", "NonNominalSpec", "Normalizer", "PerformanceReport",
    "PerformanceThresholds", "PlantDivergedError", "PlantState",
    "ReferenceModelConfig", "ReplayBuffer", "ReplayConfig", "RewardConfig",
    "SerGate", "SweepResult", "TrainRun", "TrainingAbortedError",
    "Trajectory", "TrpoConfig", "TrpoState", "WorkbenchConfig",
    "config_digest", "evaluate_metrics", "generate_command", "her_relabel",
    "intermediate_test", "load_checkpoint", "load_config", "robustify",
    "run_episode", "save_checkpoint", "shape", "sweep", "train",
]
