"""Competitive co-evolution of agent morphology and fighting tactics."""

from .arena import PhysicsParams, Result, TaskKind
from .config import RunConfig, load_config
from .morphology import MorphVector, Species, clamp_morph, derive_body, identity_morph, species_template
from .policy import PolicyParams, init_policy
from .pool import PolicyPool, SamplerConfig, eligible_versions, sample_opponent
from .selfplay import TrainRunState, generation, load_checkpoint, new_run, save_checkpoint, train
from .tournament import DuelSpec, PolicyRef, WinStats, cross_table, duel, win_rate_curve

__version__ = "0.1.0"

__all__ = [
    "PhysicsParams", "Result", "TaskKind", "RunConfig", "load_config",
    "MorphVector", "Species", "clamp_morph", "derive_body", "identity_morph", "species_template",
    "PolicyParams", "init_policy", "PolicyPool", "SamplerConfig", "eligible_versions", "sample_opponent",
    "TrainRunState", "generation", "load_checkpoint", "new_run", "save_checkpoint", "train",
    "DuelSpec", "PolicyRef", "WinStats", "cross_table", "duel", "win_rate_curve",
]
