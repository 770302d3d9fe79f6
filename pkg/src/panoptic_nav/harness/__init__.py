"""Navigation episodes, policies, metrics and ablation suites."""

from .episode import PRESETS, EpisodeResult, EpisodeSpec, StepLog, collides, run_episode
from .metrics import Metrics, compute_metrics, shortest_path_length
from .policy import NO_WAYPOINT, POLICIES, STOP, Context, Decision, get_policy

__all__ = [
    "NO_WAYPOINT", "POLICIES", "PRESETS", "STOP", "Context", "Decision", "EpisodeResult", "EpisodeSpec",
    "Metrics", "StepLog", "collides", "compute_metrics", "get_policy", "run_episode", "shortest_path_length",
]
