"""Waypoint-selection policies.

A policy sees a :class:`Context` and returns the index of the chosen
waypoint or :data:`STOP`. Both built-in policies share the same goal
detector: the panorama subregion most similar to the goal descriptor, once
above a threshold, is projected into the world as the goal estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..config import DEFAULT, HarnessConfig
from ..traversable import Waypoint

STOP = -1
NO_WAYPOINT = -2


@dataclass
class Context:
    pose: object  # current Pose
    waypoints: list[Waypoint]
    waypoint_xy: np.ndarray  # (n, 2) world positions of the waypoints
    slot_features: np.ndarray  # (12, D) panorama view features (zero where absent)
    candidates: list  # [(slot, similarity, (x, y))] subregion goal candidates
    goal: np.ndarray  # (D,) goal descriptor
    visited: np.ndarray  # (m, 2) positions visited so far
    memory: dict = field(default_factory=dict)  # policy state carried between steps
    cfg: HarnessConfig = DEFAULT.harness
    reach: np.ndarray | None = None  # (n,) clear fraction of the straight path to each waypoint


@dataclass(frozen=True)
class Decision:
    choice: int  # waypoint index or STOP
    scores: tuple = ()
    reason: str = ""
    goal_estimate: tuple | None = None


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def detect_goal(ctx: Context):
    """Best subregion candidate above the detection threshold, remembered
    across steps; returns ``(similarity, (x, y))`` or ``None``."""
    best = None
    for slot, sim, xy in ctx.candidates:
        if sim > ctx.cfg.detect_similarity and (best is None or sim > best[0]):
            best = (sim, tuple(xy))
    if best is not None:
        ctx.memory["goal"] = best
    return ctx.memory.get("goal")


def _novelty(ctx: Context) -> np.ndarray:
    if len(ctx.visited) == 0 or len(ctx.waypoint_xy) == 0:
        return np.ones(len(ctx.waypoint_xy))
    d = np.sqrt(((ctx.waypoint_xy[:, None, :] - ctx.visited[None, :, :]) ** 2).sum(-1)).min(axis=1)
    return np.minimum(1.0, d / (2.0 * ctx.cfg.visit_radius))


def goal_free_prior(ctx: Context) -> np.ndarray:
    """Exploration prior in [0, 1]: favour unvisited places, ahead of the agent."""
    fwd = np.array([(1.0 + math.cos(w.angle)) / 2.0 for w in ctx.waypoints])
    return _novelty(ctx) * _reach(ctx) * (0.6 + 0.4 * fwd)


def _reach(ctx: Context) -> np.ndarray:
    if ctx.reach is None:
        return np.ones(len(ctx.waypoints))
    return np.asarray(ctx.reach, dtype=np.float64)


def distance_prior(ctx: Context, goal_xy) -> np.ndarray:
    """``1 - remaining / max remaining`` toward the goal estimate, scaled by
    how much of the straight path to the waypoint is clear."""
    rem = np.sqrt(((ctx.waypoint_xy - np.asarray(goal_xy)) ** 2).sum(axis=1))
    scale = max(float(rem.max(initial=0.0)), 1e-6)
    return (1.0 - rem / scale) * _reach(ctx)


def _stop_check(ctx: Context, goal) -> str | None:
    if goal is None:
        return None
    dist = math.dist((ctx.pose.x, ctx.pose.y), goal[1])
    if dist < ctx.cfg.stop_distance:
        return "goal estimate reached"
    if goal[0] > ctx.cfg.stop_similarity and dist <= ctx.cfg.stop_radius:
        return "goal in view within stop radius"
    return None


def _pick(scores: np.ndarray, waypoints: list[Waypoint]) -> int:
    # argmax with the lower sector winning ties
    order = sorted(range(len(waypoints)), key=lambda i: (-scores[i], waypoints[i].sector))
    return order[0]


def field_similarity(ctx: Context) -> Decision:
    """alpha * cos(slot feature, goal) + (1 - alpha) * prior; the prior is
    progress toward the goal estimate when one exists, exploration otherwise."""
    goal = detect_goal(ctx)
    reason = _stop_check(ctx, goal)
    if reason:
        return Decision(STOP, reason=reason, goal_estimate=goal[1])
    if not ctx.waypoints:
        return Decision(NO_WAYPOINT, reason="no waypoints")
    sims = np.array([_cos(ctx.slot_features[w.sector], ctx.goal) for w in ctx.waypoints])
    prior = distance_prior(ctx, goal[1]) if goal is not None else goal_free_prior(ctx)
    a = ctx.cfg.alpha
    scores = a * sims + (1 - a) * prior
    return Decision(_pick(scores, ctx.waypoints), tuple(float(s) for s in scores),
                    "goal estimate" if goal is not None else "explore",
                    goal[1] if goal is not None else None)


def greedy_goal(ctx: Context) -> Decision:
    """Forward-only greedy: considers waypoints inside the forward field of
    view and ranks them by the same prior, ignoring rendered slots."""
    goal = detect_goal(ctx)
    reason = _stop_check(ctx, goal)
    if reason:
        return Decision(STOP, reason=reason, goal_estimate=goal[1])
    half = math.radians(ctx.cfg.hfov) / 2.0
    ahead = [i for i, w in enumerate(ctx.waypoints) if min(w.angle, 2 * math.pi - w.angle) <= half]
    if not ahead:
        return Decision(NO_WAYPOINT, reason="no waypoints ahead")
    prior = distance_prior(ctx, goal[1]) if goal is not None else goal_free_prior(ctx)
    scores = np.full(len(ctx.waypoints), -np.inf)
    scores[ahead] = prior[ahead]
    return Decision(_pick(scores, ctx.waypoints), tuple(float(s) for s in scores), "greedy",
                    goal[1] if goal is not None else None)


POLICIES: dict[str, Callable[[Context], Decision]] = {
    "field_similarity": field_similarity,
    "greedy_goal": greedy_goal,
}


def get_policy(policy) -> Callable[[Context], Decision]:
    """Resolve a policy name, or wrap an external callable returning an
    index / ``STOP`` (or a :class:`Decision`)."""
    if callable(policy):
        def external(ctx: Context) -> Decision:
            out = policy(ctx)
            if isinstance(out, Decision):
                return out
            out = int(out)
            if out != STOP and not 0 <= out < len(ctx.waypoints):
                raise ValueError(f"external policy returned invalid waypoint index {out}")
            return Decision(out, reason="external")
        return external
    try:
        return POLICIES[policy]
    except KeyError:
        raise ValueError(f"unknown policy {policy!r}; choose from {sorted(POLICIES)} or pass a callable") from None
