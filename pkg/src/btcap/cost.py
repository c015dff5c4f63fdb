"""Scalar bid cost: weighted travel distance plus expected task duration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class UtilityCost:
    cost: float
    feasible: bool = True

    def __post_init__(self):
        if self.feasible and not (self.cost >= 0 and math.isfinite(self.cost)):
            raise ValueError(f"feasible cost must be finite and non-negative, got {self.cost}")

    @classmethod
    def infeasible(cls):
        return cls(math.inf, False)


@dataclass(frozen=True)
class TaskContext:
    """What an auction announces about a task.

    ``waypoints`` is the route the executor has to drive, in order; the task is
    performed at the last one. ``start`` is the bidder's predicted position.
    """

    task_id: str
    waypoints: tuple[tuple[float, float], ...]
    start: tuple[float, float] | None = None
    extra: dict = field(default_factory=dict)

    @property
    def end(self):
        return self.waypoints[-1] if self.waypoints else self.start


def dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def path_distance(start, waypoints) -> float:
    total, here = 0.0, start
    for w in waypoints:
        total += dist(here, w)
        here = w
    return total


def compute_cost(distance_cost_factor: float, expected_duration: float, ctx: TaskContext,
                 has_implementation: bool = True) -> UtilityCost:
    if not has_implementation:
        return UtilityCost.infeasible()
    d = path_distance(ctx.start, ctx.waypoints)
    return UtilityCost(distance_cost_factor * d + expected_duration)
