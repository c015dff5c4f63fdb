"""Simulated world: map, robot bodies, timed task services and the shared object database."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from .cost import dist
from .engine import Leaf, leaf
from .states import NodeState

S = NodeState
TASK_KINDS = ("explore_goal", "object")
OPERATIONS = ("explore", "identify", "decontaminate")
STATUS_EDGES = {
    ("unknown", "clean"),
    ("unknown", "contaminated"),
    ("contaminated", "decontaminated"),
}
DEFAULT_SPEEDS = {"husky": 1.0, "spot": 1.4, "bebop": 4.0}
_EPS = 1e-6


class WorldError(Exception):
    pass


@dataclass(frozen=True)
class MapTask:
    id: str
    kind: str
    position: tuple[float, float]
    contaminated: bool = False  # ground truth, objects only

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise WorldError(f"task {self.id!r}: unknown kind {self.kind!r}")


@dataclass
class WorldMap:
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    tasks: list[MapTask]
    areas: dict[str, tuple[float, float]]
    known: list[str] = field(default_factory=list)  # explore goals known at mission start

    def __post_init__(self):
        ids = [t.id for t in self.tasks]
        if len(ids) != len(set(ids)):
            raise WorldError("map task ids must be unique")
        for name, p in [(t.id, t.position) for t in self.tasks] + list(self.areas.items()):
            if not self.inside(p):
                raise WorldError(f"{name!r} at {p} lies outside the map bounds")
        for k in self.known:
            if k not in ids:
                raise WorldError(f"unknown initially known task {k!r}")
        for a in ("decontamination_area", "start_area"):
            if a not in self.areas:
                raise WorldError(f"map needs area {a!r}")

    def inside(self, p) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 - _EPS <= p[0] <= x1 + _EPS and y0 - _EPS <= p[1] <= y1 + _EPS

    def task(self, task_id: str) -> MapTask:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise WorldError(f"unknown task {task_id!r}")

    @classmethod
    def from_dict(cls, d):
        tasks = [
            MapTask(t["id"], t["kind"], tuple(t["position"]), bool(t.get("contaminated", False)))
            for t in d["tasks"]
        ]
        return cls(tuple(d["bounds"]), tasks, {k: tuple(v) for k, v in d["areas"].items()}, list(d.get("known", [])))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RobotBody:
    world: str
    position: tuple[float, float]
    speed: float
    distance_cost_factor: float
    busy: bool = False
    alive: bool = True

    def __post_init__(self):
        if self.speed <= 0:
            raise WorldError(f"{self.world}: speed must be positive")
        self.position = tuple(float(v) for v in self.position)


@dataclass
class ObjectRecord:
    position: tuple[float, float]
    status: str = "unknown"


class SharedObjectDB:
    """Team-wide knowledge: revealed explore goals and found objects."""

    def __init__(self):
        self.goals: dict[str, tuple[float, float]] = {}
        self.explored: set[str] = set()
        self.objects: dict[str, ObjectRecord] = {}
        self.history: list[tuple[str, str, str]] = []

    def reveal(self, task: MapTask) -> bool:
        if task.kind == "explore_goal":
            if task.id in self.goals:
                return False
            self.goals[task.id] = task.position
            return True
        if task.id in self.objects:
            return False
        self.objects[task.id] = ObjectRecord(task.position)
        return True

    def set_status(self, obj_id: str, status: str) -> None:
        rec = self.objects[obj_id]
        if (rec.status, status) not in STATUS_EDGES:
            raise WorldError(f"illegal object transition {rec.status} -> {status} for {obj_id}")
        self.history.append((obj_id, rec.status, status))
        rec.status = status


@dataclass
class Operation:
    op_id: int
    robot: str
    kind: str
    task_id: str
    start: float
    end: float
    expected: float
    success: bool
    radius: float = 0.0
    done: bool = False
    result: dict = field(default_factory=dict)


class World:
    def __init__(self, world_map: WorldMap, seed: int = 0, fail_chance: float = 0.1):
        if not 0.0 <= fail_chance <= 1.0:
            raise WorldError("fail_chance must lie in [0, 1]")
        self.map = world_map
        self.seed = seed
        self.fail_chance = fail_chance
        self.now = 0.0
        self.bodies: dict[str, RobotBody] = {}
        self.db = SharedObjectDB()
        self.ops: dict[str, Operation] = {}
        self.finished: dict[int, Operation] = {}
        self._rngs: dict[str, random.Random] = {}
        self._op_counter = 0
        for k in world_map.known:
            self.db.reveal(world_map.task(k))

    def rng(self, robot: str) -> random.Random:
        # one stream per robot keeps samples independent of agent interleaving
        if robot not in self._rngs:
            self._rngs[robot] = random.Random(f"{self.seed}/{robot}")
        return self._rngs[robot]

    def add_body(self, body: RobotBody) -> None:
        if not self.map.inside(body.position):
            raise WorldError(f"{body.world} starts outside the map")
        self.bodies[body.world] = body

    def set_alive(self, robot: str, alive: bool) -> None:
        body = self.bodies.get(robot)
        if body is None:
            return
        body.alive = alive
        if not alive:
            self.cancel(robot)

    # -- motion ----------------------------------------------------------------

    def move_robot(self, robot: str, target, dt: float) -> tuple[float, float]:
        body = self.bodies[robot]
        if not body.alive:
            return body.position
        target = (float(target[0]), float(target[1]))
        d = dist(body.position, target)
        step = body.speed * dt
        if d <= step + _EPS:
            body.position = target
        else:
            f = step / d
            body.position = (body.position[0] + f * (target[0] - body.position[0]),
                             body.position[1] + f * (target[1] - body.position[1]))
        return body.position

    def at(self, robot: str, target) -> bool:
        return dist(self.bodies[robot].position, target) <= 1e-3

    # -- task services ---------------------------------------------------------

    def start_task(self, robot: str, kind: str, task_id: str, expected: float, at, radius: float = 0.0) -> Operation:
        if kind not in OPERATIONS:
            raise WorldError(f"unknown operation {kind!r}")
        self._op_counter += 1
        rng = self.rng(robot)
        duration = rng.uniform(0.8 * expected, 1.2 * expected)
        success = rng.random() >= self.fail_chance
        op = Operation(self._op_counter, robot, kind, task_id, self.now, self.now + duration, expected, success, radius)
        body = self.bodies[robot]
        if not body.alive or not self.at(robot, at):
            # wrong place: the service answers with an immediate failure
            op.end, op.success, op.done = self.now, False, True
            self.finished[op.op_id] = op
            return op
        self.ops[robot] = op
        body.busy = True
        return op

    def cancel(self, robot: str) -> None:
        """Interrupt the robot's operation; an interrupted operation has no effect."""
        op = self.ops.pop(robot, None)
        if op is not None:
            op.done, op.success = True, False
            self.finished[op.op_id] = op
        if robot in self.bodies:
            self.bodies[robot].busy = False

    def poll(self, op_id: int) -> tuple[NodeState, dict]:
        op = self.finished.get(op_id)
        if op is None:
            return S.RUNNING, {}
        return (S.SUCCEEDED if op.success else S.FAILED), op.result

    def remaining(self, robot: str) -> float | None:
        op = self.ops.get(robot)
        if op is None:
            return None
        return max(0.0, op.expected - (self.now - op.start))

    def step(self, now: float) -> list[Operation]:
        """Advance the clock and settle every operation due by ``now``."""
        self.now = now
        done = []
        for robot in sorted(self.ops):
            op = self.ops[robot]
            if op.end <= now + _EPS:
                done.append(op)
        for op in done:
            del self.ops[op.robot]
            self.bodies[op.robot].busy = False
            if op.success:
                op.success = self._apply(op)
            op.done = True
            self.finished[op.op_id] = op
        return done

    def _apply(self, op: Operation) -> bool:
        db = self.db
        pos = self.bodies[op.robot].position
        if op.kind == "explore":
            found = 0
            for t in self.map.tasks:
                if dist(pos, t.position) <= op.radius + _EPS and db.reveal(t):
                    found += 1
            if op.task_id in db.goals:
                db.explored.add(op.task_id)
            op.result = {"found": found}
            return True
        rec = db.objects.get(op.task_id)
        if rec is None:
            return False
        truth = self.map.task(op.task_id).contaminated
        if op.kind == "identify":
            if rec.status == "unknown":
                db.set_status(op.task_id, "contaminated" if truth else "clean")
            op.result = {"contaminated": rec.status in ("contaminated", "decontaminated")}
            return True
        # decontaminate: the object was carried to the area
        if rec.status == "decontaminated":
            op.result = {"decontaminated": True}
            return True
        if rec.status != "contaminated":
            return False
        db.set_status(op.task_id, "decontaminated")
        rec.position = pos
        op.result = {"decontaminated": True}
        return True

    # -- mission queries -------------------------------------------------------

    def mission_items(self, source: str) -> list[tuple[str, tuple[float, float]]]:
        if source == "explore_goals":
            return list(self.db.goals.items())
        if source == "objects":
            return [(k, self.map.task(k).position) for k in self.db.objects]
        raise WorldError(f"unknown mission item source {source!r}")

    def exploration_done(self) -> bool:
        return set(self.db.goals) <= self.db.explored

    def source_exhausted(self, source: str) -> bool:
        # objects can still appear while any revealed goal is unexplored
        return self.exploration_done()

    def contaminated_truth(self) -> list[str]:
        return sorted(t.id for t in self.map.tasks if t.kind == "object" and t.contaminated)

    def mission_success(self) -> bool:
        return all(
            k in self.db.objects and self.db.objects[k].status == "decontaminated"
            for k in self.contaminated_truth()
        )


# -- simulation leaves ---------------------------------------------------------

def _pose(v):
    return (float(v[0]), float(v[1]))


@leaf("move_to")
class MoveTo(Leaf):
    """Drive toward input ``target`` or the map area named by option ``area``."""

    def goal(self, env):
        area = self.option(env, "area")
        if area:
            return env.host.sim.map.areas[area]
        target = env.get(self.node_id, "target", "input")
        return None if target is None else _pose(target)

    def tick(self, env):
        host = env.host
        goal = self.goal(env)
        if goal is None:
            return S.FAILED
        body = host.sim.bodies[host.world_id]
        if not host.sim.map.inside(goal) or not body.alive:
            return S.FAILED
        host.sim.move_robot(host.world_id, goal, host.tick_period)
        return S.SUCCEEDED if host.sim.at(host.world_id, goal) else S.RUNNING


@leaf("sim_task")
class SimTask(Leaf):
    """Timed world operation named by option ``task``; publishes its result on matching outputs."""

    def __init__(self, node, env):
        super().__init__(node, env)
        self.op_id = None

    def tick(self, env):
        host = env.host
        node = env.nodes[self.node_id]
        if self.op_id is None:
            kind = self.option(env, "task")
            impl = env.meta.get("impl")
            expected = impl.expected_duration if impl else float(self.option(env, "duration", 1.0))
            radius = float(impl.extra_params.get("radius", 0.0)) if impl else 0.0
            area = self.option(env, "area")
            at = host.sim.map.areas[area] if area else _pose(env.get(self.node_id, "target", "input"))
            task_id = env.get(self.node_id, "task_id", "input")
            op = host.sim.start_task(host.world_id, kind, task_id, expected, at, radius)
            self.op_id = op.op_id
            if not op.done:
                return S.RUNNING
        st, result = host.sim.poll(self.op_id)
        if st is S.SUCCEEDED:
            for name, value in result.items():
                if node.param(name, "output") is not None:
                    env.blackboard[(self.node_id, name, "output")] = value
        return st

    def _stop(self, env):
        if self.op_id is not None and env.host is not None:
            op = env.host.sim.ops.get(env.host.world_id)
            if op is not None and op.op_id == self.op_id:
                env.host.sim.cancel(env.host.world_id)
        self.op_id = None

    def reset(self, env):
        self._stop(env)

    def shutdown(self, env):
        self._stop(env)


# -- metrics -------------------------------------------------------------------

def metrics(timeline, end_time: float, complete: bool, robots=None) -> dict:
    """Makespan, per-robot utilization and completed-task counts from timeline rows.

    Rows are ``(time, robot, event, task_id, interface)``. Busy time runs from
    ``started`` to the matching completed/failed/lost row; team time from
    ``joined`` to ``left``.
    """
    busy: dict[str, float] = {}
    member: dict[str, float] = {}
    tasks: dict[str, int] = {}
    open_task: dict[tuple[str, str, str], float] = {}
    joined: dict[str, float] = {}
    last_completion = 0.0
    for time, robot, event, task_id, interface in timeline:
        if event == "joined":
            joined.setdefault(robot, time)
        elif event == "left":
            if robot in joined:
                member[robot] = member.get(robot, 0.0) + time - joined.pop(robot)
            for key in [k for k in open_task if k[0] == robot]:
                busy[robot] = busy.get(robot, 0.0) + time - open_task.pop(key)
        elif event == "started":
            open_task[(robot, task_id, interface)] = time
        elif event in ("completed", "failed", "lost"):
            start = open_task.pop((robot, task_id, interface), None)
            if start is not None:
                busy[robot] = busy.get(robot, 0.0) + time - start
            if event == "completed":
                tasks[robot] = tasks.get(robot, 0) + 1
                last_completion = max(last_completion, time)
    for robot, t in joined.items():
        member[robot] = member.get(robot, 0.0) + end_time - t
    for (robot, _, _), t in open_task.items():
        busy[robot] = busy.get(robot, 0.0) + end_time - t
    names = sorted(set(robots or []) | set(member) | set(busy))
    util = {}
    for r in names:
        m = member.get(r, 0.0)
        util[r] = min(1.0, busy.get(r, 0.0) / m) if m > 0 else 0.0
    return {
        "makespan": last_completion if complete else "inf",
        "complete": complete,
        "completed_tasks": sum(tasks.values()),
        "utilization": util,
        "tasks_per_robot": {r: tasks.get(r, 0) for r in names},
        "end_time": end_time,
    }
