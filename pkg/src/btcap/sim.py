"""Deterministic simulation loop and run outputs."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .agent import RobotAgent
from .bus import TeamBus
from .scenario import (
    Scenario,
    ScenarioError,
    check_mission,
    load_catalog,
    load_implementations,
    surjectivity_warnings,
)
from .states import NodeState, parent_view
from .world import RobotBody, World, WorldMap, metrics

log = logging.getLogger(__name__)

S = NodeState
TIMELINE_COLUMNS = ("time", "robot", "event", "task_id", "interface")
SLOT_TREE = {"root": "slot", "nodes": [{"id": "slot", "kind": "remote-capability-slot"}]}


@dataclass
class RunResult:
    outcome: str  # success, failure or timeout
    end_time: float
    timeline: list
    metrics: dict
    exit_code: int
    warnings: list


class Simulation:
    def __init__(self, scenario: Scenario, mission_tree: dict, seed: int | None = None,
                 max_time: float | None = None):
        self.scenario = scenario
        self.params = scenario.parameters
        self.seed = scenario.seed if seed is None else seed
        self.max_time = self.params.max_time if max_time is None else max_time
        self.mission_tree = mission_tree
        self.catalog = load_catalog(scenario.catalog_path)
        errors = check_mission(mission_tree, self.catalog)
        if errors:
            raise ScenarioError("; ".join(errors))
        self.warnings = surjectivity_warnings(scenario, mission_tree)
        for w in self.warnings:
            log.warning(w)
        self.map = WorldMap.load(scenario.map_path)
        self.world = World(self.map, self.seed, self.params.fail_chance)
        self.bus = TeamBus(latency=self.params.tick_period)
        self.timeline: list[tuple] = []
        self.agents: dict[str, RobotAgent] = {}
        self.incarnation: dict[str, int] = {}
        self.impls = {r.id: [i for p in r.implementations for i in load_implementations(p, r.id)]
                      for r in scenario.robots}
        self.now = 0.0
        self._events = list(scenario.events)

    # -- membership ------------------------------------------------------------

    def _body(self, rid: str) -> RobotBody:
        if rid in self.world.bodies:
            return self.world.bodies[rid]
        spec = self.scenario.robot(rid)
        start = self.map.areas[spec.start] if isinstance(spec.start, str) else tuple(spec.start)
        body = RobotBody(rid, start, spec.speed, spec.distance_cost_factor)
        self.world.add_body(body)
        return body

    def _spawn(self, rid: str) -> RobotAgent:
        inc = self.incarnation.get(rid, -1) + 1
        self.incarnation[rid] = inc
        is_host = rid == self.scenario.mission_host
        body = None
        if any(r.id == rid for r in self.scenario.robots):
            body = self._body(rid)
            body.alive = True
        tree = self.mission_tree if is_host else SLOT_TREE
        agent = RobotAgent(rid, self.world, self.bus, self.params, self.timeline, self.catalog,
                           self.impls.get(rid, []), tree, body=body, incarnation=inc, now=self.now)
        self.agents[rid] = agent
        return agent

    def apply_event(self, event: str, rid: str) -> None:
        if event in ("join", "recover"):
            self.bus.apply_event(event, rid, self.now)
            self._spawn(rid)
            self.timeline.append((self.now, rid, "joined", "", ""))
        else:
            agent = self.agents.pop(rid)
            if event == "leave":
                agent.leave()
            agent.alive = False
            self.world.set_alive(rid, False)
            self.bus.apply_event(event, rid, self.now)
            self.timeline.append((self.now, rid, "left", "", ""))

    # -- main loop -------------------------------------------------------------

    def run(self) -> RunResult:
        host = self.scenario.mission_host
        robots = [r.id for r in self.scenario.robots]
        if host not in robots:
            self.bus.apply_event("join", host, 0.0)
            self._spawn(host)
        for rid in self.scenario.initial_robots():
            self.apply_event("join", rid)
        k = 0
        outcome = "timeout"
        dt = self.params.tick_period
        while True:
            self.now = k * dt
            while self._events and self._events[0].time <= self.now + 1e-9:
                e = self._events.pop(0)
                self.apply_event(e.event, e.world)
            self.world.step(self.now)
            due = self.bus.deliver(self.now)
            for rid in sorted(self.agents):
                self.agents[rid].step(self.now, due.get(rid, []))
            root = parent_view(self.agents[host].root_state())
            if root is S.SUCCEEDED:
                outcome = "success"
                break
            if root in (S.FAILED, S.ERROR):
                outcome = "failure"
                break
            if self.now >= self.max_time - 1e-9:
                break
            k += 1
        complete = outcome == "success"
        m = metrics(self.timeline, self.now, complete, robots)
        m["outcome"] = outcome
        m["objects"] = {k: v.status for k, v in sorted(self.world.db.objects.items())}
        m["seed"] = self.seed
        exit_code = 0 if self.world.mission_success() else 1
        return RunResult(outcome, self.now, list(self.timeline), m, exit_code, self.warnings)

    # -- outputs ---------------------------------------------------------------

    def write_outputs(self, result: RunResult, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_timeline(result.timeline, out / "timeline.csv")
        (out / "metrics.json").write_text(json.dumps(result.metrics, indent=2, sort_keys=True) + "\n")
        self.bus.write_log(out / "messages.jsonl")


def write_timeline(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMELINE_COLUMNS)
        for time, robot, event, task_id, interface in rows:
            w.writerow([f"{time:.3f}", robot, event, task_id, interface])


def read_timeline(path) -> list[tuple]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [(float(row["time"]), row["robot"], row["event"], row["task_id"], row["interface"]) for row in r]


def run_scenario(scenario_path, mission_path, out_dir=None, seed=None, max_time=None, overrides=None) -> RunResult:
    scenario = Scenario.load(scenario_path)
    if overrides:
        for k, v in overrides.items():
            setattr(scenario.parameters, k, v)
    tree = json.loads(Path(mission_path).read_text())
    sim = Simulation(scenario, tree, seed=seed, max_time=max_time)
    result = sim.run()
    if out_dir is not None:
        sim.write_outputs(result, out_dir)
    return result
