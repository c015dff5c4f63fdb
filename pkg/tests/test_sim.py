from __future__ import annotations

import json

from btcap.scenario import Event, Scenario
from btcap.sim import Simulation

from conftest import MISSION, SCENARIOS


def hosted_by(robot, scenario="team3"):
    sc = Scenario.load(SCENARIOS / f"{scenario}.json")
    sc.mission_host = robot
    sim = Simulation(sc, json.loads(MISSION.read_text()))
    return sim, sim.run()


def test_robot_host_runs_one_execution_at_a_time():
    sim, result = hosted_by("husky_1")
    assert result.exit_code == 0
    running = 0
    for _, robot, event, *_ in result.timeline:
        if robot != "husky_1":
            continue
        running += {"started": 1, "completed": -1, "failed": -1, "lost": -1}.get(event, 0)
        assert running <= 1


def test_auctioneer_bids_in_its_own_rounds():
    sim, result = hosted_by("husky_1")
    awards = [json.loads(line) for line in sim.bus.log if '"kind":"AWARD"' in line]
    assert any(a["payload"]["winner"] == "husky_1" for a in awards)
    local = [r for r in result.timeline if r[1] == "husky_1" and r[2] == "completed"]
    assert {r[4] for r in local} == {"decontaminate"}


def test_recovered_robot_rejoins_with_new_incarnation():
    sc = Scenario.load(SCENARIOS / "dynamic_team.json")
    sim = Simulation(sc, json.loads(MISSION.read_text()))
    result = sim.run()
    assert result.exit_code == 0
    rec = next(e for e in sc.events if e.event == "recover")
    rid = rec.world
    assert sim.incarnation[rid] == 1
    repo = sim.agents["operator"].repo
    assert repo.seen[rid][0] == 1 and repo.adverts[rid]["available"]
    assert any(r[1] == rid and r[2] == "completed" and r[0] > rec.time for r in result.timeline)


def test_fail_at_120_recovers_within_timeout():
    # the only other identify-capable robot is committed when the loss is
    # detected, so the task waits for the failed robot to recover
    sc = Scenario.load(SCENARIOS / "dynamic_team.json")
    sc.events = [Event(120.0, e.world, e.event) if e.event == "fail" else e for e in sc.events]
    result = Simulation(sc, json.loads(MISSION.read_text())).run()
    p = sc.parameters
    (lost,) = [r for r in result.timeline if r[2] == "lost"]
    assert lost[1] == "husky_2" and lost[0] <= 120.0 + p.heartbeat_timeout + p.tick_period
    assert result.exit_code == 0
