from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from btcap.states import NodeState
from btcap.world import STATUS_EDGES, RobotBody, SharedObjectDB, World, WorldError, WorldMap, metrics

from conftest import DATA

S = NodeState


def small_map():
    return WorldMap.from_dict({
        "bounds": [0, 0, 100, 100],
        "areas": {"start_area": [0, 0], "decontamination_area": [5, 5]},
        "tasks": [
            {"id": "g", "kind": "explore_goal", "position": [50, 50]},
            {"id": "o", "kind": "object", "position": [70, 50], "contaminated": True},
        ],
        "known": ["g"],
    })


def world_with(robot="r", pos=(50, 50), fail=0.0, seed=1):
    w = World(small_map(), seed=seed, fail_chance=fail)
    w.add_body(RobotBody(robot, pos, 1.0, 1.0))
    return w


def finish(w, op, t=1000.0):
    w.step(t)
    return w.poll(op.op_id)


def test_move_arrival_and_clamp():
    w = world_with(pos=(0, 0))
    for _ in range(9):
        w.move_robot("r", (10, 0), 1.0)
    assert not w.at("r", (10, 0))
    w.move_robot("r", (10, 0), 1.0)
    assert w.at("r", (10, 0))
    w.move_robot("r", (10, 0), 5.0)
    assert w.bodies["r"].position == (10.0, 0.0)


def test_dead_robot_does_not_move():
    w = world_with(pos=(0, 0))
    w.set_alive("r", False)
    assert w.move_robot("r", (10, 0), 1.0) == (0.0, 0.0)


def test_duration_bounds_over_samples():
    w = world_with()
    ends = []
    for _ in range(1000):
        op = w.start_task("r", "explore", "g", 10.0, (50, 50), radius=30.0)
        ends.append(op.end - op.start)
        w.cancel("r")
    assert all(8.0 <= d <= 12.0 for d in ends)
    assert min(ends) < 8.5 and max(ends) > 11.5


def test_zero_fail_chance_always_succeeds():
    w = world_with(fail=0.0)
    for _ in range(50):
        op = w.start_task("r", "explore", "g", 1.0, (50, 50), radius=1.0)
        assert finish(w, op, w.now + 2)[0] is S.SUCCEEDED


def test_wrong_position_fails_immediately():
    w = world_with(pos=(0, 0))
    op = w.start_task("r", "explore", "g", 10.0, (50, 50), radius=30.0)
    assert w.poll(op.op_id)[0] is S.FAILED


@pytest.mark.parametrize("radius,found", [(30.0, True), (15.0, False)])
def test_explore_radius_reveals_object_at_20m(radius, found):
    w = world_with()
    op = w.start_task("r", "explore", "g", 10.0, (50, 50), radius=radius)
    assert finish(w, op)[0] is S.SUCCEEDED
    assert ("o" in w.db.objects) is found
    assert "g" in w.db.explored


def test_interrupted_operation_has_no_effect():
    w = world_with()
    op = w.start_task("r", "explore", "g", 10.0, (50, 50), radius=30.0)
    w.set_alive("r", False)
    w.step(100.0)
    assert w.poll(op.op_id)[0] is S.FAILED
    assert "o" not in w.db.objects and not w.db.explored


def test_identify_then_decontaminate():
    w = world_with(pos=(70, 50))
    w.db.reveal(w.map.task("o"))
    op = w.start_task("r", "identify", "o", 1.0, (70, 50))
    assert finish(w, op, 5.0) == (S.SUCCEEDED, {"contaminated": True})
    for _ in range(200):
        w.move_robot("r", (5, 5), 1.0)
    op = w.start_task("r", "decontaminate", "o", 1.0, (5, 5))
    assert finish(w, op, 10.0)[0] is S.SUCCEEDED
    assert w.db.objects["o"].status == "decontaminated"
    assert w.mission_success()


def test_same_seed_same_samples():
    a, b = world_with(seed=3, fail=0.5), world_with(seed=3, fail=0.5)
    for _ in range(20):
        oa = a.start_task("r", "identify", "g", 5.0, (50, 50))
        ob = b.start_task("r", "identify", "g", 5.0, (50, 50))
        assert (oa.end, oa.success) == (ob.end, ob.success)
        a.cancel("r")
        b.cancel("r")


@given(st.lists(st.sampled_from(["unknown", "clean", "contaminated", "decontaminated"]), max_size=10))
def test_status_edges_enforced(seq):
    db = SharedObjectDB()
    db.reveal(small_map().task("o"))
    for status in seq:
        cur = db.objects["o"].status
        if (cur, status) in STATUS_EDGES:
            db.set_status("o", status)
        else:
            with pytest.raises(WorldError):
                db.set_status("o", status)
    for a, b in zip([h[1] for h in db.history], [h[2] for h in db.history]):
        assert (a, b) in STATUS_EDGES


def test_status_edges_are_the_declared_ones():
    assert set(STATUS_EDGES) == {("unknown", "clean"), ("unknown", "contaminated"),
                                 ("contaminated", "decontaminated")}


def test_map_rejects_out_of_bounds():
    with pytest.raises(WorldError):
        WorldMap.from_dict({"bounds": [0, 0, 10, 10], "tasks": [{"id": "g", "kind": "explore_goal",
                                                                   "position": [20, 5]}],
                            "areas": {"start_area": [0, 0], "decontamination_area": [1, 1]}})


def test_bundled_map_loads():
    m = WorldMap.load(DATA / "map.json")
    assert {t.kind for t in m.tasks} == {"explore_goal", "object"}


# -- metrics -------------------------------------------------------------------

def test_utilization_half():
    rows = [(0.0, "r", "joined", "", ""), (10.0, "r", "started", "t", "i"), (60.0, "r", "completed", "t", "i")]
    m = metrics(rows, 100.0, True, ["r"])
    assert m["utilization"]["r"] == pytest.approx(0.5)
    assert m["makespan"] == 60.0 and m["tasks_per_robot"] == {"r": 1}


def test_empty_mission_makespan_zero():
    assert metrics([], 0.0, True)["makespan"] == 0.0


def test_incomplete_reports_marker_and_count():
    rows = [(0.0, "r", "joined", "", ""), (1.0, "r", "started", "t", "i"), (2.0, "r", "completed", "t", "i")]
    m = metrics(rows, 50.0, False, ["r"])
    assert m["makespan"] == "inf" and m["completed_tasks"] == 1


def test_membership_time_excludes_absence():
    rows = [(0.0, "r", "joined", "", ""), (0.0, "r", "started", "t", "i"), (10.0, "r", "completed", "t", "i"),
            (10.0, "r", "left", "", ""), (90.0, "r", "joined", "", "")]
    assert metrics(rows, 100.0, True, ["r"])["utilization"]["r"] == pytest.approx(0.5)
