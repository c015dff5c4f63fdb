from __future__ import annotations

import sys
from pathlib import Path

import pytest

from btcap.capability import CapabilityImplementation, Precondition, validate_preconditions
from btcap.engine import Leaf, leaf, setup_tree
from btcap.mission_control import ExecutionRecord
from btcap.scenario import DATA_DIR
from btcap.states import NodeState
from btcap.tree import TreeEnvironment

S = NodeState
DATA = Path(DATA_DIR)
MISSION = DATA / "mission.json"
SCENARIOS = DATA / "scenarios"


def p(name, kind, type_="int"):
    return {"name": name, "kind": kind, "type": type_}


def node(id_, kind, children=(), params=(), **options):
    d = {"id": id_, "kind": kind, "children": list(children)}
    if params:
        d["parameters"] = list(params)
    if options:
        d["options"] = options
    return d


def edge(src, dst, type_="int"):
    return {"from": list(src), "to": list(dst), "type": type_}


def build(nodes, edges=(), root=None, world="r1", host=None, setup=True) -> TreeEnvironment:
    env = TreeEnvironment.from_dict({"root": root or nodes[0]["id"], "nodes": nodes, "edges": list(edges)},
                                    world=world, host=host)
    if setup:
        setup_tree(env)
    return env


@leaf("echo")
class Echo(Leaf):
    """Copies input x to output y, runs for option ``ticks`` ticks."""

    def __init__(self, node, env):
        super().__init__(node, env)
        self.n = 0

    def tick(self, env):
        x = env.get(self.node_id, "x", "input")
        if x is not None:
            env.blackboard[(self.node_id, "y", "output")] = x * 2
        self.n += 1
        return S.SUCCEEDED if self.n >= self.option(env, "ticks", 3) else S.RUNNING

    def reset(self, env):
        self.n = 0


def echo_tree(ticks=3):
    """Implementation: sequence(in, echo, out) with x -> echo -> y."""
    return {
        "root": "root",
        "nodes": [
            node("root", "sequence", ["in", "work", "out"]),
            node("in", "io-input-bridge", params=[p("x", "output")]),
            node("work", "action-leaf", params=[p("x", "input"), p("y", "output")], action="echo", ticks=ticks),
            node("out", "io-output-bridge", params=[p("y", "input")]),
        ],
        "edges": [edge(("in", "x"), ("work", "x")), edge(("work", "y"), ("out", "y"))],
    }


def capability_node(id_="cap", interface="work", required_local=False):
    opts = {"interface": interface}
    if required_local:
        opts["required_local"] = True
    return node(id_, "capability", params=[p("x", "input"), p("y", "output")], **opts)


def echo_impl(owner="r1", impl_id=None, pre=(), ticks=3, interface="work"):
    return CapabilityImplementation(
        id=impl_id or f"{owner}/{interface}",
        interface=interface,
        owner_world=owner,
        tree=echo_tree(ticks),
        preconditions=tuple(Precondition(c, k) for c, k in pre),
        expected_duration=1.0,
    )


class FakeHost:
    """Scripted binding services for driving capability nodes without a team."""

    def __init__(self, world="r1", impls=(), retry_limit=3):
        self.world = world
        self.now = 0.0
        self.retry_limit = retry_limit
        self.impls = {i.id: i for i in impls}
        self.outcomes: dict[str, object] = {}
        self.opened: list[tuple[str, bool]] = []
        self.forgotten: list[str] = []
        self.completed: set[str] = set()
        self.nearby: dict[str, set[str]] = {}
        self.events: list[tuple[str, str | None]] = []
        self.requests: list[ExecutionRecord] = []
        self.aborted: list[tuple[str, str]] = []
        self.pushed: list[dict] = []
        self.reports: list[tuple] = []
        self.released: list[tuple] = []
        self.busy = False

    def open_auction(self, rt, env, urgent=False):
        rid = f"round{len(self.opened)}"
        self.opened.append((rid, urgent))
        self.outcomes[rid] = "open"
        return rid

    def auction_outcome(self, round_id):
        return self.outcomes[round_id]

    def forget_auction(self, round_id):
        self.forgotten.append(round_id)

    def local_busy(self, node_id):
        return self.busy

    def implementation(self, impl_id):
        return self.impls.get(impl_id)

    def check_preconditions(self, impl):
        return validate_preconditions(impl, self.completed, self.nearby)

    def request_remote(self, rt, env):
        rec = ExecutionRecord(f"e{len(self.requests)}", rt.node_id, rt.assignment.executor_world,
                              rt.assignment.chosen)
        self.requests.append(rec)
        return rec

    def push_inputs(self, rt, values):
        self.pushed.append(values)
        return len(self.pushed)

    def abort_remote(self, record, reason):
        record.phase = "aborted"
        self.aborted.append((record.exec_id, reason))

    def local_completed(self, interface):
        self.completed.add(interface)

    def notify(self, rt, event, robot=None):
        self.events.append((event, robot))

    def slot_report(self, request, outputs, root_state, done):
        self.reports.append((request["exec_id"], dict(outputs), root_state, done))

    def slot_released(self, request, reason):
        self.released.append((request["exec_id"], reason))


@pytest.fixture
def data_dir():
    return DATA


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS.values():
        terminalreporter.write_line(line)
