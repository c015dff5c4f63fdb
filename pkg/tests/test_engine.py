from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btcap.engine import Leaf, apply_action, leaf, propagate_data, tick_root
from btcap.states import NodeAction, NodeState
from btcap.tree import StructureError, TreeEnvironment

from conftest import build, edge, node, p

S = NodeState
A = NodeAction
RESULTS = [S.SUCCEEDED, S.FAILED, S.RUNNING]


@leaf("sum")
class Sum(Leaf):
    """Output v = option base + every input that is present."""

    def tick(self, env):
        n = env.nodes[self.node_id]
        total = self.option(env, "base", 0)
        for q in n.inputs():
            total += env.get(self.node_id, q.name, "input", 0)
        env.blackboard[(self.node_id, "v", "output")] = total
        return S.SUCCEEDED


def composite(kind, results):
    kids = [f"c{i}" for i in range(len(results))]
    nodes = [node("root", kind, kids)]
    nodes += [node(k, "action-leaf", action="script", script=[r.value]) for k, r in zip(kids, results)]
    return build(nodes)


def oracle(kind, results):
    """(state, indices ticked) by the textbook definitions."""
    if kind == "parallel":
        if S.FAILED in results:
            return S.FAILED, list(range(len(results)))
        if all(r is S.SUCCEEDED for r in results):
            return S.SUCCEEDED, list(range(len(results)))
        return S.RUNNING, list(range(len(results)))
    skip = S.SUCCEEDED if kind == "sequence" else S.FAILED
    for i, r in enumerate(results):
        if r is not skip:
            return r, list(range(i + 1))
    return skip if results else S.SUCCEEDED, list(range(len(results)))


@pytest.mark.parametrize("kind", ["sequence", "selector", "parallel"])
@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_composite_truth_table(kind, n):
    for results in itertools.product(RESULTS, repeat=n):
        env = composite(kind, results)
        tick_root(env)
        want, ticked = oracle(kind, list(results))
        assert env.nodes["root"].state is want, (kind, results)
        assert [i for i in range(n) if env.tick_counts.get(f"c{i}")] == ticked


def test_sequence_first_child_fails_later_untouched():
    env = build([
        node("root", "sequence", ["a", "b"]),
        node("a", "action-leaf", action="script", script=["running", "failed"]),
        node("b", "action-leaf", action="succeed"),
    ])
    tick_root(env)
    assert env.nodes["root"].state is S.RUNNING
    tick_root(env)
    assert env.nodes["root"].state is S.FAILED
    assert "b" not in env.tick_counts


def test_selector_failed_then_succeed():
    env = build([
        node("root", "selector", ["a", "b"]),
        node("a", "action-leaf", action="fail"),
        node("b", "action-leaf", action="succeed"),
    ])
    tick_root(env)
    assert env.nodes["root"].state is S.SUCCEEDED


def test_parallel_ticks_every_child():
    env = build([
        node("root", "parallel", ["a", "b"]),
        node("a", "action-leaf", action="running"),
        node("b", "action-leaf", action="running"),
    ])
    tick_root(env)
    assert env.tick_counts["a"] == env.tick_counts["b"] == 1


def test_empty_tree_is_noop():
    env = TreeEnvironment.from_dict({"nodes": []})
    before = env.snapshot()
    assert tick_root(env).snapshot() == before


def test_errored_root_not_ticked():
    env = build([node("a", "action-leaf", action="succeed")])
    env.nodes["a"].state = S.ERROR
    tick_root(env)
    assert env.errored and "a" not in env.tick_counts


def test_shutdown_any_node():
    env = build([node("root", "sequence", ["a"]), node("a", "action-leaf", action="running")])
    tick_root(env)
    apply_action("root", A.SHUTDOWN, env)
    assert env.nodes["root"].state is S.SHUTDOWN and env.nodes["a"].state is S.SHUTDOWN


def test_unknown_node_is_structural_error():
    env = build([node("a", "action-leaf")])
    with pytest.raises(StructureError):
        apply_action("nope", A.TICK, env)


def test_leaf_with_children_rejected():
    with pytest.raises(StructureError):
        build([node("a", "action-leaf", ["b"]), node("b", "action-leaf")])


def test_mistyped_edge_rejected():
    nodes = [node("root", "sequence", ["a", "b"]),
             node("a", "action-leaf", params=[p("v", "output", "int")]),
             node("b", "action-leaf", params=[p("v", "input", "str")])]
    with pytest.raises(StructureError):
        build(nodes, [edge(("a", "v"), ("b", "v"))])


def test_cycle_rejected():
    nodes = [node("root", "sequence", ["a", "b"]),
             node("a", "action-leaf", params=[p("v", "input"), p("v", "output")]),
             node("b", "action-leaf", params=[p("v", "input"), p("v", "output")])]
    with pytest.raises(StructureError):
        build(nodes, [edge(("a", "v"), ("b", "v")), edge(("b", "v"), ("a", "v"))])


def test_edge_copies_value():
    nodes = [node("root", "sequence", ["a", "b"]),
             node("a", "action-leaf", params=[p("out", "output")]),
             node("b", "action-leaf", params=[p("in", "input")])]
    env = build(nodes, [edge(("a", "out"), ("b", "in"))])
    env.blackboard[("a", "out", "output")] = 7
    propagate_data(env)
    assert env.get("b", "in", "input") == 7


def test_no_edges_blackboard_unchanged():
    env = build([node("a", "action-leaf", params=[p("out", "output")])])
    env.blackboard[("a", "out", "output")] = 1
    before = dict(env.blackboard)
    assert propagate_data(env).blackboard == before


def test_runtime_type_mismatch_errors_destination():
    nodes = [node("root", "sequence", ["a", "b"]),
             node("a", "action-leaf", params=[p("out", "output")]),
             node("b", "action-leaf", params=[p("in", "input")])]
    env = build(nodes, [edge(("a", "out"), ("b", "in"))])
    env.blackboard[("a", "out", "output")] = "seven"
    propagate_data(env)
    assert env.nodes["b"].state is S.ERROR


@st.composite
def dags(draw):
    n = draw(st.integers(2, 6))
    pairs = [(i, j) for j in range(n) for i in range(j)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    bases = draw(st.lists(st.integers(-5, 5), min_size=n, max_size=n))
    return n, sorted(chosen), bases


def _dag_env(n, pairs, bases):
    nodes = [node("root", "sequence", [f"n{i}" for i in range(n)])]
    for j in range(n):
        params = [p(f"i{i}", "input") for i, jj in pairs if jj == j] + [p("v", "output")]
        nodes.append(node(f"n{j}", "action-leaf", params=params, action="sum", base=bases[j]))
    edges = [edge((f"n{i}", "v"), (f"n{j}", f"i{i}")) for i, j in pairs]
    return build(nodes, edges)


def _fixpoint(n, pairs, bases):
    vals = [None] * n
    changed = True
    while changed:
        changed = False
        for j in range(n):
            new = bases[j] + sum(vals[i] or 0 for i, jj in pairs if jj == j)
            if any(vals[i] is None for i, jj in pairs if jj == j):
                continue
            if vals[j] != new:
                vals[j], changed = new, True
    return vals


@settings(max_examples=200, deadline=None)
@given(dags())
def test_dataflow_matches_fixpoint(dag):
    n, pairs, bases = dag
    env = _dag_env(n, pairs, bases)
    tick_root(env)
    assert [env.get(f"n{j}", "v") for j in range(n)] == _fixpoint(n, pairs, bases)
    for i, j in pairs:
        assert env.get(f"n{j}", f"i{i}", "input") == env.get(f"n{i}", "v")


@settings(max_examples=100, deadline=None)
@given(dags())
def test_propagation_idempotent(dag):
    env = _dag_env(*dag)
    tick_root(env)
    propagate_data(env)
    once = dict(env.blackboard)
    propagate_data(env)
    assert env.blackboard == once
