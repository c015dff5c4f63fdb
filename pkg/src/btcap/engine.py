"""Behavior-tree core: node lifecycle, control flow and data propagation.

Composite nodes keep memory across ticks: a sequence skips children that
already succeeded, a selector skips children that already failed. Reset
clears that memory.
"""

from __future__ import annotations

import copy
import logging
from typing import Callable

from .states import PLAIN, NodeAction, NodeState, parent_view, single
from .tree import DataEdge, Parameter, StructureError, TreeEnvironment, TreeNode, check_type

log = logging.getLogger(__name__)

S = NodeState
A = NodeAction

# node kinds with their own lifecycle (capabilities, remote slots) register here
KIND_HANDLERS: dict[str, Callable[[TreeNode, NodeAction, TreeEnvironment], None]] = {}
LEAVES: dict[str, type["Leaf"]] = {}


def leaf(name: str):
    def deco(cls):
        LEAVES[name] = cls
        return cls

    return deco


class Leaf:
    """Behavior of an ``action-leaf``; one instance per node, created on setup."""

    def __init__(self, node: TreeNode, env: TreeEnvironment):
        self.node_id = node.id

    def tick(self, env: TreeEnvironment) -> NodeState:
        raise NotImplementedError

    def untick(self, env):
        pass

    def reset(self, env):
        pass

    def shutdown(self, env):
        pass

    def option(self, env, name, default=None):
        return env.get(self.node_id, name, "option", env.nodes[self.node_id].options.get(name, default))


@leaf("succeed")
class Succeed(Leaf):
    def tick(self, env):
        return S.SUCCEEDED


@leaf("fail")
class Fail(Leaf):
    def tick(self, env):
        return S.FAILED


@leaf("running")
class Running(Leaf):
    def tick(self, env):
        return S.RUNNING


@leaf("script")
class Script(Leaf):
    """Returns the states listed in option ``script`` on successive ticks; the last one repeats."""

    def __init__(self, node, env):
        super().__init__(node, env)
        self.i = 0

    def tick(self, env):
        script = self.option(env, "script")
        st = S(script[min(self.i, len(script) - 1)])
        self.i += 1
        return st

    def reset(self, env):
        self.i = 0


@leaf("constant")
class Constant(Leaf):
    """Publishes option ``values`` on its outputs."""

    def tick(self, env):
        for name, value in env.nodes[self.node_id].options.get("values", {}).items():
            if env.nodes[self.node_id].param(name, "output") is not None:
                env.blackboard[(self.node_id, name, "output")] = value
        return S.SUCCEEDED


@leaf("check_false")
class CheckFalse(Leaf):
    """Succeeds iff input ``value`` is present and false."""

    def tick(self, env):
        v = env.get(self.node_id, "value", "input")
        return S.SUCCEEDED if v is False else S.FAILED


def _copy_edge(e: DataEdge, env: TreeEnvironment) -> None:
    key = (e.src[0], e.src[1], "output")
    if key not in env.blackboard:
        return
    value = env.blackboard[key]
    dst = env.nodes[e.dst[0]]
    p = dst.param(e.dst[1], "input")
    if p is None or not check_type(p.type, value):
        log.debug("type mismatch on %s -> %s", e.src, e.dst)
        dst.state = S.ERROR
        return
    env.blackboard[(e.dst[0], e.dst[1], "input")] = copy.deepcopy(value)


def propagate_data(env: TreeEnvironment) -> TreeEnvironment:
    """Copy every data edge once, in topological order."""
    for e in env.edge_order():
        _copy_edge(e, env)
    return env


def pull_inputs(node: TreeNode, env: TreeEnvironment) -> None:
    for e in env.in_edges(node.id):
        _copy_edge(e, env)


def apply_action(node_id: str, action, env: TreeEnvironment) -> TreeEnvironment:
    node = env.node(node_id)
    action = NodeAction(action)
    handler = KIND_HANDLERS.get(node.kind)
    if handler is not None:
        handler(node, action, env)
    else:
        _apply_plain(node, action, env)
    return env


def tick_root(env: TreeEnvironment) -> TreeEnvironment:
    if env.root is None:
        return env
    root = env.nodes[env.root]
    if root.state is S.ERROR:
        env.errored = True
        return env
    return apply_action(env.root, A.TICK, env)


def setup_tree(env: TreeEnvironment) -> TreeEnvironment:
    if env.root is not None:
        apply_action(env.root, A.SETUP, env)
    return env


def count_tick(node: TreeNode, env: TreeEnvironment) -> None:
    env.tick_counts[node.id] = env.tick_counts.get(node.id, 0) + 1


def _apply_plain(node: TreeNode, action: NodeAction, env: TreeEnvironment) -> None:
    state = node.state
    if action is A.TICK:
        if len(PLAIN[(state, action)]) == 1:  # only the error edge is deterministic
            node.state = S.ERROR
            return
        count_tick(node, env)
        pull_inputs(node, env)
        if node.state is S.ERROR:
            return
        node.state = _tick_logic(node, env)
        return

    target = single(PLAIN, state, action)
    rt = env.runtime.get(node.id)
    if action is A.SETUP:
        if target is S.IDLE:
            for c in node.children:
                apply_action(c, A.SETUP, env)
            _make_runtime(node, env)
    elif action is A.UNTICK:
        if state not in (S.UNINITIALIZED, S.SHUTDOWN, S.ERROR):
            _untick_children(node, env)
            if rt is not None:
                rt.untick(env)
    elif action is A.RESET:
        if target is S.IDLE:
            for c in node.children:
                apply_action(c, A.RESET, env)
            if rt is not None:
                rt.reset(env)
    elif action is A.SHUTDOWN:
        for c in node.children:
            apply_action(c, A.SHUTDOWN, env)
        if rt is not None:
            rt.shutdown(env)
    node.state = target


def _make_runtime(node: TreeNode, env: TreeEnvironment) -> None:
    if node.kind == "action-leaf":
        name = node.options.get("action", "succeed")
        try:
            cls = LEAVES[name]
        except KeyError:
            raise StructureError(f"node {node.id!r}: unknown action {name!r}") from None
        env.runtime[node.id] = cls(node, env)
    elif node.kind == "decorator":
        kind = node.options.get("decorator", "inverter")
        env.runtime[node.id] = ForEach(node, env) if kind == "for_each" else None


def _untick_children(node: TreeNode, env: TreeEnvironment, start: int = 0) -> None:
    for cid in node.children[start:]:
        if env.nodes[cid].state not in (S.IDLE, S.UNINITIALIZED, S.SHUTDOWN):
            apply_action(cid, A.UNTICK, env)


def _tick_logic(node: TreeNode, env: TreeEnvironment) -> NodeState:
    kind = node.kind
    if kind == "sequence":
        return _tick_sequence(node, env)
    if kind == "selector":
        return _tick_selector(node, env)
    if kind == "parallel":
        return _tick_parallel(node, env)
    if kind == "decorator":
        rt = env.runtime.get(node.id)
        if isinstance(rt, ForEach):
            return rt.tick(node, env)
        return _tick_inverter(node, env)
    if kind in ("io-input-bridge", "io-output-bridge"):
        return S.SUCCEEDED
    return env.runtime[node.id].tick(env)


def _child_result(cid, env) -> NodeState:
    st = parent_view(env.nodes[cid].state)
    if st in (S.SUCCEEDED, S.RUNNING):
        return st
    return S.FAILED


def _tick_sequence(node, env):
    for i, cid in enumerate(node.children):
        if env.nodes[cid].state is S.SUCCEEDED:
            continue
        apply_action(cid, A.TICK, env)
        st = _child_result(cid, env)
        if st is S.SUCCEEDED:
            continue
        if st is S.FAILED:
            _untick_children(node, env, i + 1)
        return st
    return S.SUCCEEDED


def _tick_selector(node, env):
    for i, cid in enumerate(node.children):
        if env.nodes[cid].state is S.FAILED:
            continue
        apply_action(cid, A.TICK, env)
        st = _child_result(cid, env)
        if st is S.FAILED:
            continue
        if st is S.SUCCEEDED:
            _untick_children(node, env, i + 1)
        return st
    return S.SUCCEEDED if not node.children else S.FAILED


def _tick_parallel(node, env):
    results = []
    for cid in node.children:
        if env.nodes[cid].state is not S.SUCCEEDED:
            apply_action(cid, A.TICK, env)
        results.append(_child_result(cid, env))
    if S.FAILED in results:
        for cid, st in zip(node.children, results):
            if st is S.RUNNING:
                apply_action(cid, A.UNTICK, env)
        return S.FAILED
    if all(st is S.SUCCEEDED for st in results):
        return S.SUCCEEDED
    return S.RUNNING


def _tick_inverter(node, env):
    if not node.children:
        return S.SUCCEEDED
    cid = node.children[0]
    apply_action(cid, A.TICK, env)
    st = _child_result(cid, env)
    if st is S.RUNNING:
        return st
    return S.FAILED if st is S.SUCCEEDED else S.SUCCEEDED


class ForEach:
    """Decorator that runs one copy of its child subtree per mission item.

    Items come from ``env.host.mission_items(source)`` as ``(item_id, position)``
    pairs. Each copy gets a data-only item node publishing ``task_id`` and
    ``target``; ``options["item_edges"]`` wires those ports (written with the
    placeholder node id ``$item``) into the copy. A failed copy is reset and
    retried up to ``max_attempts`` times.
    """

    def __init__(self, node: TreeNode, env: TreeEnvironment):
        self.node_id = node.id
        self.source = node.options["source"]
        self.max_attempts = int(node.options.get("max_attempts", 10))
        self.item_edges = [DataEdge.from_dict(e) for e in node.options.get("item_edges", [])]
        self.instances: dict[str, str] = {}
        self.attempts: dict[str, int] = {}

    def _spawn(self, node, env, item_id, position):
        template = node.children[0]
        ids = env.subtree_ids(template)
        rename = {i: f"{i}@{item_id}" for i in ids}
        clones = []
        for i in ids:
            src = env.nodes[i]
            clones.append(TreeNode(
                id=rename[i],
                kind=src.kind,
                children=[rename[c] for c in src.children],
                params=list(src.params),
                options=copy.deepcopy(src.options),
            ))
        item_node_id = f"{self.node_id}#{item_id}"
        clones.append(TreeNode(
            id=item_node_id,
            kind="action-leaf",
            params=[Parameter("task_id", "output", "str"), Parameter("target", "output", "pose2d")],
            options={"action": "constant"},
        ))
        edges = [
            DataEdge((rename[e.src[0]], e.src[1]), (rename[e.dst[0]], e.dst[1]), e.type)
            for e in env.edges
            if e.src[0] in rename and e.dst[0] in rename
        ]
        edges += [
            DataEdge((item_node_id, e.src[1]), (rename[e.dst[0]], e.dst[1]), e.type)
            for e in self.item_edges
        ]
        env.add_nodes(clones, edges)
        env.blackboard[(item_node_id, "task_id", "output")] = item_id
        env.blackboard[(item_node_id, "target", "output")] = list(position)
        for i in ids:
            for key, value in env.blackboard.items():
                if key[0] == i and key[2] == "option":
                    env.blackboard[(rename[i], key[1], "option")] = value
        root = rename[template]
        apply_action(root, A.SETUP, env)
        self.instances[item_id] = root
        self.attempts[item_id] = 0

    def tick(self, node, env) -> NodeState:
        host = env.host
        for item_id, position in host.mission_items(self.source):
            if item_id not in self.instances:
                self._spawn(node, env, item_id, position)
        failed = False
        done = True
        for item_id, root in self.instances.items():
            child = env.nodes[root]
            if child.state is S.SUCCEEDED:
                continue
            apply_action(root, A.TICK, env)
            st = _child_result(root, env)
            if st is S.SUCCEEDED:
                continue
            done = False
            if st is S.FAILED:
                self.attempts[item_id] += 1
                if self.attempts[item_id] >= self.max_attempts:
                    failed = True
                else:
                    apply_action(root, A.RESET, env)
        if failed:
            for root in self.instances.values():
                if env.nodes[root].state not in (S.IDLE, S.SUCCEEDED, S.FAILED):
                    apply_action(root, A.UNTICK, env)
            return S.FAILED
        if done and host.source_exhausted(self.source):
            return S.SUCCEEDED
        return S.RUNNING

    def untick(self, env):
        for root in self.instances.values():
            if env.nodes[root].state not in (S.IDLE, S.UNINITIALIZED):
                apply_action(root, A.UNTICK, env)

    def reset(self, env):
        self._drop(env)

    def shutdown(self, env):
        for root in self.instances.values():
            apply_action(root, A.SHUTDOWN, env)
        self._drop(env)

    def _drop(self, env):
        for item_id, root in self.instances.items():
            apply_action(root, A.SHUTDOWN, env)
            env.remove_nodes(env.subtree_ids(root) + [f"{self.node_id}#{item_id}"])
        self.instances.clear()
        self.attempts.clear()
