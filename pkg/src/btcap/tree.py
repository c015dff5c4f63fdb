"""Tree graph, data graph and the per-robot execution environment."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .states import NodeState

NODE_KINDS = (
    "sequence",
    "parallel",
    "selector",
    "decorator",
    "action-leaf",
    "capability",
    "io-input-bridge",
    "io-output-bridge",
    "remote-capability-slot",
)
CONTROL_KINDS = ("sequence", "parallel", "selector", "decorator")
LEAF_KINDS = tuple(k for k in NODE_KINDS if k not in CONTROL_KINDS)
PARAM_KINDS = ("input", "output", "option")


class StructureError(Exception):
    """Malformed tree, unknown node id or bad parameter declaration."""


def check_type(tag: str, value: Any) -> bool:
    """Does ``value`` belong to the semantic type ``tag``?

    Supported tags: int, float, str, bool, pose2d, any, list[<tag>].
    """
    if tag == "any":
        return True
    if tag.startswith("list[") and tag.endswith("]"):
        inner = tag[5:-1]
        return isinstance(value, (list, tuple)) and all(check_type(inner, v) for v in value)
    if tag == "bool":
        return isinstance(value, bool)
    if tag == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if tag == "float":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tag == "str":
        return isinstance(value, str)
    if tag == "pose2d":
        return (
            isinstance(value, (list, tuple))
            and len(value) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        )
    raise StructureError(f"unknown type tag {tag!r}")


@dataclass(frozen=True)
class Parameter:
    name: str
    kind: str
    type: str

    def __post_init__(self):
        if self.kind not in PARAM_KINDS:
            raise StructureError(f"parameter {self.name!r}: bad kind {self.kind!r}")

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "type": self.type}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["kind"], d["type"])


@dataclass
class TreeNode:
    id: str
    kind: str
    state: NodeState = NodeState.UNINITIALIZED
    children: list[str] = field(default_factory=list)
    params: list[Parameter] = field(default_factory=list)
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise StructureError(f"node {self.id!r}: unknown kind {self.kind!r}")
        if self.kind in LEAF_KINDS and self.children:
            raise StructureError(f"leaf node {self.id!r} cannot have children")

    def param(self, name: str, kind: str) -> Parameter | None:
        for p in self.params:
            if p.name == name and p.kind == kind:
                return p
        return None

    def inputs(self):
        return [p for p in self.params if p.kind == "input"]

    def outputs(self):
        return [p for p in self.params if p.kind == "output"]

    def to_dict(self):
        d = {"id": self.id, "kind": self.kind, "children": list(self.children)}
        if self.params:
            d["parameters"] = [p.to_dict() for p in self.params]
        if self.options:
            d["options"] = copy.deepcopy(self.options)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=d["id"],
            kind=d["kind"],
            children=list(d.get("children", [])),
            params=[Parameter.from_dict(p) for p in d.get("parameters", [])],
            options=copy.deepcopy(d.get("options", {})),
        )


@dataclass(frozen=True)
class DataEdge:
    src: tuple[str, str]
    dst: tuple[str, str]
    type: str = "any"

    def to_dict(self):
        return {"from": list(self.src), "to": list(self.dst), "type": self.type}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["from"]), tuple(d["to"]), d.get("type", "any"))


@dataclass
class TreeEnvironment:
    """One behavior tree with its data graph, owned by exactly one world.

    ``host`` is the owning agent (services such as auctions and the world
    simulation); ``runtime`` holds per-node transient objects. Neither is part
    of the environment's value and both are skipped by :meth:`snapshot`.
    """

    nodes: dict[str, TreeNode]
    root: str | None
    edges: list[DataEdge]
    world: str
    blackboard: dict[tuple[str, str, str], Any] = field(default_factory=dict)
    errored: bool = False
    host: Any = None
    runtime: dict[str, Any] = field(default_factory=dict)
    tick_counts: dict[str, int] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)
    _order: list[DataEdge] | None = field(default=None, repr=False)
    _in_edges: dict[str, list[DataEdge]] | None = field(default=None, repr=False)

    def node(self, node_id: str) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise StructureError(f"unknown node id {node_id!r}") from None

    def get(self, node_id, name, kind="output", default=None):
        return self.blackboard.get((node_id, name, kind), default)

    def set(self, node_id, name, kind, value):
        node = self.node(node_id)
        if node.param(name, kind) is None:
            raise StructureError(f"{node_id!r} declares no {kind} {name!r}")
        self.blackboard[(node_id, name, kind)] = value

    def add_nodes(self, nodes, edges=()):
        for n in nodes:
            if n.id in self.nodes:
                raise StructureError(f"duplicate node id {n.id!r}")
            self.nodes[n.id] = n
        self.edges.extend(edges)
        self._order = None
        self._in_edges = None

    def remove_nodes(self, ids):
        ids = set(ids)
        for i in ids:
            self.nodes.pop(i, None)
            self.runtime.pop(i, None)
            self.tick_counts.pop(i, None)
        self.edges = [e for e in self.edges if e.src[0] not in ids and e.dst[0] not in ids]
        self.blackboard = {k: v for k, v in self.blackboard.items() if k[0] not in ids}
        self._order = None
        self._in_edges = None

    def edge_order(self) -> list[DataEdge]:
        if self._order is None:
            self._order = topological_edges(self.nodes, self.edges)
        return self._order

    def in_edges(self, node_id: str) -> list[DataEdge]:
        if self._in_edges is None:
            idx: dict[str, list[DataEdge]] = {}
            for e in self.edges:
                idx.setdefault(e.dst[0], []).append(e)
            self._in_edges = idx
        return self._in_edges.get(node_id, [])

    def subtree_ids(self, node_id: str) -> list[str]:
        out, stack = [], [node_id]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(reversed(self.nodes[nid].children))
        return out

    def snapshot(self):
        """Value of the environment: node set with states, edges, blackboard."""
        return (
            {nid: (n.kind, n.state, tuple(n.children)) for nid, n in self.nodes.items()},
            tuple(self.edges),
            copy.deepcopy(self.blackboard),
        )

    # -- tree description file -------------------------------------------------

    def to_dict(self):
        return {
            "root": self.root,
            "nodes": [n.to_dict() for n in self.nodes.values()],
            "edges": [e.to_dict() for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d, world="", host=None):
        nodes = [TreeNode.from_dict(n) for n in d.get("nodes", [])]
        env = cls(
            nodes={},
            root=d.get("root") or (nodes[0].id if nodes else None),
            edges=[],
            world=world,
            host=host,
        )
        env.add_nodes(nodes, [DataEdge.from_dict(e) for e in d.get("edges", [])])
        validate_structure(env)
        for nid, node in env.nodes.items():
            for key, value in node.options.get("values", {}).items():
                env.blackboard[(nid, key, "option")] = value
        return env


def load_tree(path, world="", host=None) -> TreeEnvironment:
    return TreeEnvironment.from_dict(json.loads(Path(path).read_text()), world, host)


def topological_edges(nodes, edges) -> list[DataEdge]:
    """Order data edges so that a node's inputs are written before its outputs are read."""
    by_src: dict[str, list[DataEdge]] = {}
    indeg: dict[str, int] = {}
    for e in edges:
        by_src.setdefault(e.src[0], []).append(e)
        indeg.setdefault(e.src[0], 0)
        indeg[e.dst[0]] = indeg.get(e.dst[0], 0) + 1
    ready = sorted(n for n, d in indeg.items() if d == 0)
    order: list[DataEdge] = []
    seen = 0
    while ready:
        n = ready.pop(0)
        seen += 1
        for e in by_src.get(n, []):
            order.append(e)
            indeg[e.dst[0]] -= 1
            if indeg[e.dst[0]] == 0:
                ready.append(e.dst[0])
        ready.sort()
    if seen != len(indeg):
        raise StructureError("data graph contains a cycle")
    return order


def validate_structure(env: TreeEnvironment) -> None:
    for n in env.nodes.values():
        for c in n.children:
            if c not in env.nodes:
                raise StructureError(f"node {n.id!r} references unknown child {c!r}")
    if env.root is not None and env.root not in env.nodes:
        raise StructureError(f"unknown root {env.root!r}")
    for e in env.edges:
        for nid, name, kind in ((e.src[0], e.src[1], "output"), (e.dst[0], e.dst[1], "input")):
            node = env.nodes.get(nid)
            if node is None:
                raise StructureError(f"data edge references unknown node {nid!r}")
            p = node.param(name, kind)
            if p is None:
                raise StructureError(f"data edge: {nid!r} has no {kind} {name!r}")
            if e.type != "any" and p.type != e.type:
                raise StructureError(f"data edge {e.src}->{e.dst}: {p.type} != {e.type}")
        s = env.nodes[e.src[0]].param(e.src[1], "output")
        d = env.nodes[e.dst[0]].param(e.dst[1], "input")
        if s.type != d.type:
            raise StructureError(f"data edge {e.src}->{e.dst}: {s.type} != {d.type}")
    env.edge_order()
