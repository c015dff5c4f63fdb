"""Capability nodes, their implementations, IO bridges and remote slots.

A capability node is bound to an implementation at runtime. Binding and
execution services (auctions, execution requests, timeline reporting) come
from the environment's ``host``; see :class:`BindingHost` for the surface the
nodes use. Lifecycles follow the ``CAPABILITY`` and ``SLOT`` tables in
:mod:`btcap.states`.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Protocol

from . import engine
from .engine import count_tick, pull_inputs, setup_tree, tick_root
from .states import CAPABILITY, SLOT, NodeAction, NodeState, parent_view, single
from .tree import Parameter, StructureError, TreeEnvironment, TreeNode

S = NodeState
A = NodeAction

SCOPES = ("local", "remote")


class CapabilityError(Exception):
    """Invalid interface, implementation or precondition."""


@dataclass(frozen=True)
class CapabilityInterface:
    name: str
    inputs: tuple[Parameter, ...] = ()
    outputs: tuple[Parameter, ...] = ()
    required_local: bool = False
    finish_at: str | None = None  # named map area the task route ends at

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise CapabilityError("interface name must be a non-empty string")
        for p in (*self.inputs, *self.outputs):
            if p.kind == "option":
                raise CapabilityError(f"capability {self.name!r} cannot declare option {p.name!r}")
        if any(p.kind != "input" for p in self.inputs):
            raise CapabilityError(f"{self.name!r}: inputs must have kind 'input'")
        if any(p.kind != "output" for p in self.outputs):
            raise CapabilityError(f"{self.name!r}: outputs must have kind 'output'")

    def signature(self):
        return (
            self.name,
            tuple(sorted((p.name, p.type) for p in self.inputs)),
            tuple(sorted((p.name, p.type) for p in self.outputs)),
            self.required_local,
            self.finish_at,
        )

    def to_dict(self):
        d = {
            "name": self.name,
            "inputs": [{"name": p.name, "type": p.type} for p in self.inputs],
            "outputs": [{"name": p.name, "type": p.type} for p in self.outputs],
            "required_local": self.required_local,
        }
        if self.finish_at:
            d["finish_at"] = self.finish_at
        return d

    @classmethod
    def from_dict(cls, d):
        def params(key, kind):
            out = []
            for p in d.get(key, []):
                k = p.get("kind", kind)
                out.append(Parameter(p["name"], k, p["type"]))
            return tuple(out)

        opts = [p for p in d.get("options", [])]
        if opts:
            raise CapabilityError(f"capability {d.get('name')!r} cannot declare options")
        return cls(
            name=d["name"],
            inputs=params("inputs", "input"),
            outputs=params("outputs", "output"),
            required_local=bool(d.get("required_local", False)),
            finish_at=d.get("finish_at"),
        )

    @classmethod
    def from_node(cls, node: TreeNode):
        if any(p.kind == "option" for p in node.params):
            raise CapabilityError(f"capability node {node.id!r} cannot declare option parameters")
        return cls(
            name=node.options["interface"],
            inputs=tuple(node.inputs()),
            outputs=tuple(node.outputs()),
            required_local=bool(node.options.get("required_local", False)),
            finish_at=node.options.get("finish_at"),
        )


@dataclass(frozen=True)
class Precondition:
    interface: str
    scope: str

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise CapabilityError(f"precondition scope must be local or remote, got {self.scope!r}")


@dataclass
class CapabilityImplementation:
    id: str
    interface: str
    owner_world: str
    tree: dict
    preconditions: tuple[Precondition, ...] = ()
    expected_duration: float = 0.0
    extra_params: dict = field(default_factory=dict)

    def to_payload(self) -> dict:
        return {
            "id": self.id,
            "interface": self.interface,
            "owner": self.owner_world,
            "tree": copy.deepcopy(self.tree),
            "preconditions": [[p.interface, p.scope] for p in self.preconditions],
            "expected_duration": self.expected_duration,
            "extra_params": copy.deepcopy(self.extra_params),
        }

    @classmethod
    def from_payload(cls, d: dict):
        try:
            return cls(
                id=str(d["id"]),
                interface=str(d["interface"]),
                owner_world=str(d["owner"]),
                tree=dict(d["tree"]),
                preconditions=tuple(Precondition(c, k) for c, k in d.get("preconditions", [])),
                expected_duration=float(d.get("expected_duration", 0.0)),
                extra_params=dict(d.get("extra_params", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CapabilityError(f"malformed implementation payload: {exc}") from exc


@dataclass
class Assignment:
    capability: str
    chosen: str | None = None
    executor_world: str | None = None


# -- preconditions and executability ------------------------------------------

def validate_preconditions(impl: CapabilityImplementation, completed_here, nearby_completed) -> bool:
    """Every (interface, local) precondition must be completed on this robot,
    every (interface, remote) one on some other live team member.

    ``nearby_completed`` maps world id to that robot's completed-interface set
    and must not contain this robot.
    """
    for pre in impl.preconditions:
        if pre.scope == "local":
            if pre.interface not in completed_here:
                return False
        elif not any(pre.interface in done for done in nearby_completed.values()):
            return False
    return True


def executable(interface: CapabilityInterface, capability_world: str,
               impl: CapabilityImplementation, team_view: dict[str, bool]) -> bool:
    """``team_view`` maps each live robot to whether its tree has a remote slot."""
    if impl.owner_world == capability_world:
        return True
    return (not interface.required_local) and bool(team_view.get(impl.owner_world, False))


# -- bridges -------------------------------------------------------------------

def find_bridges(env: TreeEnvironment) -> tuple[str, str]:
    ins = [n.id for n in env.nodes.values() if n.kind == "io-input-bridge"]
    outs = [n.id for n in env.nodes.values() if n.kind == "io-output-bridge"]
    if len(ins) != 1 or len(outs) != 1:
        raise CapabilityError(
            f"implementation needs exactly one input and one output bridge, found {len(ins)}/{len(outs)}"
        )
    return ins[0], outs[0]


def check_bridges(env: TreeEnvironment, interface: CapabilityInterface | None = None) -> tuple[str, str]:
    bin_, bout = find_bridges(env)
    nin, nout = env.nodes[bin_], env.nodes[bout]
    if nin.inputs():
        raise CapabilityError(f"input bridge {bin_!r} cannot declare inputs")
    if nout.outputs():
        raise CapabilityError(f"output bridge {bout!r} cannot declare outputs")
    if interface is not None:
        want_in = {(p.name, p.type) for p in interface.inputs}
        want_out = {(p.name, p.type) for p in interface.outputs}
        if {(p.name, p.type) for p in nin.outputs()} != want_in:
            raise CapabilityError(f"input bridge {bin_!r} does not mirror inputs of {interface.name!r}")
        if {(p.name, p.type) for p in nout.inputs()} != want_out:
            raise CapabilityError(f"output bridge {bout!r} does not mirror outputs of {interface.name!r}")
    return bin_, bout


def capability_inputs(node: TreeNode, env: TreeEnvironment) -> dict:
    return {
        p.name: copy.deepcopy(env.blackboard[(node.id, p.name, "input")])
        for p in node.inputs()
        if (node.id, p.name, "input") in env.blackboard
    }


def write_input_bridge(impl_env: TreeEnvironment, values: dict) -> None:
    bin_ = impl_env.meta["bridges"][0]
    node = impl_env.nodes[bin_]
    for p in node.outputs():
        if p.name in values:
            impl_env.blackboard[(bin_, p.name, "output")] = copy.deepcopy(values[p.name])


def read_output_bridge(impl_env: TreeEnvironment) -> dict:
    bout = impl_env.meta["bridges"][1]
    node = impl_env.nodes[bout]
    pull_inputs(node, impl_env)
    return {
        p.name: copy.deepcopy(impl_env.blackboard[(bout, p.name, "input")])
        for p in node.inputs()
        if (bout, p.name, "input") in impl_env.blackboard
    }


def write_capability_outputs(node: TreeNode, env: TreeEnvironment, values: dict) -> None:
    for p in node.outputs():
        if p.name in values:
            env.blackboard[(node.id, p.name, "output")] = copy.deepcopy(values[p.name])


def bridge_sync_in(cap_node: TreeNode, env: TreeEnvironment, impl_env: TreeEnvironment) -> None:
    write_input_bridge(impl_env, capability_inputs(cap_node, env))


def bridge_sync_out(cap_node: TreeNode, env: TreeEnvironment, impl_env: TreeEnvironment) -> None:
    write_capability_outputs(cap_node, env, read_output_bridge(impl_env))


def instantiate(impl: CapabilityImplementation, world: str, host: Any,
                interface: CapabilityInterface | None = None) -> TreeEnvironment:
    """Build and set up the execution environment for ``impl``."""
    try:
        env = TreeEnvironment.from_dict(impl.tree, world=world, host=host)
    except (KeyError, TypeError) as exc:
        raise CapabilityError(f"implementation {impl.id!r}: bad tree: {exc}") from exc
    env.meta["bridges"] = check_bridges(env, interface)
    env.meta["impl"] = impl
    setup_tree(env)
    return env


# observers see bridge values after every running tick (instrumentation only)
BRIDGE_OBSERVERS: list[Any] = []


def _notify_observers(method, *args):
    for obs in BRIDGE_OBSERVERS:
        fn = getattr(obs, method, None)
        if fn is not None:
            fn(*args)


# -- capability node -----------------------------------------------------------

class BindingHost(Protocol):
    """Services a capability node or remote slot needs from its robot."""

    now: float
    retry_limit: int

    def open_auction(self, rt: "CapabilityRuntime", env: TreeEnvironment, urgent: bool = False) -> str | None: ...
    def auction_outcome(self, round_id: str) -> Any: ...
    def forget_auction(self, round_id: str) -> None: ...
    def implementation(self, impl_id: str) -> CapabilityImplementation | None: ...
    def check_preconditions(self, impl: CapabilityImplementation) -> bool: ...
    def request_remote(self, rt: "CapabilityRuntime", env: TreeEnvironment) -> Any: ...
    def push_inputs(self, rt: "CapabilityRuntime", values: dict) -> None: ...
    def abort_remote(self, record: Any, reason: str) -> None: ...
    def local_completed(self, interface: str) -> None: ...
    def notify(self, rt: "CapabilityRuntime", event: str, robot: str | None = None) -> None: ...
    def slot_report(self, request: dict, outputs: dict, root_state: NodeState, done: bool) -> None: ...
    def slot_released(self, request: dict, reason: str) -> None: ...


@dataclass
class CapabilityRuntime:
    node_id: str
    interface: CapabilityInterface
    assignment: Assignment | None = None
    round_id: str | None = None
    voids: int = 0
    bid: Any = None
    child: TreeEnvironment | None = None
    record: Any = None
    switch: Any = None  # accepted record of a preempting executor
    probe_round: str | None = None  # re-auction of a running assignment
    applied: int = 0  # last output sequence number written back

    @property
    def chosen(self):
        return self.assignment.chosen if self.assignment else None


def assignment_of(env: TreeEnvironment, node_id: str) -> Assignment | None:
    rt = env.runtime.get(node_id)
    return rt.assignment if isinstance(rt, CapabilityRuntime) else None


def _release(rt: CapabilityRuntime, env: TreeEnvironment, reason: str) -> None:
    host = env.host
    if rt.round_id is not None and host is not None:
        host.forget_auction(rt.round_id)
    if rt.probe_round is not None and host is not None:
        host.forget_auction(rt.probe_round)
    for rec in (rt.record, rt.switch):
        if rec is not None and host is not None and rec.phase in ("requested", "accepted", "running"):
            host.abort_remote(rec, reason)
    if rt.child is not None:
        engine.apply_action(rt.child.root, A.SHUTDOWN, rt.child)
    rt.round_id = rt.probe_round = None
    rt.child = rt.record = rt.switch = rt.bid = None
    rt.assignment = None
    rt.applied = 0


def _capability_action(node: TreeNode, action: NodeAction, env: TreeEnvironment) -> None:
    rt = env.runtime.get(node.id)
    state = node.state
    if action is A.TICK:
        if state in (S.UNINITIALIZED, S.SHUTDOWN, S.ERROR):
            if rt is not None:
                _release(rt, env, "error")
            node.state = S.ERROR
            return
        count_tick(node, env)
        pull_inputs(node, env)
        if node.state is S.ERROR:
            _release(rt, env, "error")
            return
        node.state = capability_tick(node, env)
        return

    target = single(CAPABILITY, state, action)
    if action is A.SETUP:
        if target is S.IDLE and rt is None:
            env.runtime[node.id] = CapabilityRuntime(node.id, CapabilityInterface.from_node(node))
        elif target is S.ERROR and rt is not None:
            _release(rt, env, "error")
    elif action is A.UNTICK:
        # hold: remote executions continue, a local implementation is unticked
        if rt is not None and rt.child is not None:
            engine.apply_action(rt.child.root, A.UNTICK, rt.child)
    elif action in (A.RESET, A.SHUTDOWN):
        if rt is not None and target in (S.IDLE, S.SHUTDOWN):
            _release(rt, env, action.value)
            rt.voids = 0
    node.state = target


def capability_tick(node: TreeNode, env: TreeEnvironment) -> NodeState:
    state = node.state
    rt: CapabilityRuntime = env.runtime[node.id]
    if state is S.IDLE:
        rt.voids = 0
        rt.round_id = env.host.open_auction(rt, env)
        return S.UNASSIGNED
    if state is S.UNASSIGNED:
        return tick_unassigned(node, env)
    if state is S.ASSIGNED:
        return tick_assigned(node, env)
    if state is S.RUNNING:
        return tick_running(node, env)
    return state  # succeeded / failed / paused hold


def tick_unassigned(node: TreeNode, env: TreeEnvironment) -> NodeState:
    host = env.host
    rt: CapabilityRuntime = env.runtime[node.id]
    if rt.switch is not None and rt.round_id is None:
        new, rt.switch = rt.switch, None
        if new.phase in ("accepted", "running", "done"):
            rt.assignment = Assignment(node.id, new.implementation, new.executor)
            rt.record = new
            host.notify(rt, "awarded", new.executor)
            return S.ASSIGNED
        host.abort_remote(new, "preempted")
    if rt.round_id is None:
        rt.round_id = host.open_auction(rt, env)
        return S.UNASSIGNED
    outcome = host.auction_outcome(rt.round_id)
    if outcome == "open":
        return S.UNASSIGNED
    rt.round_id = None
    if outcome == "void" or (rt.interface.required_local and outcome.bidder != env.world):
        rt.voids += 1
        return S.ERROR if rt.voids >= host.retry_limit else S.UNASSIGNED
    rt.assignment = Assignment(node.id, outcome.implementation, outcome.bidder)
    rt.bid = outcome
    rt.voids = 0
    host.notify(rt, "awarded", outcome.bidder)
    return S.ASSIGNED


def tick_assigned(node: TreeNode, env: TreeEnvironment) -> NodeState:
    host = env.host
    rt: CapabilityRuntime = env.runtime[node.id]
    a = rt.assignment
    if a.executor_world == env.world:
        if host.local_busy(node.id):
            # one body, one execution: a busy winner counts as a rejection
            rt.assignment = rt.bid = None
            return S.UNASSIGNED
        impl = host.implementation(a.chosen)
        if impl is None or not host.check_preconditions(impl):
            return S.FAILED
        try:
            rt.child = instantiate(impl, env.world, host, rt.interface)
        except (CapabilityError, StructureError):
            return S.FAILED
        host.notify(rt, "started", env.world)
        return S.RUNNING
    rec = rt.record
    if rec is None:
        rt.record = host.request_remote(rt, env)
        return S.ASSIGNED
    if rec.phase == "requested":
        return S.ASSIGNED
    if rec.phase in ("accepted", "running", "done"):
        host.notify(rt, "started", rec.executor)
        return S.RUNNING
    if rec.phase in ("rejected", "lost"):
        rt.record = None
        rt.assignment = None
        rt.bid = None
        return S.UNASSIGNED
    return S.FAILED


def tick_running(node: TreeNode, env: TreeEnvironment) -> NodeState:
    host = env.host
    rt: CapabilityRuntime = env.runtime[node.id]
    if rt.child is not None:
        child = rt.child
        bridge_sync_in(node, env, child)
        tick_root(child)
        bridge_sync_out(node, env, child)
        _notify_observers("local_tick", node.id, env, child)
        st = parent_view(child.nodes[child.root].state)
        if st not in (S.RUNNING, S.SUCCEEDED):
            st = S.FAILED
        if st is S.SUCCEEDED:
            host.local_completed(rt.interface.name)
            host.notify(rt, "completed", env.world)
        elif st is S.FAILED:
            host.notify(rt, "failed", env.world)
        if st is not S.RUNNING:
            rt.child = None
        return st

    if rt.switch is not None and rt.switch.phase in ("accepted", "running"):
        # preemption: release the old executor and unbind; the next tick
        # binds to the executor that already accepted
        old = rt.record
        host.abort_remote(old, "preempted")
        host.notify(rt, "failed", old.executor)
        rt.assignment = rt.record = rt.bid = None
        rt.applied = 0
        return S.UNASSIGNED
    if rt.switch is not None and rt.switch.phase in ("rejected", "lost", "failed", "done"):
        rt.switch = None

    rec = rt.record
    if rec.phase in ("lost", "aborted"):
        host.notify(rt, "lost", rec.executor)
        # failed, then reset (assignment cleared), then back to unassigned
        _release(rt, env, "lost")
        rt.voids = 0
        rt.round_id = host.open_auction(rt, env, urgent=True)
        return S.UNASSIGNED
    if rec.outputs_seq > rt.applied:
        write_capability_outputs(node, env, rec.outputs)
        rt.applied = rec.outputs_seq
        _notify_observers("outputs_applied", rec.exec_id, rec.outputs_seq, node.id, env)
    if rec.phase == "done":
        st = rec.root_state
        if st is S.SUCCEEDED:
            host.notify(rt, "completed", rec.executor)
        else:
            st = S.FAILED
            host.notify(rt, "failed", rec.executor)
        return st
    seq = host.push_inputs(rt, capability_inputs(node, env))
    _notify_observers("inputs_sent", rec.exec_id, seq, node.id, env)
    return S.RUNNING


# -- remote capability slot ----------------------------------------------------

@dataclass
class SlotRuntime:
    request: dict | None = None
    impl: CapabilityImplementation | None = None
    child: TreeEnvironment | None = None
    inputs: dict = field(default_factory=dict)
    inputs_seq: int = 0


def remote_slot_handle(slot_node: TreeNode, env: TreeEnvironment, message: dict) -> dict:
    """Handle an execution request, input update or abort addressed to a slot.

    ``message["type"]`` is ``request``, ``inputs`` or ``abort``.
    """
    rt: SlotRuntime = env.runtime.get(slot_node.id)
    kind = message.get("type")
    if kind == "request":
        if rt is None or slot_node.state is not S.UNASSIGNED or rt.request is not None:
            return {"accepted": False, "reason": "busy" if rt and rt.request else "not ready"}
        try:
            impl = CapabilityImplementation.from_payload(message["implementation"])
            probe = TreeEnvironment.from_dict(impl.tree, world=env.world)
            find_bridges(probe)
        except (CapabilityError, StructureError, KeyError, TypeError) as exc:
            return {"accepted": False, "reason": f"malformed: {exc}"}
        rt.request = message
        rt.impl = impl
        rt.inputs = dict(message.get("inputs", {}))
        rt.inputs_seq = int(message.get("inputs_seq", 0))
        slot_node.state = S.ASSIGNED
        return {"accepted": True}
    if rt is None or rt.request is None or message.get("exec_id") != rt.request.get("exec_id"):
        return {"accepted": False, "reason": "unknown execution"}
    if kind == "inputs":
        if int(message.get("seq", 0)) > rt.inputs_seq:
            rt.inputs = dict(message.get("values", {}))
            rt.inputs_seq = int(message["seq"])
        return {"accepted": True}
    if kind == "abort":
        _slot_clear(rt, env)
        slot_node.state = S.UNASSIGNED
        return {"accepted": True}
    return {"accepted": False, "reason": f"unknown message type {kind!r}"}


def _slot_clear(rt: SlotRuntime, env: TreeEnvironment, reason: str | None = None) -> None:
    if rt.child is not None:
        engine.apply_action(rt.child.root, A.SHUTDOWN, rt.child)
    if reason is not None and rt.request is not None and env.host is not None:
        env.host.slot_released(rt.request, reason)
    rt.request = rt.impl = rt.child = None
    rt.inputs = {}
    rt.inputs_seq = 0


def _slot_action(node: TreeNode, action: NodeAction, env: TreeEnvironment) -> None:
    rt: SlotRuntime | None = env.runtime.get(node.id)
    state = node.state
    if action is A.TICK:
        if state in (S.UNINITIALIZED, S.SHUTDOWN, S.ERROR):
            if rt is not None:
                _slot_clear(rt, env, "error")
            node.state = S.ERROR
            return
        count_tick(node, env)
        node.state = _slot_tick(node, env, rt)
        return
    target = single(SLOT, state, action)
    if action is A.SETUP:
        if target is S.IDLE and rt is None:
            env.runtime[node.id] = SlotRuntime()
        elif target is S.ERROR and rt is not None:
            _slot_clear(rt, env, "error")
    elif rt is not None and target in (S.UNASSIGNED, S.IDLE, S.SHUTDOWN):
        _slot_clear(rt, env, action.value)
    node.state = target


def _slot_tick(node: TreeNode, env: TreeEnvironment, rt: SlotRuntime) -> NodeState:
    state = node.state
    host = env.host
    if state is S.IDLE or state is S.UNASSIGNED:
        return S.UNASSIGNED
    if state in (S.SUCCEEDED, S.FAILED, S.PAUSED):
        _slot_clear(rt, env, "reset")
        return S.UNASSIGNED
    if state is S.ASSIGNED:
        if not host.check_preconditions(rt.impl):
            host.slot_report(rt.request, {}, S.FAILED, True)
            _slot_clear(rt, env)
            return S.UNASSIGNED
        try:
            rt.child = instantiate(rt.impl, env.world, host)
        except (CapabilityError, StructureError):
            host.slot_report(rt.request, {}, S.FAILED, True)
            _slot_clear(rt, env)
            return S.UNASSIGNED
        rt.child.meta["request"] = rt.request
        return S.RUNNING
    # running: one forwarded tick per slot tick
    child = rt.child
    write_input_bridge(child, rt.inputs)
    tick_root(child)
    outputs = read_output_bridge(child)
    root = parent_view(child.nodes[child.root].state)
    if root not in (S.RUNNING, S.SUCCEEDED):
        root = S.FAILED
    _notify_observers("slot_tick", rt.request["exec_id"], rt.inputs_seq, child)
    done = root is not S.RUNNING
    host.slot_report(rt.request, outputs, root, done)
    if done:
        if root is S.SUCCEEDED:
            host.local_completed(rt.impl.interface)
        _slot_clear(rt, env)
        return S.UNASSIGNED
    return S.RUNNING


def slot_runtime(env: TreeEnvironment, node_id: str) -> SlotRuntime | None:
    rt = env.runtime.get(node_id)
    return rt if isinstance(rt, SlotRuntime) else None


engine.KIND_HANDLERS["capability"] = _capability_action
engine.KIND_HANDLERS["remote-capability-slot"] = _slot_action
