"""One team member: repository, auctioneer, bidder, mission control and its tree.

An agent with a body is a robot whose tree is a remote capability slot. The
mission host runs the mission tree and auctions its capabilities; it may be a
bodiless operator station or a robot.
"""

from __future__ import annotations

import logging
from typing import Any

from . import auction as auc
from .auction import AuctionRound, Bid, ReauctionPolicy
from .bus import BUS, TeamBus
from .capability import (
    CapabilityImplementation,
    CapabilityInterface,
    CapabilityRuntime,
    capability_inputs,
    remote_slot_handle,
    validate_preconditions,
)
from .cost import TaskContext, UtilityCost, compute_cost, path_distance
from .engine import apply_action, setup_tree, tick_root
from .mission_control import MissionControl
from .repository import REPO_KINDS, Repository
from .states import NodeAction, NodeState
from .tree import TreeEnvironment
from .world import RobotBody, World

log = logging.getLogger(__name__)

S = NodeState
_EPS = 1e-9


class RobotAgent:
    def __init__(self, world_id: str, sim: World, bus: TeamBus, params, timeline: list,
                 catalog: list[CapabilityInterface], impls: list[CapabilityImplementation],
                 tree: dict, body: RobotBody | None = None, incarnation: int = 0, now: float = 0.0):
        self.world_id = world_id
        self.sim = sim
        self.bus = bus
        self.params = params
        self.timeline = timeline
        self.body = body
        self.now = now
        self.tick_period = params.tick_period
        self.retry_limit = params.retry_limit
        self.alive = True

        self.env = TreeEnvironment.from_dict(tree, world=world_id, host=self)
        slots = [n.id for n in self.env.nodes.values() if n.kind == "remote-capability-slot"]
        self.slot_id = slots[0] if slots else None
        self.repo = Repository(world_id, has_slot=self.slot_id is not None, incarnation=incarnation)
        for ci in catalog:
            self.repo.register_interface(ci)
        for impl in impls:
            self.repo.register_implementation(impl)
        self.mc = MissionControl(world_id, self._send, params.heartbeat_interval, params.heartbeat_timeout,
                                 bus.latency)
        self.rounds: dict[str, AuctionRound] = {}
        self.round_open: dict[str, float] = {}
        self.policy = ReauctionPolicy(params.reauction_interval)
        self._rounds_made = 0
        self._incarnation = incarnation
        self._next_sync = now
        setup_tree(self.env)

    # -- messaging -------------------------------------------------------------

    def _send(self, kind: str, recipient: str, payload: dict) -> None:
        self.bus.send(kind, self.world_id, recipient, payload, self.now)

    def _broadcast(self, kind: str, payload: dict) -> None:
        self.bus.broadcast(kind, self.world_id, payload, self.now)

    def _flush_repo(self, out) -> None:
        for kind, recipient, payload in out:
            if recipient is None:
                self._broadcast(kind, payload)
            else:
                self._send(kind, recipient, payload)

    # -- main step -------------------------------------------------------------

    def step(self, now: float, inbox) -> None:
        self.now = now
        repo_msgs = []
        for msg in inbox:
            body = msg.body()
            if msg.kind in REPO_KINDS:
                repo_msgs.append((msg.kind, msg.sender, body))
            else:
                self._dispatch(msg.kind, msg.sender, body, msg.send_time)
        self._flush_repo(self.repo.sync_step(repo_msgs))
        if now >= self._next_sync - _EPS:
            self._broadcast("DIGEST", self.repo.digest())
            self._next_sync = now + self.params.sync_interval

        self.mc.monitor(now)
        if self.mc.orphaned(now):
            self._drop_hosted("requester lost")
        self._handle_requests()

        if auc.on_boundary(now, self.params.auction_period):
            for rnd in sorted(self.rounds.values(), key=lambda r: r.id):
                if rnd.status == "pending":
                    self._start_round(rnd)
            self._open_probes()
        self._close_probes()

        tick_root(self.env)
        self.mc.heartbeats(now, self._progress())
        self._flush_repo(self.repo.sync_step([]))

    def _dispatch(self, kind: str, sender: str, body: dict, send_time: float) -> None:
        if kind == "MEMBER_CHANGE" and sender == BUS:
            self._member_change(body)
        elif kind == "AUCTION_ANNOUNCE":
            bid = self.make_bid(body)
            if bid is not None:
                self._send("BID", sender, bid.to_dict())
        elif kind == "BID":
            rnd = self.rounds.get(body["auction"])
            if rnd is not None and body["bidder"] == sender:
                rnd.submit(Bid.from_dict(body), self.now)
        elif kind in ("AWARD", "AUCTION_VOID"):
            pass  # informational for bidders; nothing is reserved
        elif kind == "EXEC_REQUEST":
            self.mc.queue_request(sender, body)
        elif body.get("exec_id") in self.mc.records:
            self.mc.on_message(kind, sender, body, send_time)
        else:
            self._executor_message(kind, sender, body, send_time)

    def _executor_message(self, kind, sender, body, send_time) -> None:
        if kind == "EXEC_ABORT":
            self.mc.pending = [r for r in self.mc.pending if r["exec_id"] != body.get("exec_id")]
        if not self.mc.on_requester_message(kind, sender, body, send_time):
            return
        slot = self.env.nodes[self.slot_id]
        if kind == "EXEC_TICK_SYNC":
            remote_slot_handle(slot, self.env, {
                "type": "inputs", "exec_id": body["exec_id"], "values": body["values"], "seq": body["seq"],
            })
        elif kind == "EXEC_ABORT":
            remote_slot_handle(slot, self.env, {"type": "abort", "exec_id": body["exec_id"]})
            self.mc.release(self.now)

    def _member_change(self, body: dict) -> None:
        world = body["world"]
        if body["event"] in ("leave", "fail"):
            self.repo.mark_departed(world)
        elif world != self.world_id:
            # a newcomer still gets to bid on rounds that are open
            for rnd in sorted(self.rounds.values(), key=lambda r: r.id):
                if rnd.status == "open" and not rnd.due(self.now):
                    self._send("AUCTION_ANNOUNCE", world, self._announcement(rnd))

    # -- executor side ---------------------------------------------------------

    def _handle_requests(self) -> None:
        batch = self.mc.take_batch()
        taken = False
        for req in batch:
            if self.slot_id is None:
                self.mc.reject(req, "no slot", self.now)
            elif self.mc.stale(req):
                self.mc.reject(req, "stale", self.now)
            elif taken or self.mc.hosted is not None or self._local_running() is not None:
                self.mc.reject(req, "busy", self.now)
            else:
                impl = self.repo.find(req["implementation"])
                if impl is None:
                    self.mc.reject(req, "unknown implementation", self.now)
                    continue
                res = remote_slot_handle(self.env.nodes[self.slot_id], self.env, {
                    "type": "request",
                    "exec_id": req["exec_id"],
                    "implementation": impl.to_payload(),
                    "inputs": req["inputs"],
                    "inputs_seq": req["inputs_seq"],
                    "requester": req["requester"],
                })
                if res["accepted"]:
                    self.mc.accept(req, self.now)
                    taken = True
                else:
                    self.mc.reject(req, res["reason"], self.now)

    def _drop_hosted(self, reason: str) -> None:
        h = self.mc.hosted
        remote_slot_handle(self.env.nodes[self.slot_id], self.env, {"type": "abort", "exec_id": h.exec_id})
        self.mc.release(self.now)
        log.info("%s dropped execution %s: %s", self.world_id, h.exec_id, reason)

    def _hosted_child(self):
        if self.slot_id is None:
            return None
        rt = self.env.runtime.get(self.slot_id)
        return getattr(rt, "child", None)

    def _progress(self) -> str:
        child = self._hosted_child()
        return child.nodes[child.root].state.value if child is not None else ""

    # -- bidding ---------------------------------------------------------------

    def team_view(self) -> dict[str, bool]:
        view = {}
        for w in self.bus.membership.live:
            if w == self.world_id:
                view[w] = self.repo.has_slot
            else:
                view[w] = bool(self.repo.adverts.get(w, {}).get("has_slot", False))
        return view

    def _local_running(self, exclude: str | None = None) -> CapabilityRuntime | None:
        for nid, rt in sorted(self.env.runtime.items()):
            if (nid != exclude and isinstance(rt, CapabilityRuntime) and rt.child is not None
                    and self.env.nodes[nid].state is S.RUNNING):
                return rt
        return None

    def local_busy(self, node_id: str) -> bool:
        return self.mc.hosted is not None or self._local_running(node_id) is not None

    def _commitment(self):
        """(task_id, interface, implementation, waypoints, child) of what the body is doing."""
        h = self.mc.hosted
        if h is not None:
            return h.task_id, h.interface, h.implementation, h.waypoints, self._hosted_child()
        rt = self._local_running()
        if rt is not None:
            ctx = self.task_context(rt, self.env)
            return ctx["task_id"], rt.interface.name, rt.assignment.chosen, ctx["waypoints"], rt.child
        return None

    def predicted_position(self):
        """Where this robot will be once its current commitment is done."""
        c = self._commitment()
        if c is not None and c[3]:
            return tuple(c[3][-1])
        return self.body.position

    def remaining_cost(self) -> float:
        _, _, impl_id, waypoints, child = self._commitment()
        impl = self.repo.find(impl_id)
        done = 0
        if child is not None:
            moves = [n for n in child.nodes.values()
                     if n.kind == "action-leaf" and n.options.get("action") == "move_to"]
            done = sum(1 for n in moves if n.state is S.SUCCEEDED)
        rest = [tuple(w) for w in waypoints[done:]]
        left = self.sim.remaining(self.world_id)
        if left is None:
            left = impl.expected_duration if impl else 0.0
        return self.body.distance_cost_factor * path_distance(self.body.position, rest) + left

    def make_bid(self, ann: dict) -> Bid | None:
        if self.body is None:
            return None
        entries = self.repo.query_executable(ann["interface"], self.team_view(), ann["capability_world"])
        c = self._commitment()
        best = None
        for robot, impl_id, feasible in entries:
            if robot != self.world_id or not feasible:
                continue
            impl = self.repo.find(impl_id)
            if c is not None and c[:3] == (ann["task_id"], ann["interface"], impl_id):
                cost = UtilityCost(self.remaining_cost())
            else:
                ctx = TaskContext(ann["task_id"], tuple(tuple(w) for w in ann["waypoints"]), self.predicted_position())
                cost = compute_cost(self.body.distance_cost_factor, impl.expected_duration, ctx)
            bid = Bid(ann["auction"], self.world_id, impl_id, cost, self.now)
            if best is None or bid.key() < best.key():
                best = bid
        return best

    # -- auctioneer side -------------------------------------------------------

    def task_context(self, rt: CapabilityRuntime, env: TreeEnvironment) -> dict:
        target = env.get(rt.node_id, "target", "input")
        waypoints = [list(target)] if target is not None else []
        if rt.interface.finish_at:
            waypoints.append(list(self.sim.map.areas[rt.interface.finish_at]))
        return {
            "task_id": env.get(rt.node_id, "task_id", "input", rt.node_id),
            "waypoints": waypoints,
            "capability_world": self.world_id,
        }

    def _announcement(self, rnd: AuctionRound) -> dict:
        return {
            "auction": rnd.id,
            "interface": rnd.interface,
            "task_id": rnd.context["task_id"],
            "waypoints": rnd.context["waypoints"],
            "capability_world": rnd.context["capability_world"],
            "open": rnd.window[0],
            "close": rnd.window[1],
        }

    def _new_round(self, rt: CapabilityRuntime, env: TreeEnvironment, **kw) -> AuctionRound:
        self._rounds_made += 1
        rid = f"{self.world_id}.{self._incarnation}.{self._rounds_made}"
        rnd = AuctionRound(rid, rt.interface.name, self.task_context(rt, env), self.world_id,
                           capability=rt.node_id, **kw)
        self.rounds[rid] = rnd
        return rnd

    def _start_round(self, rnd: AuctionRound) -> None:
        rnd.start(self.now, self.params.bid_window)
        ann = self._announcement(rnd)
        self._broadcast("AUCTION_ANNOUNCE", ann)
        own = self.make_bid(ann)
        if own is not None:
            rnd.submit(own, self.now)

    def _close(self, rnd: AuctionRound) -> Bid | None:
        winner = rnd.close(self.now)
        if winner is None:
            self._broadcast("AUCTION_VOID", {"auction": rnd.id, "interface": rnd.interface,
                                             "task_id": rnd.context["task_id"], "time": self.now})
        else:
            self._broadcast("AWARD", {"auction": rnd.id, "interface": rnd.interface,
                                      "task_id": rnd.context["task_id"], "winner": winner.bidder,
                                      "implementation": winner.implementation, "cost": winner.cost.cost,
                                      "probe": rnd.probe, "time": self.now})
        return winner

    def open_auction(self, rt, env, urgent: bool = False) -> str:
        rnd = self._new_round(rt, env, urgent=urgent)
        if urgent or auc.on_boundary(self.now, self.params.auction_period):
            self._start_round(rnd)
        return rnd.id

    def auction_outcome(self, round_id: str) -> Any:
        rnd = self.rounds.get(round_id)
        if rnd is None:
            return "void"
        if not rnd.due(self.now):
            return "open"
        winner = self._close(rnd)
        del self.rounds[round_id]
        if winner is None:
            return "void"
        self.round_open[round_id] = rnd.window[0]
        return winner

    def forget_auction(self, round_id: str) -> None:
        self.rounds.pop(round_id, None)
        self.round_open.pop(round_id, None)

    def _capabilities(self):
        for nid, rt in self.env.runtime.items():
            if isinstance(rt, CapabilityRuntime) and nid in self.env.nodes:
                yield self.env.nodes[nid], rt

    def _open_probes(self) -> None:
        running = {}
        for node, rt in self._capabilities():
            rec = rt.record
            if (node.state is S.RUNNING and rec is not None and rec.phase in ("accepted", "running")
                    and rt.switch is None and rt.probe_round is None):
                running[node.id] = rt
        for cid in list(self.policy.last):
            if cid not in running:
                self.policy.forget(cid)
        for cid in self.policy.due(running, self.bus.membership.epoch, self.now):
            rt = running[cid]
            rnd = self._new_round(rt, self.env, probe=True)
            rt.probe_round = rnd.id
            self._start_round(rnd)

    def _close_probes(self) -> None:
        for node, rt in list(self._capabilities()):
            rid = rt.probe_round
            if rid is None:
                continue
            rnd = self.rounds.get(rid)
            if rnd is None:
                rt.probe_round = None
                continue
            if not rnd.due(self.now):
                continue
            winner = self._close(rnd)
            del self.rounds[rid]
            rt.probe_round = None
            rec = rt.record
            if winner is None or rec is None or rec.phase not in ("accepted", "running"):
                continue
            current = rnd.final_bids.get(rec.executor)
            if (current is not None and winner.bidder != rec.executor
                    and auc.should_preempt(winner.cost.cost, current.cost.cost, self.params.hysteresis_factor)):
                ctx = dict(rnd.context, cost=winner.cost.cost, round_open=rnd.window[0])
                rt.switch = self.mc.request(rt.node_id, winner.bidder, winner.implementation,
                                            rnd.context["task_id"], rt.interface.name, ctx,
                                            capability_inputs(node, self.env), self.now)

    # -- binding host ----------------------------------------------------------

    def implementation(self, impl_id: str):
        return self.repo.find(impl_id)

    def check_preconditions(self, impl: CapabilityImplementation) -> bool:
        nearby = self.repo.completed_by(self.bus.nearby(self.world_id))
        return validate_preconditions(impl, self.repo.completed, nearby)

    def request_remote(self, rt: CapabilityRuntime, env: TreeEnvironment):
        ctx = self.task_context(rt, env)
        ctx["cost"] = rt.bid.cost.cost if rt.bid is not None else 0.0
        ctx["round_open"] = self.round_open.pop(rt.bid.auction, self.now) if rt.bid is not None else self.now
        a = rt.assignment
        return self.mc.request(rt.node_id, a.executor_world, a.chosen, ctx["task_id"], rt.interface.name, ctx,
                               capability_inputs(env.nodes[rt.node_id], env), self.now)

    def push_inputs(self, rt: CapabilityRuntime, values: dict) -> int:
        return self.mc.push_inputs(rt.record, values, self.now)

    def abort_remote(self, record, reason: str) -> None:
        self.mc.abort(record, reason, self.now)

    def local_completed(self, interface: str) -> None:
        self.repo.mark_completed(interface)

    def notify(self, rt: CapabilityRuntime, event: str, robot: str | None = None) -> None:
        task_id = self.env.get(rt.node_id, "task_id", "input", rt.node_id)
        self.timeline.append((self.now, robot or self.world_id, event, task_id, rt.interface.name))

    def slot_report(self, request: dict, outputs: dict, root_state, done: bool) -> None:
        self.mc.report(request, outputs, root_state, done, self.now)

    def slot_released(self, request: dict, reason: str) -> None:
        self.mc.released(request, reason, self.now)

    def mission_items(self, source: str):
        return self.sim.mission_items(source)

    def source_exhausted(self, source: str) -> bool:
        return self.sim.source_exhausted(source)

    # -- lifecycle -------------------------------------------------------------

    def leave(self) -> None:
        """Graceful departure: hand back hosted work, abort own requests."""
        self.now = self.sim.now
        apply_action(self.env.root, NodeAction.SHUTDOWN, self.env)
        for rec in list(self.mc.records.values()):
            self.mc.abort(rec, "leaving", self.now)
        self.alive = False

    def root_state(self) -> NodeState:
        return self.env.nodes[self.env.root].state
